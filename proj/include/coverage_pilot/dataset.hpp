#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "coverage_pilot/gridworld.hpp"
#include "coverage_pilot/json_io.hpp"
#include "coverage_pilot/mcts.hpp"
#include "coverage_pilot/proposer.hpp"

namespace cpilot {

struct RecordMeta {
  std::size_t episode = 0;
  std::uint64_t seed = 0;
  std::string config_digest;
  std::string proposer;
  int rollouts = 0;
  /// Compliance of the extracted node, needed to rescore it.
  double compliance = 0.0;
  MctsConfig config;

  bool operator==(const RecordMeta& o) const;
};

/// One (map, instruction, best trajectory) training example.
struct DatasetRecord {
  GridMap map;
  std::string instruction;
  Trajectory trajectory;
  double score = 0.0;
  RecordMeta meta;

  bool operator==(const DatasetRecord&) const = default;
};

std::string config_digest(const MctsConfig& config);

/// Prompt half of the instruction-tuning pair: the Generate prompt at launch.
std::string record_input(const DatasetRecord& record);
/// Completion half: the trajectory in the wire format.
std::string record_output(const DatasetRecord& record);

Json record_to_json(const DatasetRecord& record);
/// Throws std::invalid_argument (or MapFormatError) naming the first missing or ill-typed field.
DatasetRecord record_from_json(const Json& j);

/// Rescore with the embedded weights and compliance from the launch coverage.
double rescore(const DatasetRecord& record);

struct CollectConfig {
  std::size_t episodes = 1;
  int width = 10;
  int height = 10;
  std::vector<double> densities{0.05, 0.15, 0.25};
  std::vector<std::string> instructions;  // empty -> default_instruction_pool()
  MctsConfig search;
  std::uint64_t seed = 0;
  int jobs = 1;
};

/// Mixture over the complete / rapid / focused archetypes and the four quadrants.
const std::vector<std::string>& default_instruction_pool();

struct EpisodeOutcome {
  std::size_t episode = 0;
  std::optional<DatasetRecord> record;
  std::optional<std::string> error;  // set when the episode was skipped
};

/// One episode: seeded map and instruction, then a full search. Never throws for search
/// failures; those come back as `error`.
EpisodeOutcome collect_episode(const CollectConfig& config, Proposer& proposer, std::size_t episode);

/// Runs every episode and hands outcomes to `sink` in episode order.
void collect(const CollectConfig& config, Proposer& proposer,
             const std::function<void(const EpisodeOutcome&)>& sink);

enum class Split { Train, Val };
std::string to_string(Split split);

/// Seeded shuffle of [0, n): the first round(ratio * n) positions are training indices.
std::vector<Split> split_assignment(std::size_t n, double train_ratio, std::uint64_t seed);

struct ShardInfo {
  std::string file;
  Split split = Split::Train;
  std::size_t records = 0;
  std::string sha256;
};

struct ExportOptions {
  std::string stem = "dataset";
  std::size_t shard_size = 1000;
  double train_ratio = 0.9;
  std::uint64_t split_seed = 0;
};

std::string sha256_hex(const std::string& bytes);
std::string sha256_file(const std::filesystem::path& path);

/// Streams records into `{stem}.{k:04}.{train|val}` shards under `dir`. A shard is written
/// (temporary file, then rename) as soon as it is full, and the manifest
/// `{stem}.manifest.json` is rewritten after every shard, so an interrupted run leaves a
/// consistent prefix on disk.
class DatasetWriter {
 public:
  DatasetWriter(std::filesystem::path dir, ExportOptions options);
  ~DatasetWriter();
  DatasetWriter(const DatasetWriter&) = delete;
  DatasetWriter& operator=(const DatasetWriter&) = delete;

  void add(const DatasetRecord& record, Split split);
  /// Flushes partial shards and marks the manifest complete.
  void finish();

  const std::vector<ShardInfo>& shards() const { return shards_; }
  std::filesystem::path manifest_path() const;

 private:
  void flush(Split split);
  void write_manifest(bool complete) const;

  std::filesystem::path dir_;
  ExportOptions options_;
  std::vector<std::string> pending_[2];
  int next_index_[2] = {0, 0};
  std::vector<ShardInfo> shards_;
  std::size_t written_[2] = {0, 0};
  bool finished_ = false;
};

/// Splits `records` by seeded shuffle and writes them. Returns the shard list.
std::vector<ShardInfo> export_dataset(const std::vector<DatasetRecord>& records,
                                      const std::filesystem::path& dir, const ExportOptions& options);

struct ImportedDataset {
  std::vector<DatasetRecord> train;
  std::vector<DatasetRecord> val;
  /// train and val merged, ordered by episode.
  std::vector<DatasetRecord> all() const;
};

/// Reads every shard listed in the manifest (a manifest file or a directory holding one).
ImportedDataset import_dataset(const std::filesystem::path& path);

struct RecordIssue {
  std::string file;
  std::size_t line = 0;  // 1-based; 0 for file-level problems
  std::string reason;
};

struct ValidationReport {
  std::size_t records = 0;
  std::size_t passed = 0;
  std::size_t failed = 0;
  std::size_t shards = 0;
  bool manifest_complete = false;
  std::vector<RecordIssue> issues;

  bool ok() const { return failed == 0 && issues.empty(); }
};

/// Rechecks every record: schema, path validity on the embedded map, start cell, the
/// input/output pair, rescoring to 1e-9, shard digests and train/val disjointness.
/// Throws std::runtime_error if the manifest cannot be read.
ValidationReport validate_dataset(const std::filesystem::path& path);

Json to_json(const ValidationReport& report);

}  // namespace cpilot
