#include "coverage_pilot/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include <openssl/evp.h>

#include "coverage_pilot/parallel.hpp"

namespace cpilot {

namespace fs = std::filesystem;

namespace {

constexpr const char* kFormat = "coverage-pilot-dataset";
constexpr int kFormatVersion = 1;

std::uint64_t episode_seed(std::uint64_t base, std::size_t episode) {
  std::uint64_t x = base ^ (0x9e3779b97f4a7c15ULL * (episode + 1));
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

void write_atomically(const fs::path& path, const std::string& bytes) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << bytes;
    out.flush();
    if (!out) throw std::runtime_error("failed writing " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path resolve_manifest(const fs::path& path) {
  if (fs::is_regular_file(path)) return path;
  if (fs::is_directory(path)) {
    std::vector<fs::path> found;
    for (const auto& entry : fs::directory_iterator(path)) {
      const std::string name = entry.path().filename().string();
      if (name.size() > 14 && name.ends_with(".manifest.json")) found.push_back(entry.path());
    }
    if (found.size() == 1) return found.front();
    if (found.empty()) throw std::runtime_error("no *.manifest.json in " + path.string());
    throw std::runtime_error("several manifests in " + path.string() + "; name one explicitly");
  }
  throw std::runtime_error("dataset path does not exist: " + path.string());
}

Json load_manifest(const fs::path& manifest) {
  Json j = Json::parse(read_file(manifest), nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw std::runtime_error(manifest.string() + ": manifest is not a JSON object");
  if (j.value("format", "") != kFormat) throw std::runtime_error(manifest.string() + ": not a dataset manifest");
  if (!j.contains("shards") || !j["shards"].is_array()) throw std::runtime_error(manifest.string() + ": missing shards");
  return j;
}

template <typename T>
T field(const Json& j, const char* key) {
  if (!j.contains(key)) throw std::invalid_argument(std::string("missing field '") + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw std::invalid_argument(std::string("field '") + key + "' has the wrong type");
  }
}

}  // namespace

bool RecordMeta::operator==(const RecordMeta& o) const {
  return episode == o.episode && seed == o.seed && config_digest == o.config_digest &&
         proposer == o.proposer && rollouts == o.rollouts && compliance == o.compliance &&
         to_json(config) == to_json(o.config);
}

std::string config_digest(const MctsConfig& config) { return hex64(fnv1a64(to_json(config).dump())); }

std::string record_input(const DatasetRecord& record) {
  const Instruction instruction(record.instruction);
  return build_prompt(ProposerAction::generate(), record.map, launch_coverage(record.map), instruction,
                      record.map.start());
}

std::string record_output(const DatasetRecord& record) { return trajectory_to_text(record.trajectory); }

Json record_to_json(const DatasetRecord& r) {
  Json meta{{"episode", r.meta.episode},
            {"seed", r.meta.seed},
            {"config_digest", r.meta.config_digest},
            {"proposer", r.meta.proposer},
            {"rollouts", r.meta.rollouts},
            {"compliance", r.meta.compliance},
            {"config", to_json(r.meta.config)}};
  return Json{{"input", record_input(r)},
              {"output", record_output(r)},
              {"map", map_to_json(r.map)},
              {"instruction", r.instruction},
              {"trajectory", trajectory_to_json(r.trajectory)},
              {"score", r.score},
              {"meta", std::move(meta)}};
}

DatasetRecord record_from_json(const Json& j) {
  if (!j.is_object()) throw std::invalid_argument("record is not an object");
  for (const char* key : {"input", "output", "map", "instruction", "trajectory", "score", "meta"}) {
    if (!j.contains(key)) throw std::invalid_argument(std::string("missing field '") + key + "'");
  }
  field<std::string>(j, "input");
  field<std::string>(j, "output");
  DatasetRecord r{map_from_json(j.at("map"), "map"), field<std::string>(j, "instruction"),
                  trajectory_from_json(j.at("trajectory"), "trajectory"), field<double>(j, "score"), {}};
  if (r.instruction.find_first_not_of(" \t\r\n") == std::string::npos) {
    throw std::invalid_argument("field 'instruction' is empty");
  }
  const Json& m = j.at("meta");
  if (!m.is_object()) throw std::invalid_argument("field 'meta' is not an object");
  r.meta.episode = field<std::size_t>(m, "episode");
  r.meta.seed = field<std::uint64_t>(m, "seed");
  r.meta.config_digest = field<std::string>(m, "config_digest");
  r.meta.proposer = field<std::string>(m, "proposer");
  r.meta.rollouts = field<int>(m, "rollouts");
  r.meta.compliance = field<double>(m, "compliance");
  if (!m.contains("config")) throw std::invalid_argument("missing field 'meta.config'");
  r.meta.config = mcts_config_from_json(m.at("config"));
  return r;
}

double rescore(const DatasetRecord& record) {
  const bool valid = validate_path(record.map, record.trajectory).valid && !record.trajectory.empty() &&
                     record.trajectory.front() == record.map.start();
  return score_trajectory(record.trajectory, valid, record.map, launch_coverage(record.map),
                          record.meta.config.weights, record.meta.compliance);
}

const std::vector<std::string>& default_instruction_pool() {
  static const std::vector<std::string> pool{
      "complete coverage",
      "cover the whole area efficiently",
      "search the top-left quadrant carefully",
      "search the top-right quadrant carefully",
      "focus on the bottom-left area",
      "thoroughly inspect the bottom-right quadrant",
      "pass through the top-left quickly",
      "rapid traversal of the bottom-right area",
  };
  return pool;
}

EpisodeOutcome collect_episode(const CollectConfig& config, Proposer& proposer, std::size_t episode) {
  EpisodeOutcome out;
  out.episode = episode;
  const std::uint64_t seed = episode_seed(config.seed, episode);
  const auto& pool = config.instructions.empty() ? default_instruction_pool() : config.instructions;
  if (config.densities.empty()) throw std::invalid_argument("collect needs at least one obstacle density");

  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick_density(0, config.densities.size() - 1);
  std::uniform_int_distribution<std::size_t> pick_instruction(0, pool.size() - 1);
  const double density = config.densities[pick_density(rng)];
  const std::string& text = pool[pick_instruction(rng)];

  try {
    const GridMap map = generate_map(config.width, config.height, density, seed);
    const CoverageMap coverage = launch_coverage(map);
    const SearchInput input{map, coverage, Instruction(text), map.start()};
    const SearchResult result = run_search(input, proposer, config.search, seed);
    const SearchNode& best = result.tree.node(result.best_candidate().node);
    if (!best.valid) {
      out.error = result.error ? "search aborted: " + *result.error : "no valid trajectory found";
      return out;
    }
    DatasetRecord record{map, text, result.best, result.best_q, {}};
    record.meta.episode = episode;
    record.meta.seed = seed;
    record.meta.config_digest = config_digest(config.search);
    record.meta.proposer = proposer.id();
    record.meta.rollouts = config.search.n_rollouts;
    record.meta.compliance = best.compliance;
    record.meta.config = config.search;
    out.record = std::move(record);
  } catch (const std::exception& e) {
    out.error = e.what();
  }
  return out;
}

void collect(const CollectConfig& config, Proposer& proposer,
             const std::function<void(const EpisodeOutcome&)>& sink) {
  if (config.episodes < 1) throw std::invalid_argument("episodes must be at least 1");
  config.search.validate();
  parallel_ordered<EpisodeOutcome>(
      config.episodes, config.jobs,
      [&](std::size_t i) { return collect_episode(config, proposer, i); },
      [&](std::size_t, EpisodeOutcome&& o) { sink(o); });
}

std::string to_string(Split split) { return split == Split::Train ? "train" : "val"; }

std::vector<Split> split_assignment(std::size_t n, double train_ratio, std::uint64_t seed) {
  if (!(train_ratio >= 0.0 && train_ratio <= 1.0)) throw std::invalid_argument("split ratio must lie in [0, 1]");
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::mt19937_64 rng(seed);
  // Fisher-Yates with an explicit distribution so the permutation does not depend on the
  // standard library's std::shuffle.
  for (std::size_t i = n; i > 1; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i - 1);
    std::swap(order[i - 1], order[pick(rng)]);
  }
  const auto n_train = static_cast<std::size_t>(std::llround(train_ratio * static_cast<double>(n)));
  std::vector<Split> out(n, Split::Val);
  for (std::size_t k = 0; k < n_train; ++k) out[order[k]] = Split::Train;
  return out;
}

std::string sha256_hex(const std::string& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("SHA-256 computation failed");
  }
  std::ostringstream out;
  for (unsigned int i = 0; i < len; ++i) out << std::hex << std::setw(2) << std::setfill('0') << int(digest[i]);
  return out.str();
}

std::string sha256_file(const fs::path& path) { return sha256_hex(read_file(path)); }

DatasetWriter::DatasetWriter(fs::path dir, ExportOptions options)
    : dir_(std::move(dir)), options_(std::move(options)) {
  if (options_.shard_size < 1) throw std::invalid_argument("shard size must be at least 1");
  if (!(options_.train_ratio >= 0.0 && options_.train_ratio <= 1.0)) {
    throw std::invalid_argument("split ratio must lie in [0, 1]");
  }
  std::error_code ec;
  fs::create_directories(dir_, ec);
  if (!fs::is_directory(dir_)) throw std::runtime_error("cannot create output directory " + dir_.string());
  write_manifest(false);
}

DatasetWriter::~DatasetWriter() = default;

fs::path DatasetWriter::manifest_path() const { return dir_ / (options_.stem + ".manifest.json"); }

void DatasetWriter::add(const DatasetRecord& record, Split split) {
  if (finished_) throw std::logic_error("dataset writer already finished");
  auto& buf = pending_[static_cast<int>(split)];
  buf.push_back(record_to_json(record).dump());
  if (buf.size() >= options_.shard_size) flush(split);
}

void DatasetWriter::flush(Split split) {
  const int s = static_cast<int>(split);
  if (pending_[s].empty()) return;
  char suffix[16];
  std::snprintf(suffix, sizeof suffix, ".%04d.", next_index_[s]++);
  const std::string name = options_.stem + suffix + to_string(split);
  std::string bytes;
  for (const std::string& line : pending_[s]) bytes += line + "\n";
  write_atomically(dir_ / name, bytes);
  shards_.push_back({name, split, pending_[s].size(), sha256_hex(bytes)});
  written_[s] += pending_[s].size();
  pending_[s].clear();
  write_manifest(false);
}

void DatasetWriter::finish() {
  if (finished_) return;
  flush(Split::Train);
  flush(Split::Val);
  write_manifest(true);
  finished_ = true;
}

void DatasetWriter::write_manifest(bool complete) const {
  Json shards = Json::array();
  for (const ShardInfo& s : shards_) {
    shards.push_back({{"file", s.file}, {"split", to_string(s.split)}, {"records", s.records}, {"sha256", s.sha256}});
  }
  Json j{{"format", kFormat},
         {"version", kFormatVersion},
         {"stem", options_.stem},
         {"prompt_version", std::string(prompt_template_version())},
         {"shard_size", options_.shard_size},
         {"train_ratio", options_.train_ratio},
         {"split_seed", options_.split_seed},
         {"complete", complete},
         {"records", {{"train", written_[0]}, {"val", written_[1]}}},
         {"shards", std::move(shards)}};
  write_atomically(manifest_path(), j.dump(2) + "\n");
}

std::vector<ShardInfo> export_dataset(const std::vector<DatasetRecord>& records, const fs::path& dir,
                                      const ExportOptions& options) {
  const std::vector<Split> splits = split_assignment(records.size(), options.train_ratio, options.split_seed);
  DatasetWriter writer(dir, options);
  for (std::size_t i = 0; i < records.size(); ++i) writer.add(records[i], splits[i]);
  writer.finish();
  return writer.shards();
}

std::vector<DatasetRecord> ImportedDataset::all() const {
  std::vector<DatasetRecord> out = train;
  out.insert(out.end(), val.begin(), val.end());
  std::stable_sort(out.begin(), out.end(),
                   [](const DatasetRecord& a, const DatasetRecord& b) { return a.meta.episode < b.meta.episode; });
  return out;
}

ImportedDataset import_dataset(const fs::path& path) {
  const fs::path manifest = resolve_manifest(path);
  const Json j = load_manifest(manifest);
  ImportedDataset out;
  for (const Json& shard : j["shards"]) {
    const std::string file = shard.at("file").get<std::string>();
    std::ifstream in(manifest.parent_path() / file, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read shard " + file);
    auto& dest = shard.at("split").get<std::string>() == "train" ? out.train : out.val;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty()) continue;
      Json rec = Json::parse(line, nullptr, false);
      if (rec.is_discarded()) throw std::runtime_error(file + ":" + std::to_string(lineno) + ": invalid JSON");
      try {
        dest.push_back(record_from_json(rec));
      } catch (const std::exception& e) {
        throw std::runtime_error(file + ":" + std::to_string(lineno) + ": " + e.what());
      }
    }
  }
  return out;
}

ValidationReport validate_dataset(const fs::path& path) {
  const fs::path manifest = resolve_manifest(path);
  const Json j = load_manifest(manifest);
  ValidationReport report;
  report.manifest_complete = j.value("complete", false);
  std::map<std::size_t, std::string> seen;  // episode -> split of first occurrence

  for (const Json& shard : j["shards"]) {
    ++report.shards;
    const std::string file = shard.value("file", "");
    const std::string split = shard.value("split", "");
    const fs::path shard_path = manifest.parent_path() / file;
    if (!fs::is_regular_file(shard_path)) {
      report.issues.push_back({file, 0, "shard listed in manifest is missing"});
      continue;
    }
    const std::string bytes = read_file(shard_path);
    if (sha256_hex(bytes) != shard.value("sha256", "")) {
      report.issues.push_back({file, 0, "sha256 digest does not match manifest"});
    }
    std::istringstream in(bytes);
    std::string line;
    std::size_t lineno = 0, count = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty()) continue;
      ++count;
      ++report.records;
      auto flag = [&](const std::string& reason) {
        report.issues.push_back({file, lineno, reason});
      };
      const std::size_t issues_before = report.issues.size();
      Json rec = Json::parse(line, nullptr, false);
      if (rec.is_discarded()) {
        flag("schema: line is not valid JSON");
      } else {
        try {
          const DatasetRecord r = record_from_json(rec);
          const ValidityReport v = validate_path(r.map, r.trajectory);
          for (const IndexedCell& c : v.collisions) {
            flag("collision: waypoint " + std::to_string(c.index) + " at " + to_string(c.cell) + " is an obstacle");
          }
          for (std::size_t b : v.breaks) flag("connectivity: break at waypoint " + std::to_string(b));
          for (const IndexedCell& c : v.out_of_bounds) {
            flag("bounds: waypoint " + std::to_string(c.index) + " at " + to_string(c.cell) + " is outside the map");
          }
          if (r.trajectory.empty()) {
            flag("trajectory: empty");
          } else if (r.trajectory.front() != r.map.start()) {
            flag("trajectory: does not begin at the map start " + to_string(r.map.start()));
          }
          if (rec.at("output").get<std::string>() != record_output(r)) flag("pair: output does not match trajectory");
          if (rec.at("input").get<std::string>() != record_input(r)) flag("pair: input does not match map and instruction");
          if (r.meta.config_digest != config_digest(r.meta.config)) flag("meta: config digest mismatch");
          if (v.valid) {
            const double fresh = rescore(r);
            if (std::abs(fresh - r.score) > 1e-9) {
              std::ostringstream msg;
              msg << std::setprecision(12) << "score: stored " << r.score << " but rescoring gives " << fresh;
              flag(msg.str());
            }
          }
          auto [it, inserted] = seen.emplace(r.meta.episode, split);
          if (!inserted) {
            flag("split: episode " + std::to_string(r.meta.episode) + " also appears in " + it->second);
          }
        } catch (const std::exception& e) {
          flag(std::string("schema: ") + e.what());
        }
      }
      if (report.issues.size() == issues_before) ++report.passed; else ++report.failed;
    }
    if (count != shard.value("records", std::size_t{0})) {
      report.issues.push_back({file, 0, "record count does not match manifest"});
    }
  }
  return report;
}

Json to_json(const ValidationReport& report) {
  Json issues = Json::array();
  for (const RecordIssue& i : report.issues) issues.push_back({{"file", i.file}, {"line", i.line}, {"reason", i.reason}});
  return Json{{"ok", report.ok()},
              {"records", report.records},
              {"passed", report.passed},
              {"failed", report.failed},
              {"shards", report.shards},
              {"manifest_complete", report.manifest_complete},
              {"issues", std::move(issues)}};
}

}  // namespace cpilot
