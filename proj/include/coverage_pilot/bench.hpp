#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "coverage_pilot/json_io.hpp"
#include "coverage_pilot/mcts.hpp"
#include "coverage_pilot/metrics.hpp"
#include "coverage_pilot/mission.hpp"

namespace cpilot {

struct BenchConfig {
  std::vector<DensityTier> tiers{DensityTier::Sparse, DensityTier::Medium, DensityTier::Dense};
  std::vector<PlannerKind> planners{PlannerKind::Mcts, PlannerKind::SingleShot};
  int trials = 50;
  std::uint64_t seed = 0;
  int width = 10;
  int height = 10;
  /// Waypoint budget per mission; 0 means 4 x cell count.
  int max_steps = 0;
  std::string instruction = "complete coverage";
  MctsConfig search;
  MissionConfig mission;
  int jobs = 1;
  /// When false, latencies are reported as 0 so output is bit-reproducible.
  bool timing = true;
};

struct TrialRecord {
  std::string tier;
  std::string planner;
  int trial = 0;
  std::uint64_t map_seed = 0;
  TrialMetrics metrics;
  std::string status;
  std::string failure;
};

struct BenchRow {
  std::string tier;
  double density = 0.0;
  std::string planner;
  MetricsReport report;
};

struct BenchResult {
  std::vector<BenchRow> rows;  // tier-major, planner-minor, in configuration order
  std::vector<TrialRecord> trials;
};

/// Seed of the map used for `trial` on `tier`; identical across planners.
std::uint64_t bench_map_seed(std::uint64_t seed, DensityTier tier, int trial);

/// Runs every (tier, planner, trial) mission. Planner failures are recorded, not thrown.
BenchResult run_benchmark(const BenchConfig& config, Proposer& proposer);

/// Aligned text table, mean +/- std to two decimals.
std::string format_table_text(const BenchResult& result);
std::string format_table_csv(const BenchResult& result);
Json table_to_json(const BenchResult& result);
/// One JSON object per trial.
std::string format_trial_log(const BenchResult& result);

}  // namespace cpilot
