#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "coverage_pilot/gridworld.hpp"
#include "coverage_pilot/mcts.hpp"
#include "coverage_pilot/metrics.hpp"
#include "coverage_pilot/proposer.hpp"

namespace cpilot {

enum class MissionStatus { Idle, Planning, Flying, Complete, Failed };

std::string to_string(MissionStatus status);

struct MissionConfig {
  /// Replan after this many executed waypoints even if the plan is not exhausted.
  int replan_horizon = 5;
  /// Coverage fraction at which the mission may complete.
  double target_cr = 0.95;
};

struct PlanOutcome {
  Trajectory plan;  // begins at the current position
  double latency_seconds = 0.0;
  std::optional<std::string> error;
  /// Search diagnostics, when the planner searched.
  int candidates = 0;
};

/// Maps (map, coverage, instruction, position) to a plan starting at the position.
class Planner {
 public:
  virtual ~Planner() = default;
  virtual PlanOutcome plan(const GridMap& map, const CoverageMap& coverage,
                           const Instruction& instruction, Cell position, std::uint64_t seed) = 0;
  virtual std::string name() const = 0;
};

/// Full tree search over the proposer.
class MctsPlanner final : public Planner {
 public:
  MctsPlanner(Proposer& proposer, MctsConfig config, SearchHooks hooks = {})
      : proposer_(proposer), config_(config), hooks_(std::move(hooks)) {}
  PlanOutcome plan(const GridMap& map, const CoverageMap& coverage, const Instruction& instruction,
                   Cell position, std::uint64_t seed) override;
  std::string name() const override { return "mcts"; }

 private:
  Proposer& proposer_;
  MctsConfig config_;
  SearchHooks hooks_;
};

/// One Generate call, no search.
class SingleShotPlanner final : public Planner {
 public:
  explicit SingleShotPlanner(Proposer& proposer) : proposer_(proposer) {}
  PlanOutcome plan(const GridMap& map, const CoverageMap& coverage, const Instruction& instruction,
                   Cell position, std::uint64_t seed) override;
  std::string name() const override { return "single-shot"; }

 private:
  Proposer& proposer_;
};

enum class PlannerKind { Mcts, SingleShot };

std::string to_string(PlannerKind kind);
/// Accepts "mcts" and "single-shot" (also "single" / "singleshot").
PlannerKind parse_planner_kind(const std::string& name);

std::unique_ptr<Planner> make_planner(PlannerKind kind, Proposer& proposer, const MctsConfig& config,
                                      SearchHooks hooks = {});

struct MissionState {
  MissionState(GridMap map_, CoverageMap coverage_, Cell position_, Instruction instruction_)
      : map(std::move(map_)), coverage(std::move(coverage_)), position(position_),
        instruction(std::move(instruction_)) {}

  GridMap map;
  CoverageMap coverage;
  Cell position;
  Instruction instruction;
  int step = 0;
  /// Waypoints still to fly; the current position is not included.
  Trajectory plan;
  MissionStatus status = MissionStatus::Idle;
  std::vector<Cell> history;  // executed waypoints, launch cell excluded
  bool replan_pending = true;
  int steps_since_plan = 0;
  int plan_revision = 0;
  int plans_requested = 0;
  bool collided = false;
  std::optional<std::string> failure;
  std::vector<double> plan_latencies;
  /// Instruction the current plan was produced for.
  std::optional<std::string> planned_instruction;

  double cr() const;  // percent
  double dr() const;  // percent
  bool terminal() const {
    return status == MissionStatus::Complete || status == MissionStatus::Failed;
  }
};

class DisconnectedMap : public std::invalid_argument {
 public:
  explicit DisconnectedMap(std::vector<Cell> unreachable);
  const std::vector<Cell>& unreachable() const { return unreachable_; }

 private:
  std::vector<Cell> unreachable_;
};

/// Mission at t = 0: vehicle on `start`, which counts as visited. Throws DisconnectedMap if
/// some free cell cannot be reached.
MissionState begin_mission(const GridMap& map, Cell start, Instruction instruction);

bool needs_replan(const MissionState& state, const MissionConfig& config);

/// Replaces the plan with planner output. A plan that does not start at the position is
/// requested once more; a second miss, a planner error or an infeasible plan fails the mission.
MissionState plan_step(MissionState state, Planner& planner, const MissionConfig& config,
                       std::uint64_t seed);

/// Flies the first waypoint of the plan and updates coverage.
MissionState execute_step(MissionState state, const MissionConfig& config);

/// Replaces the instruction; a replan happens at the next step boundary.
/// Throws std::logic_error on a failed mission.
MissionState submit_instruction(MissionState state, Instruction instruction);

struct ReplayRecord {
  int step = 0;
  Cell position;
  std::optional<Cell> plan_head;
  double cr = 0.0;
  double dr = 0.0;
  std::string instruction_hash;
  std::string status;

  bool operator==(const ReplayRecord&) const = default;
};

ReplayRecord replay_record(const MissionState& state);
std::string replay_line(const ReplayRecord& record);
void write_replay(const std::vector<ReplayRecord>& records, const std::filesystem::path& path);
std::vector<ReplayRecord> read_replay(const std::filesystem::path& path);

struct MissionRun {
  MissionState state;
  TrialMetrics metrics;
  std::vector<ReplayRecord> replay;
};

using StepObserver = std::function<void(const MissionState&)>;

/// Plan / execute / update until complete, failed, or max_steps waypoints flown.
MissionRun run_mission(const GridMap& map, Cell start, const Instruction& instruction,
                       Planner& planner, const MissionConfig& config, std::uint64_t seed,
                       int max_steps, const StepObserver& observer = {});

TrialMetrics metrics_of(const MissionState& state);

}  // namespace cpilot
