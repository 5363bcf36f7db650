#include "coverage_pilot/mission.hpp"

#include <algorithm>
#include <chrono>
#include <cctype>
#include <fstream>
#include <numeric>
#include <sstream>

#include "coverage_pilot/json_io.hpp"

namespace cpilot {

namespace {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t x = seed + 0x9e3779b97f4a7c15ULL * (salt + 1);
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

MissionState fail(MissionState state, std::string cause) {
  state.status = MissionStatus::Failed;
  state.failure = std::move(cause);
  state.plan = {};
  return state;
}

// Marks the mission Complete when it has nothing left to do.
void settle_completion(MissionState& state, const MissionConfig& config) {
  if (state.terminal()) return;
  const double cr = state.cr();
  if (cr >= 100.0 || (cr >= 100.0 * config.target_cr && state.plan.empty() && !state.replan_pending)) {
    state.status = MissionStatus::Complete;
    state.plan = {};
  }
}

std::string describe_cells(const std::vector<Cell>& cells, std::size_t limit = 12) {
  std::string out;
  for (std::size_t i = 0; i < cells.size() && i < limit; ++i) {
    if (i) out += ", ";
    out += to_string(cells[i]);
  }
  if (cells.size() > limit) out += ", ... (" + std::to_string(cells.size()) + " cells)";
  return out;
}

}  // namespace

std::string to_string(MissionStatus status) {
  switch (status) {
    case MissionStatus::Idle: return "idle";
    case MissionStatus::Planning: return "planning";
    case MissionStatus::Flying: return "flying";
    case MissionStatus::Complete: return "complete";
    case MissionStatus::Failed: return "failed";
  }
  return "unknown";
}

std::string to_string(PlannerKind kind) { return kind == PlannerKind::Mcts ? "mcts" : "single-shot"; }

PlannerKind parse_planner_kind(const std::string& name) {
  std::string n = name;
  std::transform(n.begin(), n.end(), n.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (n == "mcts") return PlannerKind::Mcts;
  if (n == "single-shot" || n == "single" || n == "singleshot") return PlannerKind::SingleShot;
  throw std::invalid_argument("unknown planner '" + name + "' (expected mcts or single-shot)");
}

std::unique_ptr<Planner> make_planner(PlannerKind kind, Proposer& proposer, const MctsConfig& config,
                                      SearchHooks hooks) {
  if (kind == PlannerKind::Mcts) return std::make_unique<MctsPlanner>(proposer, config, std::move(hooks));
  return std::make_unique<SingleShotPlanner>(proposer);
}

double MissionState::cr() const {
  const CoverageSets sets = coverage_sets(coverage, map);
  return sets.free == 0 ? 0.0 : 100.0 * sets.visited / sets.free;
}

double MissionState::dr() const { return compute_dr(coverage); }

DisconnectedMap::DisconnectedMap(std::vector<Cell> unreachable)
    : std::invalid_argument("map is disconnected; unreachable free cells: " + describe_cells(unreachable)),
      unreachable_(std::move(unreachable)) {}

PlanOutcome MctsPlanner::plan(const GridMap& map, const CoverageMap& coverage,
                              const Instruction& instruction, Cell position, std::uint64_t seed) {
  PlanOutcome out;
  const SearchInput input{map, coverage, instruction, position};
  SearchResult result;
  try {
    result = run_search(input, proposer_, config_, seed, hooks_);
  } catch (const BackendUnavailable& e) {
    out.error = std::string("proposer unavailable: ") + e.what();
    return out;
  }
  out.candidates = static_cast<int>(result.candidates.size());
  out.latency_seconds = result.proposer_latency_seconds;

  // The search optimum can be an invalid node when every valid candidate scored below zero.
  // Flying an infeasible plan is never acceptable, so prefer the best valid candidate.
  const Candidate* chosen = &result.best_candidate();
  if (!result.tree.node(chosen->node).valid) {
    for (const Candidate& c : result.candidates) {
      if (!result.tree.node(c.node).valid) continue;
      if (!result.tree.node(chosen->node).valid || c.score > chosen->score) chosen = &c;
    }
  }
  out.plan = chosen->trajectory;
  if (result.error && !result.tree.node(chosen->node).valid) out.error = *result.error;
  return out;
}

PlanOutcome SingleShotPlanner::plan(const GridMap& map, const CoverageMap& coverage,
                                    const Instruction& instruction, Cell position,
                                    std::uint64_t seed) {
  PlanOutcome out;
  const ProposalContext ctx{map, coverage, instruction, position, seed};
  try {
    ProposerReply reply = proposer_.propose(ProposerAction::generate(), ctx);
    out.latency_seconds = reply.latency_seconds;
    if (!reply.usable() || !reply.trajectory) {
      out.error = "unparseable proposal: " + reply.parse_error.value_or("no trajectory");
      return out;
    }
    out.plan = std::move(*reply.trajectory);
  } catch (const BackendUnavailable& e) {
    out.error = std::string("proposer unavailable: ") + e.what();
  }
  out.candidates = 1;
  return out;
}

MissionState begin_mission(const GridMap& map, Cell start, Instruction instruction) {
  if (!map.is_free(start)) throw std::invalid_argument("mission start " + to_string(start) + " is not a free cell");
  GridMap rooted = start == map.start() ? map : GridMap(map.occupancy(), start);
  if (auto unreachable = unreachable_free_cells(rooted); !unreachable.empty()) {
    throw DisconnectedMap(std::move(unreachable));
  }
  CoverageMap coverage = launch_coverage(rooted);
  return MissionState(std::move(rooted), std::move(coverage), start, std::move(instruction));
}

bool needs_replan(const MissionState& state, const MissionConfig& config) {
  if (state.terminal()) return false;
  return state.status == MissionStatus::Idle || state.replan_pending || state.plan.empty() ||
         state.steps_since_plan >= config.replan_horizon;
}

MissionState plan_step(MissionState state, Planner& planner, const MissionConfig& config,
                       std::uint64_t seed) {
  if (state.terminal()) return state;
  state.status = MissionStatus::Planning;

  PlanOutcome outcome;
  for (int attempt = 0; attempt < 2; ++attempt) {
    const auto t0 = std::chrono::steady_clock::now();
    outcome = planner.plan(state.map, state.coverage, state.instruction, state.position,
                           mix_seed(seed, static_cast<std::uint64_t>(attempt)));
    const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - t0;
    state.plan_latencies.push_back(elapsed.count());
    state.plans_requested += 1;
    if (outcome.error) return fail(std::move(state), "planner failure: " + *outcome.error);
    if (!outcome.plan.empty() && outcome.plan.front() == state.position) break;
    if (attempt == 1) {
      return fail(std::move(state), "planner returned a plan that does not start at the current position " +
                                        to_string(state.position));
    }
  }

  const ValidityReport report = validate_path(state.map, outcome.plan);
  if (!report.valid) {
    state.collided = !report.collisions.empty() || !report.out_of_bounds.empty();
    return fail(std::move(state), "planner returned an infeasible plan: " + describe_violations(report));
  }

  state.plan = Trajectory(std::vector<Cell>(outcome.plan.begin() + 1, outcome.plan.end()));
  state.replan_pending = false;
  state.steps_since_plan = 0;
  state.plan_revision += 1;
  state.planned_instruction = state.instruction.text;
  state.status = MissionStatus::Flying;
  settle_completion(state, config);
  if (state.status == MissionStatus::Flying && state.plan.empty()) {
    return fail(std::move(state), "planner produced no move with coverage below target");
  }
  return state;
}

MissionState execute_step(MissionState state, const MissionConfig& config) {
  if (state.terminal()) return state;
  if (state.plan.empty()) throw std::logic_error("execute_step called with an empty plan");
  const Cell next = state.plan.front();
  if (manhattan(next, state.position) != 1) {
    return fail(std::move(state), "waypoint " + to_string(next) + " is not adjacent to " + to_string(state.position));
  }
  if (!state.map.is_free(next)) {
    state.collided = true;
    return fail(std::move(state), "waypoint " + to_string(next) + " is inside a no-fly zone");
  }
  state.position = next;
  state.coverage = state.coverage.visited(next);
  state.step += 1;
  state.history.push_back(next);
  state.plan.waypoints.erase(state.plan.waypoints.begin());
  state.steps_since_plan += 1;
  state.status = MissionStatus::Flying;
  settle_completion(state, config);
  return state;
}

MissionState submit_instruction(MissionState state, Instruction instruction) {
  if (state.status == MissionStatus::Failed) throw std::logic_error("mission has failed; instruction refused");
  instruction.issued_at = state.step;
  state.instruction = std::move(instruction);
  if (state.status == MissionStatus::Complete) {
    if (state.cr() >= 100.0) return state;
    state.status = MissionStatus::Flying;
  }
  state.replan_pending = true;
  return state;
}

ReplayRecord replay_record(const MissionState& state) {
  ReplayRecord r;
  r.step = state.step;
  r.position = state.position;
  if (!state.plan.empty()) r.plan_head = state.plan.front();
  r.cr = state.cr();
  r.dr = state.dr();
  r.instruction_hash = hex64(fnv1a64(state.instruction.text));
  r.status = to_string(state.status);
  return r;
}

std::string replay_line(const ReplayRecord& record) {
  Json j{{"step", record.step},
         {"position", cell_to_json(record.position)},
         {"plan_head", record.plan_head ? cell_to_json(*record.plan_head) : Json(nullptr)},
         {"cr", record.cr},
         {"dr", record.dr},
         {"instruction_hash", record.instruction_hash},
         {"status", record.status}};
  return j.dump();
}

void write_replay(const std::vector<ReplayRecord>& records, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write replay file " + path.string());
  for (const ReplayRecord& r : records) out << replay_line(r) << "\n";
  if (!out) throw std::runtime_error("failed writing replay file " + path.string());
}

std::vector<ReplayRecord> read_replay(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read replay file " + path.string());
  std::vector<ReplayRecord> records;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const std::string where = "line " + std::to_string(lineno);
    Json j = Json::parse(line, nullptr, false);
    if (j.is_discarded()) throw std::runtime_error(where + ": not a JSON object");
    ReplayRecord r;
    r.step = j.at("step").get<int>();
    r.position = cell_from_json(j.at("position"), where + ".position");
    if (!j.at("plan_head").is_null()) r.plan_head = cell_from_json(j.at("plan_head"), where + ".plan_head");
    r.cr = j.at("cr").get<double>();
    r.dr = j.at("dr").get<double>();
    r.instruction_hash = j.at("instruction_hash").get<std::string>();
    r.status = j.at("status").get<std::string>();
    records.push_back(std::move(r));
  }
  return records;
}

TrialMetrics metrics_of(const MissionState& state) {
  TrialMetrics m;
  m.cr = state.cr();
  m.dr = state.dr();
  m.collided = state.collided;
  m.failed = state.status != MissionStatus::Complete;
  m.steps = state.step;
  if (!state.plan_latencies.empty()) {
    m.latency_seconds = std::accumulate(state.plan_latencies.begin(), state.plan_latencies.end(), 0.0) /
                        static_cast<double>(state.plan_latencies.size());
  }
  return m;
}

MissionRun run_mission(const GridMap& map, Cell start, const Instruction& instruction,
                       Planner& planner, const MissionConfig& config, std::uint64_t seed,
                       int max_steps, const StepObserver& observer) {
  MissionRun run{begin_mission(map, start, instruction), {}, {}};
  MissionState& state = run.state;
  settle_completion(state, config);
  run.replay.push_back(replay_record(state));
  if (observer) observer(state);

  while (!state.terminal() && state.step < max_steps) {
    if (needs_replan(state, config)) {
      state = plan_step(std::move(state), planner, config,
                        mix_seed(seed, static_cast<std::uint64_t>(state.plans_requested) + 1000));
      if (observer) observer(state);
      if (state.terminal()) break;
    }
    state = execute_step(std::move(state), config);
    run.replay.push_back(replay_record(state));
    if (observer) observer(state);
  }
  if (state.terminal() && run.replay.back().status != to_string(state.status)) {
    run.replay.push_back(replay_record(state));
  }
  run.metrics = metrics_of(state);
  return run;
}

}  // namespace cpilot
