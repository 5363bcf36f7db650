// coverage-pilot: simulate, search, collect, bench, serve, validate.
//
// Exit codes: 0 success, 1 mission or search failure, 2 configuration error.

#include <csignal>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <pthread.h>

#include "coverage_pilot/bench.hpp"
#include "coverage_pilot/dataset.hpp"
#include "coverage_pilot/gridworld.hpp"
#include "coverage_pilot/json_io.hpp"
#include "coverage_pilot/mcts.hpp"
#include "coverage_pilot/mission.hpp"
#include "coverage_pilot/proposer.hpp"
#include "coverage_pilot/service.hpp"

#include <CLI11.hpp>
// After Eigen: <resolv.h> (pulled in by httplib) defines a macro named _res.
#include <httplib.h>

namespace {

using namespace cpilot;

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitConfig = 2;

/// Raised for anything the operator must fix before rerunning.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Common {
  std::uint64_t seed = 0;
  std::string format = "plain";
  std::string backend = "heuristic";
  bool structured() const { return format == "json"; }
};

struct SearchFlags {
  MctsConfig config;
  void add(CLI::App* cmd) {
    cmd->add_option("--omega", config.omega, "UCT exploration weight")->capture_default_str();
    cmd->add_option("--alpha", config.alpha, "Back-propagation blend")->capture_default_str();
    cmd->add_option("--rollouts", config.n_rollouts, "Rollouts per search")->capture_default_str();
    cmd->add_option("--max-depth", config.max_depth, "Maximum tree depth")->capture_default_str();
    cmd->add_option("--terminal-cr", config.terminal_cr, "Coverage fraction that ends a rollout")
        ->capture_default_str();
    cmd->add_option("--c1", config.weights.c1, "Coverage weight")->capture_default_str();
    cmd->add_option("--c2", config.weights.c2, "Revisit penalty weight")->capture_default_str();
    cmd->add_option("--c3", config.weights.c3, "Compliance weight")->capture_default_str();
  }
};

struct MapFlags {
  std::string map_file;
  int width = 10;
  int height = 10;
  double density = 0.15;
  std::optional<std::uint64_t> map_seed;

  void add(CLI::App* cmd) {
    cmd->add_option("--map", map_file, "Map file (JSON); overrides the generator flags");
    cmd->add_option("--width", width, "Generated map width")->capture_default_str();
    cmd->add_option("--height", height, "Generated map height")->capture_default_str();
    cmd->add_option("--density", density, "Generated obstacle density")->capture_default_str();
    cmd->add_option("--map-seed", map_seed, "Generator seed (defaults to --seed)");
  }

  GridMap resolve(std::uint64_t seed) const {
    try {
      if (!map_file.empty()) return load_map(map_file);
      return generate_map(width, height, density, map_seed.value_or(seed));
    } catch (const std::exception& e) {
      throw ConfigError(e.what());
    }
  }
};

void add_common(CLI::App* cmd, Common& common) {
  cmd->add_option("--seed", common.seed, "Seed for every random choice")->capture_default_str();
  cmd->add_option("--format", common.format, "Output format")
      ->check(CLI::IsMember({"plain", "json"}))
      ->capture_default_str();
  cmd->add_option("--backend", common.backend, "Proposer backend")
      ->check(CLI::IsMember({"heuristic", "remote"}))
      ->capture_default_str();
}

std::unique_ptr<Proposer> make_proposer(const std::string& backend) {
  if (backend == "remote") {
    try {
      return std::make_unique<RemoteProposer>(RemoteConfig::from_env());
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("remote backend: ") + e.what());
    }
  }
  return std::make_unique<HeuristicProposer>();
}

Instruction make_instruction(const std::string& text) {
  try {
    return Instruction(text);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("instruction: ") + e.what());
  }
}

void validate_search(const MctsConfig& config) {
  try {
    config.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

std::string fixed(double v, int digits = 2) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << text;
}

// --- simulate -------------------------------------------------------------------------

struct SimulateCmd {
  Common common;
  MapFlags map;
  SearchFlags search;
  std::string instruction = "complete coverage";
  std::string planner = "mcts";
  std::string replay_out;
  int max_steps = 0;
  int replan_horizon = MissionConfig{}.replan_horizon;
  double target_cr = MissionConfig{}.target_cr;
  bool no_timing = false;
  bool verbose = false;

  void add(CLI::App& app) {
    auto* cmd = app.add_subcommand("simulate", "Fly one planned mission in the simulator");
    add_common(cmd, common);
    map.add(cmd);
    search.add(cmd);
    cmd->add_option("--instruction", instruction, "Operator instruction")->capture_default_str();
    cmd->add_option("--planner", planner, "mcts or single-shot")->capture_default_str();
    cmd->add_option("--replay-out", replay_out, "Write the per-step replay log here");
    cmd->add_option("--max-steps", max_steps, "Waypoint budget (0: 4 x cell count)");
    cmd->add_option("--replan-horizon", replan_horizon, "Waypoints executed between plans")->capture_default_str();
    cmd->add_option("--target-cr", target_cr, "Coverage fraction that completes the mission")->capture_default_str();
    cmd->add_flag("--no-timing", no_timing, "Report planning latency as 0 for reproducible output");
    cmd->add_flag("-v,--verbose", verbose, "Print every executed step");
    cmd->callback([this] { run(); });
  }

  int code = kExitOk;

  void run() {
    validate_search(search.config);
    const GridMap grid = map.resolve(common.seed);
    const Instruction instr = make_instruction(instruction);
    PlannerKind kind;
    try {
      kind = parse_planner_kind(planner);
    } catch (const std::exception& e) {
      throw ConfigError(e.what());
    }
    if (replan_horizon < 1) throw ConfigError("--replan-horizon must be >= 1");
    if (!(target_cr > 0.0 && target_cr <= 1.0)) throw ConfigError("--target-cr must lie in (0, 1]");
    auto proposer = make_proposer(common.backend);
    auto mission_planner = make_planner(kind, *proposer, search.config);
    const MissionConfig config{replan_horizon, target_cr};
    const int budget = max_steps > 0 ? max_steps : 4 * grid.width() * grid.height();

    StepObserver observer;
    if (verbose && !common.structured()) {
      observer = [](const MissionState& s) {
        std::cout << "step " << s.step << "  " << to_string(s.position) << "  " << to_string(s.status)
                  << "  cr " << fixed(s.cr()) << "\n";
      };
    }
    std::optional<MissionRun> result;
    try {
      result = run_mission(grid, grid.start(), instr, *mission_planner, config, common.seed, budget, observer);
    } catch (const DisconnectedMap& e) {
      throw ConfigError(e.what());
    }
    MissionRun& run = *result;
    if (!replay_out.empty()) write_replay(run.replay, replay_out);
    if (no_timing) run.metrics.latency_seconds = 0.0;

    const auto& m = run.metrics;
    if (common.structured()) {
      Json out{{"status", to_string(run.state.status)},
               {"cr", m.cr},
               {"dr", m.dr},
               {"steps", m.steps},
               {"collided", m.collided},
               {"plans", run.state.plans_requested},
               {"latency_seconds", m.latency_seconds},
               {"failure", run.state.failure ? Json(*run.state.failure) : Json(nullptr)}};
      std::cout << out.dump() << "\n";
    } else {
      std::cout << "status   " << to_string(run.state.status) << "\n"
                << "CR       " << fixed(m.cr, 1) << "\n"
                << "DR       " << fixed(m.dr, 1) << "\n"
                << "steps    " << m.steps << "\n"
                << "plans    " << run.state.plans_requested << "\n"
                << "IL (s)   " << fixed(m.latency_seconds, 4) << "\n";
      if (run.state.failure) std::cout << "failure  " << *run.state.failure << "\n";
    }
    code = run.state.status == MissionStatus::Complete ? kExitOk : kExitFailure;
  }
};

// --- search ---------------------------------------------------------------------------

struct SearchCmd {
  Common common;
  MapFlags map;
  SearchFlags search;
  std::string instruction = "complete coverage";
  std::string rollout_log;
  int code = kExitOk;

  void add(CLI::App& app) {
    auto* cmd = app.add_subcommand("search", "Run one tree search from the launch cell and print the best plan");
    add_common(cmd, common);
    map.add(cmd);
    search.add(cmd);
    cmd->add_option("--instruction", instruction, "Operator instruction")->capture_default_str();
    cmd->add_option("--rollout-log", rollout_log, "Write one JSON line per tree event here");
    cmd->callback([this] { run(); });
  }

  void run() {
    validate_search(search.config);
    const GridMap grid = map.resolve(common.seed);
    const Instruction instr = make_instruction(instruction);
    auto proposer = make_proposer(common.backend);
    const CoverageMap coverage = launch_coverage(grid);
    SearchResult result;
    try {
      result = run_search({grid, coverage, instr, grid.start()}, *proposer, search.config, common.seed);
    } catch (const BackendUnavailable& e) {
      std::cerr << "error: " << e.what() << "\n";
      code = kExitFailure;
      return;
    }
    if (!rollout_log.empty()) write_rollout_log(result, rollout_log);
    const Candidate& best = result.best_candidate();
    const bool usable = result.tree.node(best.node).valid;
    if (common.structured()) {
      Json candidates = Json::array();
      for (const Candidate& c : result.candidates) {
        candidates.push_back(Json{{"rollout", c.rollout},
                                  {"node", c.node},
                                  {"score", c.score},
                                  {"valid", result.tree.node(c.node).valid}});
      }
      std::cout << Json{{"best", trajectory_to_json(result.best)},
                        {"best_q", result.best_q},
                        {"valid", usable},
                        {"candidates", candidates},
                        {"error", result.error ? Json(*result.error) : Json(nullptr)}}
                       .dump()
                << "\n";
    } else {
      std::cout << "best Q      " << fixed(result.best_q, 4) << "\n"
                << "candidates  " << result.candidates.size() << "\n"
                << "waypoints   " << result.best.size() << "\n"
                << "valid       " << (usable ? "yes" : "no") << "\n"
                << "trajectory  " << trajectory_to_text(result.best) << "\n";
      if (result.error) std::cout << "error       " << *result.error << "\n";
    }
    code = usable ? kExitOk : kExitFailure;
  }
};

// --- collect --------------------------------------------------------------------------

struct CollectCmd {
  Common common;
  SearchFlags search;
  std::size_t episodes = 10;
  std::string out = "dataset";
  int width = 10;
  int height = 10;
  std::vector<double> densities{0.05, 0.15, 0.25};
  std::size_t shard_size = 1000;
  double train_ratio = 0.9;
  std::string stem = "dataset";
  int jobs = 1;
  int code = kExitOk;

  void add(CLI::App& app) {
    auto* cmd = app.add_subcommand("collect", "Search seeded episodes and export the best plans as a dataset");
    add_common(cmd, common);
    search.add(cmd);
    cmd->add_option("--episodes", episodes, "Episodes to collect")->capture_default_str();
    cmd->add_option("--out", out, "Output directory")->capture_default_str();
    cmd->add_option("--width", width, "Map width")->capture_default_str();
    cmd->add_option("--height", height, "Map height")->capture_default_str();
    cmd->add_option("--densities", densities, "Obstacle densities drawn per episode")->delimiter(',');
    cmd->add_option("--shard-size", shard_size, "Records per shard")->capture_default_str();
    cmd->add_option("--train-ratio", train_ratio, "Fraction of episodes in the training split")
        ->capture_default_str();
    cmd->add_option("--stem", stem, "Shard and manifest file prefix")->capture_default_str();
    cmd->add_option("-j,--jobs", jobs, "Episodes searched concurrently")->capture_default_str();
    cmd->callback([this] { run(); });
  }

  void run() {
    validate_search(search.config);
    if (episodes < 1) throw ConfigError("--episodes must be >= 1");
    if (shard_size < 1) throw ConfigError("--shard-size must be >= 1");
    if (!(train_ratio >= 0.0 && train_ratio <= 1.0)) throw ConfigError("--train-ratio must lie in [0, 1]");
    if (densities.empty()) throw ConfigError("--densities must list at least one value");
    for (double d : densities) {
      if (!(d >= 0.0 && d < 1.0)) throw ConfigError("--densities values must lie in [0, 1)");
    }
    if (width < 1 || height < 1) throw ConfigError("--width and --height must be >= 1");
    auto proposer = make_proposer(common.backend);

    CollectConfig config;
    config.episodes = episodes;
    config.width = width;
    config.height = height;
    config.densities = densities;
    config.search = search.config;
    config.seed = common.seed;
    config.jobs = std::max(1, jobs);

    const std::vector<Split> splits = split_assignment(episodes, train_ratio, common.seed);
    DatasetWriter writer(out, ExportOptions{stem, shard_size, train_ratio, common.seed});
    std::size_t kept = 0, skipped = 0;
    Json summary = Json::array();
    collect(config, *proposer, [&](const EpisodeOutcome& o) {
      if (o.record) {
        writer.add(*o.record, splits[o.episode]);
        ++kept;
      } else {
        ++skipped;
      }
      if (common.structured()) {
        summary.push_back({{"episode", o.episode},
                           {"best_q", o.record ? Json(o.record->score) : Json(nullptr)},
                           {"split", to_string(splits[o.episode])},
                           {"error", o.error ? Json(*o.error) : Json(nullptr)}});
      } else if (o.record) {
        std::cout << "episode " << o.episode << "  best Q " << fixed(o.record->score, 4) << "  "
                  << to_string(splits[o.episode]) << "  \"" << o.record->instruction << "\"\n";
      } else {
        std::cout << "episode " << o.episode << "  skipped: " << o.error.value_or("unknown error") << "\n";
      }
      std::cout.flush();
    });
    writer.finish();
    if (common.structured()) {
      std::cout << Json{{"episodes", summary},
                        {"records", kept},
                        {"skipped", skipped},
                        {"manifest", writer.manifest_path().string()}}
                       .dump()
                << "\n";
    } else {
      std::cout << kept << " records, " << skipped << " skipped; manifest " << writer.manifest_path().string()
                << "\n";
    }
    code = kept > 0 ? kExitOk : kExitFailure;
  }
};

// --- bench ----------------------------------------------------------------------------

struct BenchCmd {
  Common common;
  SearchFlags search;
  std::vector<std::string> tiers{"sparse", "medium", "dense"};
  std::vector<std::string> planners{"mcts", "single-shot"};
  int trials = 50;
  int width = 10;
  int height = 10;
  int max_steps = 0;
  std::string instruction = "complete coverage";
  std::string out;
  int jobs = 1;
  bool no_timing = false;
  int code = kExitOk;

  void add(CLI::App& app) {
    auto* cmd = app.add_subcommand("bench", "Benchmark planners across obstacle-density tiers");
    add_common(cmd, common);
    search.add(cmd);
    cmd->add_option("--tiers", tiers, "Density tiers: sparse, medium, dense")->delimiter(',');
    cmd->add_option("--planners", planners, "Planners: mcts, single-shot")->delimiter(',');
    cmd->add_option("--trials", trials, "Missions per tier and planner")->capture_default_str();
    cmd->add_option("--width", width, "Map width")->capture_default_str();
    cmd->add_option("--height", height, "Map height")->capture_default_str();
    cmd->add_option("--max-steps", max_steps, "Waypoint budget (0: 4 x cell count)");
    cmd->add_option("--instruction", instruction, "Operator instruction")->capture_default_str();
    cmd->add_option("--out", out, "Write <out>.txt, <out>.csv, <out>.json and <out>.trials.jsonl");
    cmd->add_option("-j,--jobs", jobs, "Trials run concurrently")->capture_default_str();
    cmd->add_flag("--no-timing", no_timing, "Report latency as 0 for bit-reproducible tables");
    cmd->callback([this] { run(); });
  }

  void run() {
    validate_search(search.config);
    BenchConfig config;
    config.tiers.clear();
    config.planners.clear();
    try {
      for (const auto& t : tiers) config.tiers.push_back(parse_density_tier(t));
      for (const auto& p : planners) config.planners.push_back(parse_planner_kind(p));
    } catch (const std::exception& e) {
      throw ConfigError(e.what());
    }
    if (trials < 1) throw ConfigError("--trials must be >= 1");
    make_instruction(instruction);
    config.trials = trials;
    config.seed = common.seed;
    config.width = width;
    config.height = height;
    config.max_steps = max_steps;
    config.instruction = instruction;
    config.search = search.config;
    config.jobs = std::max(1, jobs);
    config.timing = !no_timing;
    auto proposer = make_proposer(common.backend);
    const BenchResult result = run_benchmark(config, *proposer);

    if (!out.empty()) {
      write_text(out + ".txt", format_table_text(result));
      write_text(out + ".csv", format_table_csv(result));
      write_text(out + ".json", table_to_json(result).dump(2) + "\n");
      write_text(out + ".trials.jsonl", format_trial_log(result));
    }
    std::cout << (common.structured() ? table_to_json(result).dump() + "\n" : format_table_text(result));
    bool any_failed = false;
    for (const auto& t : result.trials) any_failed |= t.metrics.failed;
    code = any_failed ? kExitFailure : kExitOk;
  }
};

// --- serve ----------------------------------------------------------------------------

struct ServeCmd {
  Common common;
  std::string addr;
  std::string checkpoint_dir = "checkpoints";
  int step_interval_ms = 100;
  std::size_t max_buffer = 256;
  int code = kExitOk;

  void add(CLI::App& app) {
    auto* cmd = app.add_subcommand("serve", "Run the ground-station HTTP service");
    add_common(cmd, common);
    cmd->add_option("--addr", addr, "host:port (default: $COVERAGE_PILOT_ADDR or 127.0.0.1:8080)");
    cmd->add_option("--checkpoint-dir", checkpoint_dir, "Replay files written here on shutdown")
        ->capture_default_str();
    cmd->add_option("--step-interval-ms", step_interval_ms, "Default pause between waypoints")
        ->capture_default_str();
    cmd->add_option("--max-buffer", max_buffer, "Snapshots buffered per stream subscriber")->capture_default_str();
    cmd->callback([this] { run(); });
  }

  void run() {
    if (addr.empty()) {
      const char* env = std::getenv("COVERAGE_PILOT_ADDR");
      addr = env && *env ? env : "127.0.0.1:8080";
    }
    std::pair<std::string, int> listen;
    try {
      listen = parse_listen_address(addr);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
    if (step_interval_ms < 0) throw ConfigError("--step-interval-ms must be >= 0");
    if (max_buffer < 2) throw ConfigError("--max-buffer must be >= 2");
    auto proposer = make_proposer(common.backend);

    // Handle termination on a dedicated thread: block the signals before any other thread
    // starts so they inherit the mask.
    sigset_t signals;
    sigemptyset(&signals);
    sigaddset(&signals, SIGTERM);
    sigaddset(&signals, SIGINT);
    pthread_sigmask(SIG_BLOCK, &signals, nullptr);

    ServiceOptions options;
    options.checkpoint_dir = checkpoint_dir;
    options.default_step_interval_ms = step_interval_ms;
    options.max_buffer = max_buffer;
    MissionService service(*proposer, options);
    httplib::Server server;
    // The library default also sets SO_REUSEPORT, which lets a second server share the port.
    server.set_socket_options([](socket_t sock) {
      int yes = 1;
      setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, reinterpret_cast<const void*>(&yes), sizeof yes);
    });
    service.mount(server);

    if (!server.bind_to_port(listen.first, listen.second)) {
      throw ConfigError("cannot listen on " + addr + " (address in use or not permitted)");
    }
    std::thread waiter([&] {
      int sig = 0;
      sigwait(&signals, &sig);
      server.stop();
    });
    std::cerr << "listening on http://" << listen.first << ":" << listen.second << "\n";
    const bool clean = server.listen_after_bind();
    if (waiter.joinable()) {
      // listen returned on its own (not via a signal): wake the waiter.
      pthread_kill(waiter.native_handle(), SIGTERM);
      waiter.join();
    }
    service.shutdown();
    std::cerr << "stopped; replay checkpoints in " << checkpoint_dir << "\n";
    code = clean ? kExitOk : kExitFailure;
  }
};

// --- validate -------------------------------------------------------------------------

struct ValidateCmd {
  Common common;
  std::string path;
  int code = kExitOk;

  void add(CLI::App& app) {
    auto* cmd = app.add_subcommand("validate", "Recheck an exported dataset");
    add_common(cmd, common);
    cmd->add_option("path", path, "Manifest file or dataset directory")->required();
    cmd->callback([this] { run(); });
  }

  void run() {
    ValidationReport report;
    try {
      report = validate_dataset(path);
    } catch (const std::exception& e) {
      throw ConfigError(e.what());
    }
    if (common.structured()) {
      std::cout << to_json(report).dump() << "\n";
    } else {
      std::cout << report.passed << "/" << report.records << " records passed across " << report.shards
                << " shards" << (report.manifest_complete ? "" : " (manifest marked incomplete)") << "\n";
      for (const auto& issue : report.issues) {
        std::cout << "  " << issue.file;
        if (issue.line) std::cout << ":" << issue.line;
        std::cout << ": " << issue.reason << "\n";
      }
    }
    code = report.ok() ? kExitOk : kExitFailure;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Instruction-driven coverage planning for a grid-world UAV"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_config("--config", "", "TOML file of option values; command-line flags take precedence");
  app.set_version_flag("--version", "coverage-pilot 0.1.0");

  SimulateCmd simulate;
  SearchCmd search;
  CollectCmd collect;
  BenchCmd bench;
  ServeCmd serve;
  ValidateCmd validate;
  simulate.add(app);
  search.add(app);
  collect.add(app);
  bench.add(app);
  serve.add(app);
  validate.add(app);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfig;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  }

  for (int code : {simulate.code, search.code, collect.code, bench.code, serve.code, validate.code}) {
    if (code != kExitOk) return code;
  }
  return kExitOk;
}
