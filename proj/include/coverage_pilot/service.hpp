#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "coverage_pilot/json_io.hpp"
#include "coverage_pilot/localization.hpp"
#include "coverage_pilot/mcts.hpp"
#include "coverage_pilot/mission.hpp"

namespace httplib {
class Server;
}

namespace cpilot {

struct ServiceOptions {
  /// Snapshots buffered per stream subscriber before it is resynchronised.
  std::size_t max_buffer = 256;
  /// Pause between executed waypoints unless the start request overrides it.
  int default_step_interval_ms = 100;
  /// Where in-flight missions are checkpointed on shutdown; empty disables it.
  std::filesystem::path checkpoint_dir;
  int beams = 16;
  double max_range = 8.0;
};

struct PlannerActivity {
  bool searching = false;
  int rollout = -1;
};

struct PoseFix {
  Pose<double> truth;
  PoseEstimate<double> estimate;
};

/// Telemetry snapshot (see docs/schemas/snapshot.schema.json).
Json make_snapshot(const std::string& mission, std::uint64_t seq, const MissionState& state, bool paused,
                   const PlannerActivity& activity, const std::optional<PoseFix>& pose);

/// Bounded, ordered queue of encoded stream events for one subscriber.
class Subscription {
 public:
  explicit Subscription(std::size_t capacity) : capacity_(capacity) {}

  /// Appends an event. On overflow the backlog is dropped and replaced by a resync marker
  /// followed by `event`, which is always the current snapshot.
  void push(const std::string& event, std::uint64_t seq);
  /// Waits up to `timeout` for the next event. Returns nullopt on timeout or when closed
  /// and drained.
  std::optional<std::string> next(std::chrono::milliseconds timeout);
  void close();
  bool closed() const;
  std::size_t resyncs() const;

 private:
  std::size_t capacity_;
  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::deque<std::string> queue_;
  bool closed_ = false;
  std::size_t resyncs_ = 0;
};

/// Server-sent-event framing of a snapshot.
std::string encode_snapshot_event(const Json& snapshot);

struct ServiceResponse {
  int status = 200;
  Json body;
};

/// Owns one mission loop thread; every mutation goes through its command queue and is
/// applied at a step boundary.
class MissionRunner {
 public:
  struct Settings {
    std::string id;
    GridMap map;
    Cell start;
    Instruction instruction;
    PlannerKind planner;
    MctsConfig search;
    MissionConfig mission;
    std::uint64_t seed = 0;
    int max_steps = 400;
    int step_interval_ms = 100;
    std::size_t max_buffer = 256;
    int beams = 16;
    double max_range = 8.0;
  };

  MissionRunner(Settings settings, Proposer& proposer);
  ~MissionRunner();

  const std::string& id() const { return settings_.id; }
  void start();

  /// Returns the step at which the new instruction takes effect, or an error response.
  ServiceResponse submit(const std::string& text);
  ServiceResponse control(const std::string& command);
  Json latest() const;
  std::shared_ptr<Subscription> subscribe();
  /// True while the mission is neither complete nor failed.
  bool running() const;
  void stop();
  std::vector<ReplayRecord> replay() const;
  MissionStatus status() const;

 private:
  enum class CommandKind { Instruction, Pause, Resume, Abort, Stop };
  struct Command {
    CommandKind kind;
    std::string text;
  };

  void loop();
  void enqueue(Command c);
  bool idle_locked() const;
  void publish();
  std::optional<PoseFix> localize() const;

  Settings settings_;
  Proposer& proposer_;
  std::unique_ptr<Planner> planner_;
  std::optional<SdfGrid<double>> sdf_;

  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::deque<Command> commands_;
  std::optional<MissionState> state_;  // written only by the loop thread, under mu_
  bool paused_ = false;
  bool exited_ = false;
  bool stepping_ = false;  // a step has begun and its commands were already drained
  Json latest_;
  std::uint64_t seq_ = 0;
  std::vector<std::weak_ptr<Subscription>> subscribers_;
  std::vector<ReplayRecord> replay_;
  std::atomic<int> rollout_{-1};
  std::atomic<bool> searching_{false};
  std::thread thread_;
};

class MissionService {
 public:
  MissionService(Proposer& proposer, ServiceOptions options = {});
  ~MissionService();

  ServiceResponse start_mission(const Json& request);
  ServiceResponse post_instruction(const std::string& id, const Json& body);
  ServiceResponse control(const std::string& id, const Json& body);
  ServiceResponse state(const std::string& id) const;
  /// nullptr for an unknown id. The first event is the current snapshot.
  std::shared_ptr<Subscription> subscribe(const std::string& id);
  Json metadata() const;

  /// Stops every mission loop and writes checkpoints.
  void shutdown();
  /// Registers the HTTP routes on `server`.
  void mount(httplib::Server& server);

 private:
  std::shared_ptr<MissionRunner> find(const std::string& id) const;

  Proposer& proposer_;
  ServiceOptions options_;
  mutable std::mutex mu_;
  std::map<std::string, std::shared_ptr<MissionRunner>> missions_;
  std::vector<std::string> order_;
  std::string active_;
  int counter_ = 0;
  bool shut_down_ = false;
};

/// Parses "host:port" (host optional). Throws std::invalid_argument.
std::pair<std::string, int> parse_listen_address(const std::string& addr);

}  // namespace cpilot
