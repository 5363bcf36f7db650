#include "coverage_pilot/service.hpp"

#include <cmath>
#include <fstream>

#include "coverage_pilot/proposer.hpp"

// After Eigen: <resolv.h> (pulled in by httplib) defines a macro named _res.
#include <httplib.h>

namespace cpilot {

namespace {

constexpr const char* kServiceName = "coverage-pilot";
constexpr const char* kServiceVersion = "0.1.0";

Json error_body(const std::string& message, const std::string& field = "") {
  Json j{{"error", message}};
  if (!field.empty()) j["field"] = field;
  return j;
}

ServiceResponse bad_request(const std::string& message, const std::string& field = "") {
  return {400, error_body(message, field)};
}

Json pose_to_json(const Pose<double>& p) { return Json{{"x", p.x()}, {"y", p.y()}, {"heading", p.heading}}; }

}  // namespace

Json make_snapshot(const std::string& mission, std::uint64_t seq, const MissionState& state, bool paused,
                   const PlannerActivity& activity, const std::optional<PoseFix>& pose) {
  Json snapshot{{"mission", mission},
                {"seq", seq},
                {"step", state.step},
                {"status", to_string(state.status)},
                {"paused", paused},
                {"position", cell_to_json(state.position)},
                {"plan", trajectory_to_json(state.plan)},
                {"plan_revision", state.plan_revision},
                {"coverage", coverage_to_json(state.coverage)},
                {"cr", state.cr()},
                {"dr", state.dr()},
                {"last_instruction", {{"text", state.instruction.text}, {"issued_at", state.instruction.issued_at}}},
                {"planner_activity",
                 activity.searching ? Json{{"state", "searching"}, {"rollout", activity.rollout}}
                                    : Json{{"state", "idle"}, {"rollout", nullptr}}},
                {"pose_estimate", nullptr},
                {"failure", state.failure ? Json(*state.failure) : Json(nullptr)},
                {"map", map_to_json(state.map)}};
  if (pose) {
    snapshot["pose_estimate"] = Json{{"truth", pose_to_json(pose->truth)},
                                     {"estimate", pose_to_json(pose->estimate.pose)},
                                     {"residual", pose->estimate.residual},
                                     {"confident", pose->estimate.confident},
                                     {"beams_used", pose->estimate.beams_used}};
  }
  return snapshot;
}

std::string encode_snapshot_event(const Json& snapshot) {
  return "id: " + std::to_string(snapshot.value("seq", std::uint64_t{0})) + "\nevent: snapshot\ndata: " +
         snapshot.dump() + "\n\n";
}

// --- Subscription ---------------------------------------------------------------------

void Subscription::push(const std::string& event, std::uint64_t seq) {
  {
    std::lock_guard lock(mu_);
    if (closed_) return;
    if (queue_.size() >= capacity_) {
      queue_.clear();
      ++resyncs_;
      queue_.push_back("event: resync\ndata: " + Json{{"resume_seq", seq}}.dump() + "\n\n");
    }
    queue_.push_back(event);
  }
  cv_.notify_all();
}

std::optional<std::string> Subscription::next(std::chrono::milliseconds timeout) {
  std::unique_lock lock(mu_);
  cv_.wait_for(lock, timeout, [&] { return !queue_.empty() || closed_; });
  if (queue_.empty()) return std::nullopt;
  std::string out = std::move(queue_.front());
  queue_.pop_front();
  return out;
}

void Subscription::close() {
  {
    std::lock_guard lock(mu_);
    closed_ = true;
  }
  cv_.notify_all();
}

bool Subscription::closed() const {
  std::lock_guard lock(mu_);
  return closed_;
}

std::size_t Subscription::resyncs() const {
  std::lock_guard lock(mu_);
  return resyncs_;
}

// --- MissionRunner --------------------------------------------------------------------

MissionRunner::MissionRunner(Settings settings, Proposer& proposer)
    : settings_(std::move(settings)), proposer_(proposer) {
  SearchHooks hooks;
  hooks.on_rollout = [this](int rollout) { rollout_ = rollout; };
  planner_ = make_planner(settings_.planner, proposer_, settings_.search, std::move(hooks));
  state_ = begin_mission(settings_.map, settings_.start, settings_.instruction);
  SdfGrid<double> sdf = compute_sdf<double>(state_->map);
  if (!sdf.degenerate()) sdf_ = std::move(sdf);
  replay_.push_back(replay_record(*state_));
}

MissionRunner::~MissionRunner() { stop(); }

void MissionRunner::start() {
  publish();
  thread_ = std::thread([this] { loop(); });
}

void MissionRunner::stop() {
  enqueue({CommandKind::Stop, ""});
  if (thread_.joinable()) thread_.join();
  std::lock_guard lock(mu_);
  for (auto& weak : subscribers_) {
    if (auto sub = weak.lock()) sub->close();
  }
  subscribers_.clear();
}

void MissionRunner::enqueue(Command c) {
  {
    std::lock_guard lock(mu_);
    commands_.push_back(std::move(c));
  }
  cv_.notify_all();
}

ServiceResponse MissionRunner::submit(const std::string& text) {
  Instruction instruction;
  try {
    instruction = Instruction(text);
  } catch (const std::invalid_argument& e) {
    return bad_request(e.what(), "text");
  }
  std::lock_guard lock(mu_);
  if (exited_ || state_->status == MissionStatus::Failed) {
    return {409, error_body("mission " + settings_.id + " has failed; instruction refused")};
  }
  commands_.push_back({CommandKind::Instruction, instruction.text});
  cv_.notify_all();
  // Commands are drained between steps, so one already under way finishes first.
  return {202, Json{{"mission", settings_.id},
                    {"accepted", true},
                    {"scheduled_step", state_->step + (stepping_ ? 1 : 0)},
                    {"status", to_string(state_->status)}}};
}

ServiceResponse MissionRunner::control(const std::string& command) {
  CommandKind kind;
  if (command == "pause") {
    kind = CommandKind::Pause;
  } else if (command == "resume") {
    kind = CommandKind::Resume;
  } else if (command == "abort") {
    kind = CommandKind::Abort;
  } else {
    return bad_request("unknown command '" + command + "' (expected pause, resume or abort)", "command");
  }
  std::lock_guard lock(mu_);
  const bool noop = (kind == CommandKind::Resume && !paused_) || (kind == CommandKind::Pause && paused_) || exited_;
  if (!exited_) {
    commands_.push_back({kind, ""});
    cv_.notify_all();
  }
  return {202, Json{{"mission", settings_.id},
                    {"command", command},
                    {"accepted", true},
                    {"noop", noop},
                    {"applies_after_step", state_->step}}};
}

Json MissionRunner::latest() const {
  std::lock_guard lock(mu_);
  Json snap = latest_;
  // Search progress changes between snapshots; report it live.
  if (searching_) snap["planner_activity"] = Json{{"state", "searching"}, {"rollout", rollout_.load()}};
  return snap;
}

std::shared_ptr<Subscription> MissionRunner::subscribe() {
  auto sub = std::make_shared<Subscription>(settings_.max_buffer);
  std::lock_guard lock(mu_);
  sub->push(encode_snapshot_event(latest_), seq_);
  if (exited_) {
    sub->close();
  } else {
    subscribers_.push_back(sub);
  }
  return sub;
}

bool MissionRunner::running() const {
  std::lock_guard lock(mu_);
  return !exited_ && !state_->terminal();
}

MissionStatus MissionRunner::status() const {
  std::lock_guard lock(mu_);
  return state_->status;
}

std::vector<ReplayRecord> MissionRunner::replay() const {
  std::lock_guard lock(mu_);
  return replay_;
}

bool MissionRunner::idle_locked() const {
  return paused_ || state_->terminal() || state_->step >= settings_.max_steps;
}

std::optional<PoseFix> MissionRunner::localize() const {
  if (!sdf_) return std::nullopt;
  const MissionState& s = *state_;
  double heading = 0.0;
  if (!s.history.empty()) {
    const Cell prev = s.history.size() >= 2 ? s.history[s.history.size() - 2] : s.map.start();
    heading = std::atan2(double(s.position.row - prev.row), double(s.position.col - prev.col));
  }
  PoseFix fix;
  fix.truth = Pose<double>(s.position.col + 0.5, s.position.row + 0.5, heading);
  try {
    const BeamScan<double> scan = cast_beams(s.map, fix.truth, settings_.beams, settings_.max_range);
    fix.estimate = estimate_position(*sdf_, scan, fix.truth.heading,
                                     SearchRegion<double>::around(s.map, s.position, 1.5));
  } catch (const std::exception&) {
    return std::nullopt;  // every beam clamped: no fix this step
  }
  return fix;
}

void MissionRunner::publish() {
  const PlannerActivity activity{searching_.load(), searching_ ? rollout_.load() : -1};
  const std::optional<PoseFix> pose = localize();
  std::lock_guard lock(mu_);
  latest_ = make_snapshot(settings_.id, seq_, *state_, paused_, activity, pose);
  const std::string event = encode_snapshot_event(latest_);
  std::vector<std::weak_ptr<Subscription>> live;
  for (auto& weak : subscribers_) {
    if (auto sub = weak.lock(); sub && !sub->closed()) {
      sub->push(event, seq_);
      live.push_back(weak);
    }
  }
  subscribers_ = std::move(live);
  ++seq_;
}

void MissionRunner::loop() {
  // state_ is only reassigned here; readers take mu_, so every write happens under it too.
  auto update = [this](MissionState next) {
    std::lock_guard lock(mu_);
    state_ = std::move(next);
  };
  for (;;) {
    std::deque<Command> batch;
    {
      std::unique_lock lock(mu_);
      if (idle_locked()) cv_.wait(lock, [&] { return !commands_.empty(); });
      batch.swap(commands_);
      stepping_ = true;
    }
    bool changed = false;
    for (const Command& c : batch) {
      std::unique_lock lock(mu_);
      switch (c.kind) {
        case CommandKind::Stop:
          exited_ = true;
          return;
        case CommandKind::Abort:
          if (state_->status != MissionStatus::Failed) {
            state_->status = MissionStatus::Failed;
            state_->failure = "aborted by operator";
            state_->plan = {};
            changed = true;
          }
          break;
        case CommandKind::Pause:
          changed |= !paused_;
          paused_ = true;
          break;
        case CommandKind::Resume:
          changed |= paused_;
          paused_ = false;
          break;
        case CommandKind::Instruction:
          if (state_->status != MissionStatus::Failed) {
            state_ = submit_instruction(std::move(*state_), Instruction(c.text));
            changed = true;
          }
          break;
      }
    }
    if (changed) publish();
    {
      std::lock_guard lock(mu_);
      if (state_->status == MissionStatus::Failed) {
        replay_.push_back(replay_record(*state_));
        exited_ = true;
        for (auto& weak : subscribers_) {
          if (auto sub = weak.lock()) sub->close();
        }
        subscribers_.clear();
        return;
      }
      if (idle_locked()) {
        stepping_ = false;
        continue;
      }
    }

    MissionState state = *state_;
    if (needs_replan(state, settings_.mission)) {
      state.status = MissionStatus::Planning;
      update(state);
      searching_ = true;
      rollout_ = -1;
      publish();
      const std::uint64_t seed =
          settings_.seed ^ (0x9e3779b97f4a7c15ULL * static_cast<std::uint64_t>(state.plans_requested + 1));
      state = plan_step(std::move(state), *planner_, settings_.mission, seed);
      searching_ = false;
      update(state);
      publish();
      if (state.terminal()) {
        std::lock_guard lock(mu_);
        stepping_ = false;
        continue;
      }
    }
    state = execute_step(std::move(state), settings_.mission);
    {
      std::lock_guard lock(mu_);
      replay_.push_back(replay_record(state));
    }
    update(state);
    publish();

    std::unique_lock lock(mu_);
    stepping_ = false;
    cv_.wait_for(lock, std::chrono::milliseconds(settings_.step_interval_ms), [&] { return !commands_.empty(); });
  }
}

// --- MissionService -------------------------------------------------------------------

MissionService::MissionService(Proposer& proposer, ServiceOptions options)
    : proposer_(proposer), options_(std::move(options)) {}

MissionService::~MissionService() { shutdown(); }

std::shared_ptr<MissionRunner> MissionService::find(const std::string& id) const {
  std::lock_guard lock(mu_);
  auto it = missions_.find(id);
  return it == missions_.end() ? nullptr : it->second;
}

ServiceResponse MissionService::start_mission(const Json& request) {
  if (!request.is_object()) return bad_request("request body must be a JSON object");

  MissionRunner::Settings s{"", GridMap(1, 1, {}, {0, 0}), {0, 0}, Instruction(), PlannerKind::Mcts, {}, {}};
  try {
    const int sources = int(request.contains("map")) + int(request.contains("generate")) +
                        int(request.contains("map_file"));
    if (sources != 1) return bad_request("exactly one of map, generate or map_file is required", "map");
    if (request.contains("map")) {
      s.map = map_from_json(request["map"], "map");
    } else if (request.contains("map_file")) {
      if (!request["map_file"].is_string()) return bad_request("must be a string", "map_file");
      s.map = load_map(request["map_file"].get<std::string>());
    } else {
      const Json& g = request["generate"];
      if (!g.is_object()) return bad_request("must be an object", "generate");
      const int w = g.value("width", 10), h = g.value("height", 10);
      const double density = g.value("density", 0.15);
      if (w < 1 || h < 1 || w > 4096 || h > 4096) return bad_request("dimensions must lie in [1, 4096]", "generate.width");
      if (!(density >= 0.0 && density < 1.0)) return bad_request("density must lie in [0, 1)", "generate.density");
      s.map = generate_map(w, h, density, g.value("seed", std::uint64_t{0}));
    }
  } catch (const MapFormatError& e) {
    return bad_request(e.what(), e.field());
  } catch (const nlohmann::json::exception& e) {
    return bad_request(std::string("malformed map request: ") + e.what(), "generate");
  } catch (const std::exception& e) {
    return bad_request(e.what(), "map");
  }
  s.start = s.map.start();

  try {
    s.instruction = Instruction(request.value("instruction", std::string("complete coverage")));
  } catch (const std::exception& e) {
    return bad_request(e.what(), "instruction");
  }
  try {
    s.planner = parse_planner_kind(request.value("planner", std::string("mcts")));
  } catch (const std::exception& e) {
    return bad_request(e.what(), "planner");
  }
  try {
    if (request.contains("config")) s.search = mcts_config_from_json(request["config"]);
    s.search.validate();
  } catch (const std::exception& e) {
    return bad_request(e.what(), "config");
  }
  try {
    if (request.contains("mission")) {
      const Json& m = request["mission"];
      s.mission.replan_horizon = m.value("replan_horizon", s.mission.replan_horizon);
      s.mission.target_cr = m.value("target_cr", s.mission.target_cr);
    }
    if (s.mission.replan_horizon < 1) return bad_request("replan_horizon must be >= 1", "mission.replan_horizon");
    if (!(s.mission.target_cr > 0.0 && s.mission.target_cr <= 1.0)) {
      return bad_request("target_cr must lie in (0, 1]", "mission.target_cr");
    }
    s.seed = request.value("seed", std::uint64_t{0});
    s.max_steps = request.value("max_steps", 4 * s.map.width() * s.map.height());
    s.step_interval_ms = request.value("step_interval_ms", options_.default_step_interval_ms);
    if (s.max_steps < 0) return bad_request("max_steps must be >= 0", "max_steps");
    if (s.step_interval_ms < 0) return bad_request("step_interval_ms must be >= 0", "step_interval_ms");
  } catch (const nlohmann::json::exception& e) {
    return bad_request(std::string("ill-typed field: ") + e.what());
  }
  s.max_buffer = options_.max_buffer;
  s.beams = options_.beams;
  s.max_range = options_.max_range;
  const bool replace = request.value("replace", false);

  std::shared_ptr<MissionRunner> previous;
  std::shared_ptr<MissionRunner> runner;
  {
    std::lock_guard lock(mu_);
    if (shut_down_) return {503, error_body("service is shutting down")};
    if (!active_.empty()) {
      auto it = missions_.find(active_);
      if (it != missions_.end() && it->second->running()) {
        if (!replace) {
          return {409, error_body("mission " + active_ + " is still running; pass \"replace\": true to abort it")};
        }
        previous = it->second;
      }
    }
    s.id = "mission-" + std::to_string(++counter_);
    try {
      runner = std::make_shared<MissionRunner>(s, proposer_);
    } catch (const DisconnectedMap& e) {
      --counter_;
      Json body = error_body(e.what(), "map");
      Json cells = Json::array();
      for (Cell c : e.unreachable()) cells.push_back(cell_to_json(c));
      body["unreachable"] = std::move(cells);
      return {400, body};
    }
    missions_[s.id] = runner;
    order_.push_back(s.id);
    active_ = s.id;
  }
  if (previous) previous->control("abort");
  runner->start();
  return {201, Json{{"id", s.id}, {"status", to_string(runner->status())}, {"replaced", previous != nullptr}}};
}

ServiceResponse MissionService::post_instruction(const std::string& id, const Json& body) {
  auto runner = find(id);
  if (!runner) return {404, error_body("unknown mission '" + id + "'")};
  if (!body.is_object() || !body.contains("text") || !body["text"].is_string()) {
    return bad_request("body must be {\"text\": string}", "text");
  }
  return runner->submit(body["text"].get<std::string>());
}

ServiceResponse MissionService::control(const std::string& id, const Json& body) {
  auto runner = find(id);
  if (!runner) return {404, error_body("unknown mission '" + id + "'")};
  if (!body.is_object() || !body.contains("command") || !body["command"].is_string()) {
    return bad_request("body must be {\"command\": \"pause\" | \"resume\" | \"abort\"}", "command");
  }
  return runner->control(body["command"].get<std::string>());
}

ServiceResponse MissionService::state(const std::string& id) const {
  auto runner = find(id);
  if (!runner) return {404, error_body("unknown mission '" + id + "'")};
  return {200, runner->latest()};
}

std::shared_ptr<Subscription> MissionService::subscribe(const std::string& id) {
  auto runner = find(id);
  return runner ? runner->subscribe() : nullptr;
}

Json MissionService::metadata() const {
  std::lock_guard lock(mu_);
  return Json{{"service", kServiceName},
              {"version", kServiceVersion},
              {"prompt_version", std::string(prompt_template_version())},
              {"proposer", proposer_.id()},
              {"missions", order_},
              {"active", active_.empty() ? Json(nullptr) : Json(active_)},
              {"endpoints",
               {"POST /missions", "POST /missions/{id}/instruction", "POST /missions/{id}/control",
                "GET /missions/{id}/state", "GET /missions/{id}/stream"}}};
}

void MissionService::shutdown() {
  std::vector<std::shared_ptr<MissionRunner>> runners;
  {
    std::lock_guard lock(mu_);
    if (shut_down_) return;
    shut_down_ = true;
    for (const auto& id : order_) runners.push_back(missions_.at(id));
  }
  for (auto& r : runners) {
    r->stop();
    if (!options_.checkpoint_dir.empty()) {
      std::error_code ec;
      std::filesystem::create_directories(options_.checkpoint_dir, ec);
      write_replay(r->replay(), options_.checkpoint_dir / (r->id() + ".replay.jsonl"));
    }
  }
}

void MissionService::mount(httplib::Server& server) {
  auto reply = [](httplib::Response& res, const ServiceResponse& r) {
    res.status = r.status;
    res.set_content(r.body.dump(), "application/json");
  };
  auto parse = [](const httplib::Request& req, Json& out) {
    out = Json::parse(req.body, nullptr, false);
    return !out.is_discarded();
  };

  server.Get("/", [this, reply](const httplib::Request&, httplib::Response& res) {
    reply(res, {200, metadata()});
  });
  server.Post("/missions", [this, reply, parse](const httplib::Request& req, httplib::Response& res) {
    Json body;
    if (!parse(req, body)) return reply(res, bad_request("body is not valid JSON"));
    reply(res, start_mission(body));
  });
  server.Post(R"(/missions/([^/]+)/instruction)",
              [this, reply, parse](const httplib::Request& req, httplib::Response& res) {
                Json body;
                if (!parse(req, body)) return reply(res, bad_request("body is not valid JSON"));
                reply(res, post_instruction(req.matches[1], body));
              });
  server.Post(R"(/missions/([^/]+)/control)",
              [this, reply, parse](const httplib::Request& req, httplib::Response& res) {
                Json body;
                if (!parse(req, body)) return reply(res, bad_request("body is not valid JSON"));
                reply(res, control(req.matches[1], body));
              });
  server.Get(R"(/missions/([^/]+)/state)", [this, reply](const httplib::Request& req, httplib::Response& res) {
    reply(res, state(req.matches[1]));
  });
  server.Get(R"(/missions/([^/]+)/stream)", [this, reply](const httplib::Request& req, httplib::Response& res) {
    auto sub = subscribe(req.matches[1]);
    if (!sub) return reply(res, {404, error_body("unknown mission '" + std::string(req.matches[1]) + "'")});
    res.set_header("Cache-Control", "no-cache");
    res.set_chunked_content_provider(
        "text/event-stream",
        [sub](std::size_t, httplib::DataSink& sink) {
          if (auto event = sub->next(std::chrono::milliseconds(1000))) {
            return sink.write(event->data(), event->size());
          }
          if (sub->closed()) {
            sink.done();
            return true;
          }
          static const std::string keepalive = ": keepalive\n\n";
          return sink.write(keepalive.data(), keepalive.size());
        },
        [sub](bool) { sub->close(); });
  });
}

std::pair<std::string, int> parse_listen_address(const std::string& addr) {
  std::string host = "127.0.0.1";
  std::string port_text = addr;
  if (const auto colon = addr.rfind(':'); colon != std::string::npos) {
    if (colon > 0) host = addr.substr(0, colon);
    port_text = addr.substr(colon + 1);
  }
  if (port_text.empty() || port_text.find_first_not_of("0123456789") != std::string::npos) {
    throw std::invalid_argument("invalid listen address '" + addr + "' (expected host:port)");
  }
  const int port = std::stoi(port_text);
  if (port < 0 || port > 65535) throw std::invalid_argument("port out of range in '" + addr + "'");
  return {host, port};
}

}  // namespace cpilot
