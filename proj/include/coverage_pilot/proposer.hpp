#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

#include "coverage_pilot/gridworld.hpp"

namespace cpilot {

struct Instruction {
  std::string text;
  int issued_at = 0;

  Instruction() : text("complete coverage") {}
  /// Throws std::invalid_argument on empty (or all-whitespace) text.
  explicit Instruction(std::string text, int issued_at = 0);

  bool operator==(const Instruction&) const = default;
};

enum class ActionKind { Generate, Regenerate, Finetune, Evaluate };

std::string to_string(ActionKind kind);
ActionKind parse_action_kind(std::string_view name);
inline bool yields_trajectory(ActionKind kind) { return kind != ActionKind::Evaluate; }

struct ProposerAction {
  ActionKind kind = ActionKind::Generate;
  std::optional<std::string> feedback;
  std::optional<Trajectory> prior;

  static ProposerAction generate() { return {ActionKind::Generate, std::nullopt, std::nullopt}; }
  static ProposerAction regenerate(Trajectory prior, std::string feedback) {
    return {ActionKind::Regenerate, std::move(feedback), std::move(prior)};
  }
  static ProposerAction finetune(Trajectory prior) {
    return {ActionKind::Finetune, std::nullopt, std::move(prior)};
  }
  static ProposerAction evaluate(Trajectory prior, std::optional<std::string> feedback = {}) {
    return {ActionKind::Evaluate, std::move(feedback), std::move(prior)};
  }

  /// Throws std::invalid_argument when the payload does not fit the kind.
  void check() const;
};

struct ProposerReply {
  std::optional<Trajectory> trajectory;
  std::optional<double> compliance;
  /// "Further exploration required" verdict of an evaluation.
  std::optional<bool> explore_further;
  std::string raw;
  /// Set when the backend answered but nothing usable could be extracted.
  std::optional<std::string> parse_error;
  double latency_seconds = 0.0;
  int requests = 1;

  bool usable() const { return !parse_error.has_value(); }
};

/// Everything a backend sees besides the action itself.
struct ProposalContext {
  const GridMap& map;
  const CoverageMap& coverage;
  const Instruction& instruction;
  Cell start;
  std::uint64_t seed = 0;
  /// Coverage fraction at which the evaluator stops asking for more exploration.
  double terminal_cr = 0.95;
};

class BackendUnavailable : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ReplyParseError : public std::runtime_error {
 public:
  ReplyParseError(const std::string& what, std::string raw)
      : std::runtime_error(what), raw_(std::move(raw)) {}
  const std::string& raw() const { return raw_; }

 private:
  std::string raw_;
};

/// Interchangeable trajectory generator / evaluator.
class Proposer {
 public:
  virtual ~Proposer() = default;
  /// Parse failures come back as a reply with parse_error set. Transport failures
  /// throw BackendUnavailable.
  virtual ProposerReply propose(const ProposerAction& action, const ProposalContext& ctx) = 0;
  virtual std::string id() const = 0;
};

// --- prompts and the wire format ---------------------------------------------------

/// Raw template text for an action (the versioned files under prompts/).
std::string_view prompt_template(ActionKind kind);
std::string_view prompt_template_version();

std::string build_prompt(const ProposerAction& action, const GridMap& map,
                         const CoverageMap& coverage, const Instruction& instruction, Cell start);

/// Trajectory wire format: "[[r,c],[r,c],...]".
std::string trajectory_to_text(const Trajectory& t);

/// First well-formed, non-empty waypoint array in `raw`, if any.
std::optional<Trajectory> extract_trajectory(std::string_view raw);

/// Throws ReplyParseError when no payload can be extracted.
ProposerReply parse_reply(ActionKind kind, const std::string& raw);

// --- instruction keywords -------------------------------------------------------------

enum class InstructionMode { Complete, Rapid, Focused };
enum class Region { Whole, TopLeft, TopRight, BottomLeft, BottomRight };

struct InstructionIntent {
  InstructionMode mode = InstructionMode::Complete;
  Region region = Region::Whole;
  bool operator==(const InstructionIntent&) const = default;
};

InstructionIntent parse_intent(std::string_view text);
std::string to_string(Region region);
/// Quadrants split at ceil(height/2) rows and ceil(width/2) columns.
bool in_region(Region region, const GridMap& map, Cell c);

/// Rule-based compliance of `path` (flown from ctx.start over ctx.coverage) with the intent.
double heuristic_compliance(const InstructionIntent& intent, const GridMap& map,
                            const CoverageMap& coverage, const Trajectory& path);

/// Coverage after flying `path`; the first waypoint is the current cell and is not recounted.
CoverageMap simulate_flight(const CoverageMap& coverage, const Trajectory& path);

// --- backends -----------------------------------------------------------------------------

/// Deterministic offline backend: seeded sweep coverage, BFS repair, keyword-driven
/// refinement and scoring. Pure function of (action, ctx).
ProposerReply heuristic_propose(const ProposerAction& action, const ProposalContext& ctx);

class HeuristicProposer final : public Proposer {
 public:
  ProposerReply propose(const ProposerAction& action, const ProposalContext& ctx) override {
    return heuristic_propose(action, ctx);
  }
  std::string id() const override { return "heuristic"; }
};

struct RemoteConfig {
  std::string base_url;  // e.g. http://127.0.0.1:8000/v1
  std::string api_key;
  std::string model;
  double temperature = 0.2;
  int retry_budget = 3;
  double backoff_base_seconds = 0.5;
  double timeout_seconds = 120.0;

  /// Reads COVERAGE_PILOT_API_BASE / _API_KEY / _MODEL. Throws std::invalid_argument
  /// naming the missing variables.
  static RemoteConfig from_env();
};

/// One planning exchange over the chat-completions protocol.
ProposerReply remote_propose(const ProposerAction& action, const ProposalContext& ctx,
                             const RemoteConfig& config);

class RemoteProposer final : public Proposer {
 public:
  explicit RemoteProposer(RemoteConfig config) : config_(std::move(config)) {}
  ProposerReply propose(const ProposerAction& action, const ProposalContext& ctx) override {
    return remote_propose(action, ctx, config_);
  }
  std::string id() const override { return "remote:" + config_.model; }

 private:
  RemoteConfig config_;
};

}  // namespace cpilot
