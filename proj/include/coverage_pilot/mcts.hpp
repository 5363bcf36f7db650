#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "coverage_pilot/gridworld.hpp"
#include "coverage_pilot/json_io.hpp"
#include "coverage_pilot/proposer.hpp"

namespace cpilot {

struct RewardWeights {
  double c1 = 1.0;  // coverage
  double c2 = 0.5;  // revisit penalty
  double c3 = 0.5;  // instruction compliance
};

struct MctsConfig {
  double omega = 1.4;
  double epsilon = 1e-6;
  double alpha = 0.5;
  RewardWeights weights;
  int n_rollouts = 8;
  int max_depth = 6;
  double terminal_cr = 0.95;

  /// Throws std::invalid_argument naming the first out-of-range field.
  void validate() const;
};

Json to_json(const MctsConfig& config);
/// Overlays the fields present in `j` onto `base`.
MctsConfig mcts_config_from_json(const Json& j, MctsConfig base = {});

/// Q + omega * sqrt(ln(n_parent + 1) / (n_self + epsilon)).
double uct_score(double q, int n_self, int n_parent, double omega, double epsilon);

/// Search reward of a trajectory flown from `coverage_before`: coverage gain minus revisit
/// penalty plus weighted compliance; 0 when invalid.
/// The first waypoint is the vehicle's current cell and is not recounted.
double score_trajectory(const Trajectory& trajectory, bool valid, const GridMap& map,
                        const CoverageMap& coverage_before, const RewardWeights& weights,
                        double compliance);

using NodeId = std::size_t;

struct SearchNode {
  NodeId id = 0;
  Trajectory trajectory;
  double q_value = 0.0;
  /// Reward of this node's own trajectory (Q before any back-propagation).
  double reward = 0.0;
  int visits = 0;
  std::optional<NodeId> parent;
  std::vector<NodeId> children;
  ActionKind produced_by = ActionKind::Generate;
  std::optional<std::string> feedback;
  bool valid = false;
  double compliance = 0.0;
  std::optional<bool> explore_further;
  int depth = 0;
  /// Simulated coverage fraction after flying the trajectory.
  double coverage_fraction = 0.0;
};

double score_node(const SearchNode& node, const GridMap& map, const CoverageMap& coverage_before,
                  const RewardWeights& weights, double compliance);

class SearchTree {
 public:
  NodeId add(SearchNode node);
  const SearchNode& node(NodeId id) const { return nodes_.at(id); }
  SearchNode& node(NodeId id) { return nodes_.at(id); }
  const SearchNode& root() const { return nodes_.front(); }
  std::size_t size() const { return nodes_.size(); }
  bool empty() const { return nodes_.empty(); }
  const std::vector<SearchNode>& nodes() const { return nodes_; }

 private:
  std::vector<SearchNode> nodes_;
};

/// Child of `parent` with the highest UCT score, lowest id on ties. nullopt for a leaf.
std::optional<NodeId> best_child(const SearchTree& tree, NodeId parent, const MctsConfig& config);

/// Descends from the root by UCT until reaching a node without children.
NodeId select_leaf(const SearchTree& tree, const MctsConfig& config);

/// Q(s) <- (1 - alpha) Q(s) + alpha max_child Q for every ancestor of `from`, nearest first.
void backpropagate(SearchTree& tree, NodeId from, double alpha);

/// Planning problem handed to the search: x = (map, coverage, instruction) plus the
/// vehicle's current cell, where every trajectory must begin.
struct SearchInput {
  const GridMap& map;
  const CoverageMap& coverage;
  Instruction instruction;
  Cell start;
};

class ApplicabilityError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Actions allowed on a node: Generate only at the root, Regenerate only on violations,
/// Finetune/Evaluate only on valid nodes.
std::vector<ActionKind> applicable_actions(const SearchTree& tree, NodeId id);

/// Carries proposer-call bookkeeping across expansions of one search.
struct ExpansionContext {
  Proposer& proposer;
  const SearchInput& input;
  const MctsConfig& config;
  std::uint64_t seed = 0;
  std::uint64_t calls = 0;
  double latency_seconds = 0.0;

  std::uint64_t next_seed();
};

/// Creates the root from a Generate reply. Throws BackendUnavailable.
NodeId expand_root(SearchTree& tree, ExpansionContext& ctx);

/// Applies `action` at `id`. Trajectory actions attach and score a new child and return its
/// id; Evaluate refreshes the node's compliance and verdict and returns `id`.
/// Throws ApplicabilityError when the action is not allowed there.
NodeId expand(SearchTree& tree, NodeId id, ActionKind action, ExpansionContext& ctx);

/// Chooses among applicable actions; the default draws uniformly.
using ActionPolicy =
    std::function<ActionKind(const std::vector<ActionKind>& applicable, const SearchNode& node,
                             std::mt19937_64& rng)>;

struct SearchHooks {
  ActionPolicy policy;
  std::function<void(int rollout)> on_rollout;
};

struct Candidate {
  int rollout = -1;  // -1 for the root
  NodeId node = 0;
  Trajectory trajectory;
  double score = 0.0;
};

struct RolloutEvent {
  int rollout = -1;
  ActionKind action = ActionKind::Generate;
  /// Node the rollout stood on when the action was drawn (nullopt for root creation).
  std::optional<NodeId> source;
  NodeId node = 0;
  std::optional<NodeId> parent;
  double q = 0.0;
  bool valid = false;
};

struct SearchResult {
  std::vector<Candidate> candidates;
  Trajectory best;
  double best_q = 0.0;
  std::size_t best_index = 0;
  SearchTree tree;
  std::vector<RolloutEvent> rollout_log;
  std::optional<std::string> error;
  std::uint64_t proposer_calls = 0;
  double proposer_latency_seconds = 0.0;

  const Candidate& best_candidate() const { return candidates.at(best_index); }
};

/// Full search: root via Generate, then n_rollouts descents of expand / score /
/// back-propagate / UCT-descend. A rollout stops at a terminal node: depth >= max_depth,
/// simulated coverage >= terminal_cr, or an evaluation verdict of STOP (the root is never
/// terminal). Throws BackendUnavailable only if the root cannot be generated.
SearchResult run_search(const SearchInput& input, Proposer& proposer, const MctsConfig& config,
                        std::uint64_t seed, const SearchHooks& hooks = {});

/// One JSON object per line: rollout, action, node, parent, q, valid.
void write_rollout_log(const SearchResult& result, const std::filesystem::path& path);

}  // namespace cpilot
