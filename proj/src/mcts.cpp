#include "coverage_pilot/mcts.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace cpilot {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

bool is_terminal(const SearchNode& node, const MctsConfig& config) {
  if (!node.parent) return false;
  if (node.depth >= config.max_depth) return true;
  if (node.valid && node.coverage_fraction >= config.terminal_cr) return true;
  return node.explore_further.has_value() && !*node.explore_further;
}

double simulated_coverage_fraction(const SearchInput& input, const Trajectory& t) {
  const CoverageSets sets = coverage_sets(simulate_flight(input.coverage, t), input.map);
  return sets.free == 0 ? 0.0 : static_cast<double>(sets.visited) / sets.free;
}

ProposalContext proposal_context(ExpansionContext& ctx) {
  return ProposalContext{ctx.input.map, ctx.input.coverage, ctx.input.instruction,
                         ctx.input.start, ctx.next_seed(), ctx.config.terminal_cr};
}

ProposerReply call(ExpansionContext& ctx, const ProposerAction& action) {
  ProposerReply reply = ctx.proposer.propose(action, proposal_context(ctx));
  ctx.latency_seconds += reply.latency_seconds;
  return reply;
}

// Fills validity, feedback, compliance, reward and Q of a freshly proposed node.
void settle(SearchNode& node, const ProposerReply& reply, ExpansionContext& ctx) {
  const SearchInput& in = ctx.input;
  if (!reply.usable() || !reply.trajectory) {
    node.valid = false;
    node.feedback = "Error: proposer output could not be parsed (" +
                    reply.parse_error.value_or("no trajectory") + ").";
  } else {
    node.trajectory = *reply.trajectory;
    ValidityReport report = validate_path(in.map, node.trajectory);
    std::string feedback = describe_violations(report);
    bool valid = report.valid;
    if (node.trajectory.front() != in.start) {
      valid = false;
      if (!feedback.empty()) feedback += "\n";
      feedback += "Error: path must begin at the current position " + to_string(in.start) + ".";
    }
    node.valid = valid;
    if (!feedback.empty()) node.feedback = feedback;
  }

  if (node.valid) {
    node.coverage_fraction = simulated_coverage_fraction(in, node.trajectory);
    const ProposerReply verdict = call(ctx, ProposerAction::evaluate(node.trajectory));
    if (verdict.usable() && verdict.compliance) {
      node.compliance = std::clamp(*verdict.compliance, 0.0, 1.0);
      node.explore_further = verdict.explore_further;
    }
  }
  node.reward = score_node(node, in.map, in.coverage, ctx.config.weights, node.compliance);
  node.q_value = node.reward;
}

}  // namespace

void MctsConfig::validate() const {
  auto fail = [](const std::string& field, const std::string& rule) {
    throw std::invalid_argument("mcts." + field + " must be " + rule);
  };
  if (!(omega >= 0.0)) fail("omega", ">= 0");
  if (!(epsilon > 0.0)) fail("epsilon", "> 0");
  if (!(alpha > 0.0 && alpha <= 1.0)) fail("alpha", "in (0, 1]");
  if (!(weights.c1 > 0.0)) fail("c1", "> 0");
  if (!(weights.c2 > 0.0)) fail("c2", "> 0");
  if (!(weights.c3 > 0.0)) fail("c3", "> 0");
  if (n_rollouts < 0) fail("n_rollouts", ">= 0");
  if (max_depth < 1) fail("max_depth", ">= 1");
  if (!(terminal_cr >= 0.0 && terminal_cr <= 1.0)) fail("terminal_cr", "in [0, 1]");
}

Json to_json(const MctsConfig& config) {
  return Json{{"omega", config.omega},
              {"epsilon", config.epsilon},
              {"alpha", config.alpha},
              {"c1", config.weights.c1},
              {"c2", config.weights.c2},
              {"c3", config.weights.c3},
              {"n_rollouts", config.n_rollouts},
              {"max_depth", config.max_depth},
              {"terminal_cr", config.terminal_cr}};
}

MctsConfig mcts_config_from_json(const Json& j, MctsConfig base) {
  if (!j.is_object()) throw std::invalid_argument("mcts config must be an object");
  auto read = [&](const char* key, auto& field) {
    if (!j.contains(key)) return;
    try {
      field = j.at(key).get<std::remove_reference_t<decltype(field)>>();
    } catch (const Json::exception&) {
      throw std::invalid_argument(std::string("mcts.") + key + " has the wrong type");
    }
  };
  read("omega", base.omega);
  read("epsilon", base.epsilon);
  read("alpha", base.alpha);
  read("c1", base.weights.c1);
  read("c2", base.weights.c2);
  read("c3", base.weights.c3);
  read("n_rollouts", base.n_rollouts);
  read("max_depth", base.max_depth);
  read("terminal_cr", base.terminal_cr);
  base.validate();
  return base;
}

double uct_score(double q, int n_self, int n_parent, double omega, double epsilon) {
  return q + omega * std::sqrt(std::log(static_cast<double>(n_parent) + 1.0) /
                               (static_cast<double>(n_self) + epsilon));
}

double score_trajectory(const Trajectory& trajectory, bool valid, const GridMap& map,
                        const CoverageMap& coverage_before, const RewardWeights& weights,
                        double compliance) {
  if (!valid || trajectory.empty()) return 0.0;
  const CoverageSets sets = coverage_sets(simulate_flight(coverage_before, trajectory), map);
  const double coverage_term = static_cast<double>(sets.visited) / static_cast<double>(sets.free);
  const double revisit_term =
      sets.visited == 0 ? 0.0 : static_cast<double>(sets.revisited) / static_cast<double>(sets.visited);
  return weights.c1 * coverage_term - weights.c2 * revisit_term + weights.c3 * compliance;
}

double score_node(const SearchNode& node, const GridMap& map, const CoverageMap& coverage_before,
                  const RewardWeights& weights, double compliance) {
  return score_trajectory(node.trajectory, node.valid, map, coverage_before, weights, compliance);
}

NodeId SearchTree::add(SearchNode node) {
  node.id = nodes_.size();
  if (node.parent) {
    SearchNode& parent = nodes_.at(*node.parent);
    parent.children.push_back(node.id);
    node.depth = parent.depth + 1;
  } else if (!nodes_.empty()) {
    throw std::logic_error("search tree already has a root");
  }
  nodes_.push_back(std::move(node));
  return nodes_.back().id;
}

std::optional<NodeId> best_child(const SearchTree& tree, NodeId parent, const MctsConfig& config) {
  const SearchNode& p = tree.node(parent);
  std::optional<NodeId> best;
  double best_score = 0.0;
  for (NodeId id : p.children) {  // children are stored in increasing id order
    const SearchNode& c = tree.node(id);
    const double s = uct_score(c.q_value, c.visits, p.visits, config.omega, config.epsilon);
    if (!best || s > best_score) {
      best = id;
      best_score = s;
    }
  }
  return best;
}

NodeId select_leaf(const SearchTree& tree, const MctsConfig& config) {
  NodeId id = 0;
  while (auto next = best_child(tree, id, config)) id = *next;
  return id;
}

void backpropagate(SearchTree& tree, NodeId from, double alpha) {
  for (auto ancestor = tree.node(from).parent; ancestor; ancestor = tree.node(*ancestor).parent) {
    SearchNode& s = tree.node(*ancestor);
    double max_child = tree.node(s.children.front()).q_value;
    for (NodeId c : s.children) max_child = std::max(max_child, tree.node(c).q_value);
    s.q_value = (1.0 - alpha) * s.q_value + alpha * max_child;
  }
}

std::vector<ActionKind> applicable_actions(const SearchTree& tree, NodeId id) {
  const SearchNode& node = tree.node(id);
  std::vector<ActionKind> out;
  if (!node.parent) out.push_back(ActionKind::Generate);
  if (!node.valid) {
    out.push_back(ActionKind::Regenerate);
  } else {
    out.push_back(ActionKind::Finetune);
    out.push_back(ActionKind::Evaluate);
  }
  return out;
}

std::uint64_t ExpansionContext::next_seed() {
  ++calls;
  return splitmix64(seed ^ (calls * 0x9e3779b97f4a7c15ULL));
}

NodeId expand_root(SearchTree& tree, ExpansionContext& ctx) {
  SearchNode root;
  root.produced_by = ActionKind::Generate;
  settle(root, call(ctx, ProposerAction::generate()), ctx);
  return tree.add(std::move(root));
}

NodeId expand(SearchTree& tree, NodeId id, ActionKind action, ExpansionContext& ctx) {
  const auto allowed = applicable_actions(tree, id);
  if (std::find(allowed.begin(), allowed.end(), action) == allowed.end()) {
    throw ApplicabilityError(to_string(action) + " is not applicable at node " + std::to_string(id));
  }

  if (action == ActionKind::Evaluate) {
    const SearchNode& target = tree.node(id);
    const ProposerReply reply =
        call(ctx, ProposerAction::evaluate(target.trajectory, target.feedback));
    SearchNode& s = tree.node(id);
    if (reply.usable() && reply.compliance) {
      s.compliance = std::clamp(*reply.compliance, 0.0, 1.0);
      s.explore_further = reply.explore_further;
      s.reward = score_node(s, ctx.input.map, ctx.input.coverage, ctx.config.weights, s.compliance);
      if (s.children.empty()) s.q_value = s.reward;
    }
    return id;
  }

  ProposerAction request;
  const SearchNode& source = tree.node(id);
  switch (action) {
    case ActionKind::Generate:
      request = ProposerAction::generate();
      break;
    case ActionKind::Regenerate:
      request = ProposerAction::regenerate(source.trajectory,
                                           source.feedback.value_or("Error: path is infeasible."));
      break;
    case ActionKind::Finetune:
      request = ProposerAction::finetune(source.trajectory);
      break;
    case ActionKind::Evaluate:
      break;
  }
  const ProposerReply reply = call(ctx, request);
  SearchNode child;
  child.parent = id;
  child.produced_by = action;
  settle(child, reply, ctx);
  return tree.add(std::move(child));
}

SearchResult run_search(const SearchInput& input, Proposer& proposer, const MctsConfig& config,
                        std::uint64_t seed, const SearchHooks& hooks) {
  config.validate();
  if (!input.map.is_free(input.start)) throw std::invalid_argument("search start must be a free cell");
  if (!input.coverage.matches(input.map)) throw DimensionMismatch("coverage and map dimensions differ");

  SearchResult result;
  ExpansionContext ctx{proposer, input, config, seed};
  std::mt19937_64 rng(seed);
  const ActionPolicy policy =
      hooks.policy ? hooks.policy
                   : ActionPolicy([](const std::vector<ActionKind>& applicable, const SearchNode&,
                                     std::mt19937_64& gen) {
                       std::uniform_int_distribution<std::size_t> pick(0, applicable.size() - 1);
                       return applicable[pick(gen)];
                     });

  SearchTree& tree = result.tree;
  const NodeId root = expand_root(tree, ctx);
  result.rollout_log.push_back({-1, ActionKind::Generate, std::nullopt, root, std::nullopt,
                                tree.node(root).q_value, tree.node(root).valid});
  result.candidates.push_back({-1, root, tree.node(root).trajectory, tree.node(root).reward});

  // Keeps a rollout finite when the root is re-evaluated without gaining children.
  const int step_cap = 4 * config.max_depth + 4;
  for (int j = 0; j < config.n_rollouts && !result.error; ++j) {
    if (hooks.on_rollout) hooks.on_rollout(j);
    NodeId s = root;
    bool arrived = true;  // N(s) counts rollouts passing through s, not actions drawn there
    for (int step = 0; step < step_cap && !is_terminal(tree.node(s), config); ++step) {
      if (arrived) tree.node(s).visits += 1;
      arrived = false;
      const ActionKind action = policy(applicable_actions(tree, s), tree.node(s), rng);
      NodeId touched;
      try {
        touched = expand(tree, s, action, ctx);
      } catch (const BackendUnavailable& e) {
        result.error = e.what();
        break;
      }
      backpropagate(tree, touched, config.alpha);
      const SearchNode& t = tree.node(touched);
      result.rollout_log.push_back({j, action, s, touched, t.parent, t.q_value, t.valid});
      if (auto next = best_child(tree, s, config)) {
        s = *next;
        arrived = true;
      }
    }
    result.candidates.push_back({j, s, tree.node(s).trajectory, tree.node(s).reward});
  }

  // Rewards can change after extraction when a node is re-evaluated; report final values.
  for (Candidate& c : result.candidates) c.score = tree.node(c.node).reward;
  for (std::size_t i = 1; i < result.candidates.size(); ++i) {
    if (result.candidates[i].score > result.candidates[result.best_index].score) result.best_index = i;
  }
  result.best = result.candidates[result.best_index].trajectory;
  result.best_q = result.candidates[result.best_index].score;
  result.proposer_calls = ctx.calls;
  result.proposer_latency_seconds = ctx.latency_seconds;
  return result;
}

void write_rollout_log(const SearchResult& result, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write rollout log " + path.string());
  for (const RolloutEvent& e : result.rollout_log) {
    Json j{{"rollout", e.rollout},
           {"action", to_string(e.action)},
           {"source", e.source ? Json(*e.source) : Json(nullptr)},
           {"node", e.node},
           {"parent", e.parent ? Json(*e.parent) : Json(nullptr)},
           {"q", e.q},
           {"valid", e.valid}};
    out << j.dump() << "\n";
  }
}

}  // namespace cpilot
