// Offline stand-in for the language-model proposer.

#include <algorithm>
#include <deque>
#include <iomanip>
#include <limits>
#include <queue>
#include <sstream>
#include <tuple>

#include "coverage_pilot/proposer.hpp"

namespace cpilot {

namespace {

using Mask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Seeded planner variant: sweep orientation plus neighbour-ordering flags.
struct Variant {
  bool column_major = false;
  bool flip_rows = false;
  bool flip_cols = false;
  bool warnsdorff = true;   // prefer neighbours with few pending neighbours
  bool keep_heading = false;

  static Variant from_seed(std::uint64_t seed) {
    if (seed == 0) return {};
    const std::uint64_t bits = splitmix64(seed);
    return {(bits & 1) != 0, (bits & 2) != 0, (bits & 4) != 0, (bits & 8) == 0, (bits & 16) != 0};
  }

  // Boustrophedon position of c; lower ranks are swept first.
  int rank(Cell c, int width, int height) const {
    int r = flip_rows ? height - 1 - c.row : c.row;
    int k = flip_cols ? width - 1 - c.col : c.col;
    int lanes = width;
    if (column_major) {
      std::swap(r, k);
      lanes = height;
    }
    return r * lanes + (r % 2 == 0 ? k : lanes - 1 - k);
  }
};

// Walk under construction: visit counts (mission coverage plus the path so far), the cells
// still to cover, and the waypoints emitted.
struct WalkState {
  CountArray counts;
  Mask pending;
  Cell cur;
  Cell heading{0, 0};
  std::vector<Cell> path;

  int revisited() const { return static_cast<int>((counts >= 2).count()); }
};

class CoverPlanner {
 public:
  CoverPlanner(const GridMap& map, Variant variant) : map_(map), variant_(variant) {}

  WalkState start_walk(Cell start, const CountArray& counts, Mask pending) const {
    WalkState s{counts, std::move(pending), start, {0, 0}, {start}};
    s.pending(start.row, start.col) = false;
    return s;
  }

  /// Greedy path from `start` visiting every pending cell; priority cells are taken first.
  Trajectory cover(Cell start, const CountArray& counts, Mask pending, const Mask* priority) const {
    WalkState s = start_walk(start, counts, std::move(pending));
    complete_greedily(s, priority);
    return Trajectory(std::move(s.path));
  }

  /// Same contract as cover(), but each decision is taken by completing every option
  /// greedily and keeping the one whose finished walk revisits the fewest cells.
  Trajectory cover_lookahead(Cell start, const CountArray& counts, Mask pending,
                             const Mask* priority) const {
    WalkState s = start_walk(start, counts, std::move(pending));
    while (s.pending.any()) {
      const std::vector<Cell> opts = options(s, priority);
      if (opts.empty()) break;
      std::optional<Cell> best;
      std::pair<int, std::tuple<int, int, int>> best_key{};
      for (Cell o : opts) {
        WalkState trial = s;
        advance(trial, o, priority);
        complete_greedily(trial, priority);
        const std::pair<int, std::tuple<int, int, int>> key{trial.revisited(), greedy_key(s, o)};
        if (!best || key < best_key) {
          best = o;
          best_key = key;
        }
      }
      advance(s, *best, priority);
    }
    return Trajectory(std::move(s.path));
  }

  /// Shortest free-cell path from a to b, excluding a. Empty if unreachable or a == b.
  std::vector<Cell> route(Cell a, Cell b) const {
    if (a == b) return {};
    const int h = map_.height(), w = map_.width();
    std::vector<int> dist(static_cast<std::size_t>(h * w), -1);
    std::vector<Cell> parent(static_cast<std::size_t>(h * w), Cell{-1, -1});
    std::queue<Cell> frontier;
    frontier.push(a);
    dist[index(a)] = 0;
    while (!frontier.empty() && dist[index(b)] < 0) {
      const Cell c = frontier.front();
      frontier.pop();
      for (Cell n : map_.free_neighbors(c)) {
        if (dist[index(n)] >= 0) continue;
        dist[index(n)] = dist[index(c)] + 1;
        parent[index(n)] = c;
        frontier.push(n);
      }
    }
    std::vector<Cell> leg;
    if (dist[index(b)] < 0) return leg;
    for (Cell c = b; c != a; c = parent[index(c)]) leg.push_back(c);
    std::reverse(leg.begin(), leg.end());
    return leg;
  }

 private:
  std::size_t index(Cell c) const { return static_cast<std::size_t>(c.row * map_.width() + c.col); }

  Mask pool_of(const WalkState& s, const Mask* priority) const {
    if (priority != nullptr && (s.pending && *priority).any()) return s.pending && *priority;
    return s.pending;
  }

  int pending_degree(Cell c, const Mask& pending) const {
    int d = 0;
    for (Cell n : map_.free_neighbors(c)) d += pending(n.row, n.col) ? 1 : 0;
    return d;
  }

  std::tuple<int, int, int> greedy_key(const WalkState& s, Cell n) const {
    const int degree = variant_.warnsdorff ? pending_degree(n, s.pending) : 0;
    const bool adjacent = manhattan(n, s.cur) == 1;
    const bool straight = adjacent && Cell{n.row - s.cur.row, n.col - s.cur.col} == s.heading;
    const int turn = variant_.keep_heading && !straight ? 1 : 0;
    return {degree, turn, variant_.rank(n, map_.width(), map_.height())};
  }

  // Pending neighbours in the pool, or else the pool cells reachable with the fewest
  // additional revisits (cells already visited twice are free to cross).
  std::vector<Cell> options(const WalkState& s, const Mask* priority) const {
    const Mask pool = pool_of(s, priority);
    std::vector<Cell> out;
    for (Cell n : map_.free_neighbors(s.cur)) {
      if (pool(n.row, n.col)) out.push_back(n);
    }
    if (!out.empty()) return out;
    const auto [dist, parent] = revisit_distances(s, pool);
    int best = std::numeric_limits<int>::max();
    for (int r = 0; r < map_.height(); ++r) {
      for (int c = 0; c < map_.width(); ++c) {
        const int d = dist[index({r, c})];
        if (!pool(r, c) || d < 0) continue;
        if (d < best) {
          best = d;
          out.clear();
        }
        if (d == best) out.push_back({r, c});
      }
    }
    return out;
  }

  // 0-1 BFS from s.cur. Stepping onto a once-visited cell costs 1 (it becomes a revisit), as
  // does crossing an unvisited cell that is not wanted; other steps are free. Pool cells are
  // endpoints and are not expanded.
  std::pair<std::vector<int>, std::vector<Cell>> revisit_distances(const WalkState& s,
                                                                   const Mask& pool) const {
    const std::size_t n = static_cast<std::size_t>(map_.height() * map_.width());
    std::vector<int> dist(n, -1);
    std::vector<int> best(n, std::numeric_limits<int>::max());
    std::vector<Cell> parent(n, Cell{-1, -1});
    std::deque<Cell> dq;
    best[index(s.cur)] = 0;
    dq.push_back(s.cur);
    while (!dq.empty()) {
      const Cell c = dq.front();
      dq.pop_front();
      if (dist[index(c)] >= 0) continue;
      dist[index(c)] = best[index(c)];
      if (c != s.cur && pool(c.row, c.col)) continue;
      for (Cell nb : map_.free_neighbors(c)) {
        const int count = s.counts(nb.row, nb.col);
        const int w = count == 1 || (count == 0 && !s.pending(nb.row, nb.col)) ? 1 : 0;
        if (dist[index(nb)] >= 0 || best[index(c)] + w >= best[index(nb)]) continue;
        best[index(nb)] = best[index(c)] + w;
        parent[index(nb)] = c;
        if (w) dq.push_back(nb); else dq.push_front(nb);
      }
    }
    return {std::move(dist), std::move(parent)};
  }

  void visit(WalkState& s, Cell c) const {
    s.heading = {c.row - s.cur.row, c.col - s.cur.col};
    s.cur = c;
    s.path.push_back(c);
    s.counts(c.row, c.col) += 1;
    s.pending(c.row, c.col) = false;
  }

  void advance(WalkState& s, Cell target, const Mask* priority) const {
    if (manhattan(target, s.cur) != 1) {
      const auto [dist, parent] = revisit_distances(s, pool_of(s, priority));
      std::vector<Cell> leg;
      for (Cell c = target; c != s.cur; c = parent[index(c)]) leg.push_back(c);
      for (auto it = leg.rbegin(); it != leg.rend(); ++it) visit(s, *it);
      return;
    }
    visit(s, target);
  }

  void complete_greedily(WalkState& s, const Mask* priority) const {
    while (s.pending.any()) {
      const std::vector<Cell> opts = options(s, priority);
      if (opts.empty()) break;  // the rest is unreachable
      Cell best = opts.front();
      auto best_key = greedy_key(s, best);
      for (std::size_t i = 1; i < opts.size(); ++i) {
        const auto key = greedy_key(s, opts[i]);
        if (key < best_key) {
          best_key = key;
          best = opts[i];
        }
      }
      advance(s, best, priority);
    }
  }

  const GridMap& map_;
  Variant variant_;
};

Mask pending_cells(const ProposalContext& ctx) {
  const GridMap& map = ctx.map;
  Mask pending = (map.occupancy() == 0) && (ctx.coverage.counts() == 0);
  if (map.in_bounds(ctx.start)) pending(ctx.start.row, ctx.start.col) = false;
  return pending;
}

Mask region_mask(const GridMap& map, Region region) {
  Mask m(map.height(), map.width());
  for (int r = 0; r < map.height(); ++r) {
    for (int c = 0; c < map.width(); ++c) m(r, c) = in_region(region, map, {r, c});
  }
  return m;
}

enum class Effort { Sweep, Greedy, Lookahead };

Trajectory plan_for_intent(const ProposalContext& ctx, const InstructionIntent& intent, Variant variant,
                           Effort effort = Effort::Greedy) {
  if (effort == Effort::Sweep) {
    variant.warnsdorff = false;
    variant.keep_heading = false;
  }
  CoverPlanner planner(ctx.map, variant);
  const CountArray& counts = ctx.coverage.counts();
  Mask pending = pending_cells(ctx);
  const Mask* priority = nullptr;
  Mask region;
  if (intent.region != Region::Whole) {
    region = region_mask(ctx.map, intent.region);
    if (intent.mode == InstructionMode::Rapid) {
      // Cover everything outside the named area first, crossing it only when routing demands.
      // Once nothing else is left, the area itself is all that remains to fly.
      const Mask outside = pending && !region;
      if (outside.any()) pending = outside;
    } else {
      priority = &region;
    }
  }
  return effort == Effort::Lookahead ? planner.cover_lookahead(ctx.start, counts, std::move(pending), priority)
                                     : planner.cover(ctx.start, counts, std::move(pending), priority);
}

bool flyable(const ProposalContext& ctx, const Trajectory& t) {
  return !t.empty() && t.front() == ctx.start && validate_path(ctx.map, t).valid;
}

/// Reconnects the usable waypoints of `prior` with shortest detours, starting at ctx.start.
Trajectory repair(const ProposalContext& ctx, const Trajectory& prior, std::uint64_t seed) {
  CoverPlanner planner(ctx.map, Variant::from_seed(seed));
  Trajectory out{ctx.start};
  for (const Cell& c : prior) {
    if (!ctx.map.is_free(c) || c == out.back()) continue;
    if (manhattan(c, out.back()) == 1) {
      out.waypoints.push_back(c);
      continue;
    }
    auto leg = planner.route(out.back(), c);
    out.waypoints.insert(out.waypoints.end(), leg.begin(), leg.end());
  }
  return out;
}

/// Drops trailing waypoints that add no new coverage.
Trajectory trim_tail(const CoverageMap& coverage, const Trajectory& t) {
  if (t.size() <= 1) return t;
  CountArray counts = coverage.counts();
  std::size_t last_new = 0;
  for (std::size_t i = 1; i < t.size(); ++i) {
    if (counts(t[i].row, t[i].col) == 0) last_new = i;
    counts(t[i].row, t[i].col) += 1;
  }
  return Trajectory(std::vector<Cell>(t.begin(), t.begin() + static_cast<std::ptrdiff_t>(last_new) + 1));
}

// Same shape as the default search reward; used to keep the better of two refinements.
double local_value(const ProposalContext& ctx, const InstructionIntent& intent, const Trajectory& t) {
  const CoverageSets sets = coverage_sets(simulate_flight(ctx.coverage, t), ctx.map);
  const double cr = static_cast<double>(sets.visited) / sets.free;
  const double dr = sets.visited == 0 ? 0.0 : static_cast<double>(sets.revisited) / sets.visited;
  return cr - 0.5 * dr + 0.5 * heuristic_compliance(intent, ctx.map, ctx.coverage, t);
}

ProposerReply trajectory_reply(Trajectory t) {
  ProposerReply reply;
  reply.raw = trajectory_to_text(t);
  reply.trajectory = std::move(t);
  return reply;
}

}  // namespace

ProposerReply heuristic_propose(const ProposerAction& action, const ProposalContext& ctx) {
  action.check();
  if (!ctx.map.is_free(ctx.start)) throw std::invalid_argument("start must be a free cell");
  const InstructionIntent intent = parse_intent(ctx.instruction.text);

  switch (action.kind) {
    case ActionKind::Generate: {
      // The seeded sweep, then the seeded greedy walk, then every other sweep orientation;
      // the first one with the fewest revisits wins. Mid-mission this finds the orientation
      // that continues the sweep already flown.
      const auto revisits = [&](const Trajectory& t) {
        return coverage_sets(simulate_flight(ctx.coverage, t), ctx.map).revisited;
      };
      Trajectory best = plan_for_intent(ctx, intent, Variant::from_seed(ctx.seed), Effort::Sweep);
      int best_revisits = revisits(best);
      const auto consider = [&](Trajectory t) {
        const int r = revisits(t);
        if (r < best_revisits) {
          best = std::move(t);
          best_revisits = r;
        }
      };
      consider(plan_for_intent(ctx, intent, Variant::from_seed(ctx.seed), Effort::Greedy));
      for (int bits = 0; bits < 8 && best_revisits > 0; ++bits) {
        Variant v;
        v.column_major = (bits & 1) != 0;
        v.flip_rows = (bits & 2) != 0;
        v.flip_cols = (bits & 4) != 0;
        consider(plan_for_intent(ctx, intent, v, Effort::Sweep));
      }
      return trajectory_reply(std::move(best));
    }

    case ActionKind::Regenerate: {
      if (action.prior->empty()) return trajectory_reply(plan_for_intent(ctx, intent, Variant::from_seed(ctx.seed)));
      return trajectory_reply(repair(ctx, *action.prior, ctx.seed));
    }

    case ActionKind::Finetune: {
      Trajectory base = flyable(ctx, *action.prior) ? *action.prior : repair(ctx, *action.prior, ctx.seed);
      base = trim_tail(ctx.coverage, base);
      const Trajectory refined =
          trim_tail(ctx.coverage, plan_for_intent(ctx, intent, Variant::from_seed(ctx.seed), Effort::Lookahead));
      // The prior is kept unless the refinement is strictly better.
      return trajectory_reply(local_value(ctx, intent, refined) > local_value(ctx, intent, base) ? refined
                                                                                                : base);
    }

    case ActionKind::Evaluate: {
      ProposerReply reply;
      const Trajectory& path = *action.prior;
      if (!flyable(ctx, path)) {
        reply.compliance = 0.0;
        reply.explore_further = true;
      } else {
        reply.compliance = heuristic_compliance(intent, ctx.map, ctx.coverage, path);
        const CoverageSets sets = coverage_sets(simulate_flight(ctx.coverage, path), ctx.map);
        reply.explore_further =
            static_cast<double>(sets.visited) / static_cast<double>(sets.free) < ctx.terminal_cr;
      }
      std::ostringstream raw;
      raw << "SCORE: " << std::setprecision(6) << *reply.compliance << "\nVERDICT: "
          << (*reply.explore_further ? "CONTINUE" : "STOP");
      reply.raw = raw.str();
      return reply;
    }
  }
  throw std::logic_error("unhandled action kind");
}

}  // namespace cpilot
