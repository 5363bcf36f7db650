#pragma once

// Shared fixtures for the unit tests: brute-force tallies that do not reuse library code,
// random map and path builders, and a scripted proposer.

#include <cstdint>
#include <deque>
#include <filesystem>
#include <map>
#include <queue>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "coverage_pilot/gridworld.hpp"
#include "coverage_pilot/proposer.hpp"

namespace cptest {

using namespace cpilot;

/// Empty map of the given size, start at (0, 0) unless told otherwise.
inline GridMap open_map(int width, int height, Cell start = {0, 0}) { return GridMap(width, height, {}, start); }

/// Plain visit tally over a waypoint list: cell -> occurrences.
inline std::map<std::pair<int, int>, int> tally(const std::vector<Cell>& cells) {
  std::map<std::pair<int, int>, int> out;
  for (Cell c : cells) ++out[{c.row, c.col}];
  return out;
}

struct Tally {
  int free = 0, visited = 0, revisited = 0;
};

/// Counts by scanning every cell of raw count arrays.
inline Tally brute_sets(const GridMap& map, const std::vector<std::vector<int>>& counts) {
  Tally t;
  for (int r = 0; r < map.height(); ++r) {
    for (int c = 0; c < map.width(); ++c) {
      if (map.occupancy()(r, c) == 0) ++t.free;
      if (counts[r][c] >= 1) ++t.visited;
      if (counts[r][c] >= 2) ++t.revisited;
    }
  }
  return t;
}

/// Independent four-connected flood fill from the start cell.
inline bool flood_connected(const GridMap& map) {
  const int h = map.height(), w = map.width();
  std::vector<char> seen(static_cast<std::size_t>(h * w), 0);
  std::queue<Cell> q;
  q.push(map.start());
  seen[map.start().row * w + map.start().col] = 1;
  int reached = 1;
  const int dr[] = {-1, 1, 0, 0}, dc[] = {0, 0, -1, 1};
  while (!q.empty()) {
    const Cell c = q.front();
    q.pop();
    for (int k = 0; k < 4; ++k) {
      const int r = c.row + dr[k], cc = c.col + dc[k];
      if (r < 0 || cc < 0 || r >= h || cc >= w) continue;
      if (map.occupancy()(r, cc) != 0 || seen[r * w + cc]) continue;
      seen[r * w + cc] = 1;
      ++reached;
      q.push({r, cc});
    }
  }
  int free = 0;
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) free += map.occupancy()(r, c) == 0;
  return reached == free;
}

/// Random walk over free cells starting at `from`; always four-connected and obstacle-free.
inline Trajectory random_walk(const GridMap& map, Cell from, int length, std::mt19937_64& rng) {
  std::vector<Cell> cells{from};
  for (int i = 1; i < length; ++i) {
    const auto next = map.free_neighbors(cells.back());
    if (next.empty()) break;
    cells.push_back(next[std::uniform_int_distribution<std::size_t>(0, next.size() - 1)(rng)]);
  }
  return Trajectory(std::move(cells));
}

/// Row-by-row serpentine over an empty map: right along even rows, left along odd rows.
inline Trajectory serpentine(int width, int height) {
  std::vector<Cell> cells;
  for (int r = 0; r < height; ++r) {
    for (int i = 0; i < width; ++i) cells.push_back({r, r % 2 == 0 ? i : width - 1 - i});
  }
  return Trajectory(std::move(cells));
}

/// Replies come from per-action queues in call order. Evaluate replies are (score, explore).
/// An empty queue is a test bug and throws.
class ScriptedProposer final : public Proposer {
 public:
  std::map<ActionKind, std::deque<std::string>> raw;
  std::vector<ProposerAction> received;
  std::vector<std::string> instructions;

  void script(ActionKind kind, std::string reply) { raw[kind].push_back(std::move(reply)); }
  void script_trajectory(ActionKind kind, const Trajectory& t) { script(kind, trajectory_to_text(t)); }
  void script_evaluation(double score, bool explore) {
    script(ActionKind::Evaluate,
           "SCORE: " + std::to_string(score) + "\nVERDICT: " + (explore ? "CONTINUE" : "STOP"));
  }

  ProposerReply propose(const ProposerAction& action, const ProposalContext& ctx) override {
    received.push_back(action);
    instructions.push_back(ctx.instruction.text);
    auto& q = raw[action.kind];
    if (q.empty()) throw std::logic_error("scripted proposer ran out of " + to_string(action.kind) + " replies");
    const std::string text = q.front();
    q.pop_front();
    try {
      return parse_reply(action.kind, text);
    } catch (const ReplyParseError& e) {
      ProposerReply r;
      r.raw = text;
      r.parse_error = e.what();
      return r;
    }
  }
  std::string id() const override { return "scripted"; }
};

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::mt19937_64 rng(std::random_device{}());
    path_ = std::filesystem::temp_directory_path() / ("cpilot-" + tag + "-" + std::to_string(rng()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace cptest
