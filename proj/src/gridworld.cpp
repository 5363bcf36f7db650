#include "coverage_pilot/gridworld.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <queue>
#include <random>
#include <sstream>

#include "coverage_pilot/json_io.hpp"

namespace cpilot {

std::string to_string(Cell c) {
  return "(" + std::to_string(c.row) + ", " + std::to_string(c.col) + ")";
}

GridMap::GridMap(int width, int height, const std::vector<Cell>& obstacles, Cell start)
    : start_(start) {
  if (width < 1 || height < 1) {
    throw std::invalid_argument("map dimensions must be at least 1x1");
  }
  occupancy_ = OccupancyArray::Zero(height, width);
  for (const Cell& c : obstacles) {
    if (!in_bounds(c)) {
      throw std::invalid_argument("obstacle " + to_string(c) + " is outside the map");
    }
    occupancy_(c.row, c.col) = 1;
  }
  if (!in_bounds(start_)) {
    throw std::invalid_argument("start " + to_string(start_) + " is outside the map");
  }
  if (is_obstacle(start_)) {
    throw std::invalid_argument("start " + to_string(start_) + " is an obstacle cell");
  }
}

GridMap::GridMap(OccupancyArray occupancy, Cell start)
    : occupancy_(std::move(occupancy)), start_(start) {
  if (occupancy_.rows() < 1 || occupancy_.cols() < 1) {
    throw std::invalid_argument("map dimensions must be at least 1x1");
  }
  occupancy_ = occupancy_.min(std::uint8_t{1});
  if (!in_bounds(start_) || is_obstacle(start_)) {
    throw std::invalid_argument("start " + to_string(start_) + " must be a free cell inside the map");
  }
}

int GridMap::free_count() const {
  return static_cast<int>((occupancy_ == 0).count());
}

std::vector<Cell> GridMap::obstacles() const {
  std::vector<Cell> out;
  for (int r = 0; r < height(); ++r) {
    for (int c = 0; c < width(); ++c) {
      if (occupancy_(r, c) != 0) out.push_back({r, c});
    }
  }
  return out;
}

std::vector<Cell> GridMap::free_neighbors(Cell c) const {
  static constexpr int kDr[4] = {-1, 1, 0, 0};
  static constexpr int kDc[4] = {0, 0, -1, 1};
  std::vector<Cell> out;
  out.reserve(4);
  for (int k = 0; k < 4; ++k) {
    Cell n{c.row + kDr[k], c.col + kDc[k]};
    if (is_free(n)) out.push_back(n);
  }
  return out;
}

bool GridMap::operator==(const GridMap& other) const {
  return start_ == other.start_ && width() == other.width() && height() == other.height() &&
         (occupancy_ == other.occupancy_).all();
}

std::vector<Cell> unreachable_free_cells(const GridMap& map) {
  Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> seen =
      decltype(seen)::Constant(map.height(), map.width(), false);
  std::queue<Cell> frontier;
  frontier.push(map.start());
  seen(map.start().row, map.start().col) = true;
  while (!frontier.empty()) {
    Cell c = frontier.front();
    frontier.pop();
    for (Cell n : map.free_neighbors(c)) {
      if (!seen(n.row, n.col)) {
        seen(n.row, n.col) = true;
        frontier.push(n);
      }
    }
  }
  std::vector<Cell> out;
  for (int r = 0; r < map.height(); ++r) {
    for (int c = 0; c < map.width(); ++c) {
      if (!map.is_obstacle({r, c}) && !seen(r, c)) out.push_back({r, c});
    }
  }
  return out;
}

ValidityReport validate_path(const GridMap& map, const Trajectory& path) {
  ValidityReport report;
  for (std::size_t i = 0; i < path.size(); ++i) {
    const Cell c = path[i];
    if (!map.in_bounds(c)) {
      report.out_of_bounds.push_back({i, c});
    } else if (map.is_obstacle(c)) {
      report.collisions.push_back({i, c});
    }
    if (i > 0 && manhattan(path[i - 1], c) != 1) report.breaks.push_back(i);
  }
  report.valid = report.collisions.empty() && report.breaks.empty() && report.out_of_bounds.empty();
  return report;
}

std::string describe_violations(const ValidityReport& report) {
  std::ostringstream out;
  for (const auto& [index, cell] : report.collisions) {
    out << "Error: path enters no-fly zone at coordinates " << to_string(cell) << " (waypoint "
        << index << ").\n";
  }
  for (const auto& [index, cell] : report.out_of_bounds) {
    out << "Error: path leaves the map at coordinates " << to_string(cell) << " (waypoint "
        << index << ").\n";
  }
  for (std::size_t index : report.breaks) {
    out << "Error: path breaks four-connectivity between waypoints " << index - 1 << " and "
        << index << ".\n";
  }
  std::string text = out.str();
  if (!text.empty()) text.pop_back();
  return text;
}

InvalidPathError::InvalidPathError(ValidityReport report)
    : std::runtime_error("invalid path: " + describe_violations(report)),
      report_(std::move(report)) {}

CoverageMap::CoverageMap(const GridMap& map) : counts_(CountArray::Zero(map.height(), map.width())) {}

CoverageMap::CoverageMap(CountArray counts) : counts_(std::move(counts)) {
  if ((counts_ < 0).any()) throw std::invalid_argument("visit counts must be nonnegative");
}

CoverageMap CoverageMap::visited(Cell c) const {
  CoverageMap out = *this;
  out.counts_(c.row, c.col) += 1;
  return out;
}

bool CoverageMap::operator==(const CoverageMap& other) const {
  return width() == other.width() && height() == other.height() &&
         (counts_ == other.counts_).all();
}

CoverageMap launch_coverage(const GridMap& map) {
  return CoverageMap(map).visited(map.start());
}

CoverageMap apply_path(const CoverageMap& coverage, const GridMap& map, const Trajectory& path) {
  if (!coverage.matches(map)) throw DimensionMismatch("coverage and map dimensions differ");
  ValidityReport report = validate_path(map, path);
  if (!report.valid) throw InvalidPathError(std::move(report));
  CountArray counts = coverage.counts();
  for (const Cell& c : path) counts(c.row, c.col) += 1;
  return CoverageMap(std::move(counts));
}

CoverageSets coverage_sets(const CoverageMap& coverage, const GridMap& map) {
  if (!coverage.matches(map)) throw DimensionMismatch("coverage and map dimensions differ");
  const auto free_mask = map.occupancy() == 0;
  return {
      static_cast<int>(free_mask.count()),
      static_cast<int>((free_mask && coverage.counts() >= 1).count()),
      static_cast<int>((free_mask && coverage.counts() >= 2).count()),
  };
}

GridMap generate_map(int width, int height, double obstacle_density, std::uint64_t seed) {
  if (width < 1 || height < 1) throw std::invalid_argument("map dimensions must be at least 1x1");
  if (!(obstacle_density >= 0.0 && obstacle_density < 1.0)) {
    throw std::invalid_argument("obstacle density must lie in [0, 1)");
  }
  const int cells = width * height;
  const int n_obstacles = static_cast<int>(std::lround(obstacle_density * cells));
  if (n_obstacles > cells - 1) {
    throw MapGenerationError("obstacle density leaves no free cell");
  }
  constexpr int kRetryBudget = 500;
  const Cell start{0, 0};

  std::mt19937_64 rng(seed);
  // Candidate obstacle positions exclude the start cell (index 0).
  std::vector<int> candidates(cells - 1);
  for (int i = 0; i < cells - 1; ++i) candidates[i] = i + 1;

  for (int attempt = 0; attempt < kRetryBudget; ++attempt) {
    // Partial Fisher-Yates: the first n_obstacles entries become obstacles.
    for (int i = 0; i < n_obstacles; ++i) {
      std::uniform_int_distribution<int> pick(i, cells - 2);
      std::swap(candidates[i], candidates[pick(rng)]);
    }
    OccupancyArray occ = OccupancyArray::Zero(height, width);
    for (int i = 0; i < n_obstacles; ++i) {
      occ(candidates[i] / width, candidates[i] % width) = 1;
    }
    GridMap map(std::move(occ), start);
    if (is_connected(map)) return map;
  }
  throw MapGenerationError("could not produce a connected free region within " +
                           std::to_string(kRetryBudget) + " attempts");
}

double density_of(DensityTier tier) {
  switch (tier) {
    case DensityTier::Sparse: return 0.05;
    case DensityTier::Medium: return 0.15;
    case DensityTier::Dense: return 0.25;
  }
  return 0.0;
}

std::string to_string(DensityTier tier) {
  switch (tier) {
    case DensityTier::Sparse: return "sparse";
    case DensityTier::Medium: return "medium";
    case DensityTier::Dense: return "dense";
  }
  return "?";
}

DensityTier parse_density_tier(const std::string& name) {
  if (name == "sparse") return DensityTier::Sparse;
  if (name == "medium") return DensityTier::Medium;
  if (name == "dense") return DensityTier::Dense;
  throw std::invalid_argument("unknown density tier '" + name + "' (expected sparse|medium|dense)");
}

std::string map_to_text(const GridMap& map) {
  // Canonical layout so that save(load(text)) reproduces text byte for byte.
  std::ostringstream out;
  out << "{\n  \"width\": " << map.width() << ",\n  \"height\": " << map.height()
      << ",\n  \"start\": [" << map.start().row << ", " << map.start().col
      << "],\n  \"obstacles\": [";
  const auto obstacles = map.obstacles();
  for (std::size_t i = 0; i < obstacles.size(); ++i) {
    out << (i == 0 ? "" : ", ") << "[" << obstacles[i].row << ", " << obstacles[i].col << "]";
  }
  out << "]\n}\n";
  return out.str();
}

GridMap map_from_text(const std::string& text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw MapFormatError("", std::string("not a valid map document: ") + e.what());
  }
  return map_from_json(j);
}

void save_map(const GridMap& map, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write map file " + path.string());
  out << map_to_text(map);
}

GridMap load_map(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read map file " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return map_from_text(buf.str());
}

}  // namespace cpilot
