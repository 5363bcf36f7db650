#pragma once

#include <compare>
#include <cstdint>
#include <filesystem>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace cpilot {

struct Cell {
  int row = 0;
  int col = 0;

  auto operator<=>(const Cell&) const = default;
};

inline int manhattan(Cell a, Cell b) {
  return std::abs(a.row - b.row) + std::abs(a.col - b.col);
}

std::string to_string(Cell c);  // "(r, c)"

/// Row-major occupancy grid; 1 marks an obstacle.
using OccupancyArray = Eigen::Array<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
/// Per-cell visit counts, same layout as the occupancy grid.
using CountArray = Eigen::Array<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Static workspace: free/obstacle partition plus the launch cell. Immutable once built.
class GridMap {
 public:
  /// Throws std::invalid_argument if dimensions are < 1, an obstacle is out of
  /// bounds, or the start cell is out of bounds or blocked.
  GridMap(int width, int height, const std::vector<Cell>& obstacles, Cell start);
  GridMap(OccupancyArray occupancy, Cell start);

  int width() const { return static_cast<int>(occupancy_.cols()); }
  int height() const { return static_cast<int>(occupancy_.rows()); }
  Cell start() const { return start_; }
  const OccupancyArray& occupancy() const { return occupancy_; }

  bool in_bounds(Cell c) const {
    return c.row >= 0 && c.col >= 0 && c.row < height() && c.col < width();
  }
  bool is_obstacle(Cell c) const { return occupancy_(c.row, c.col) != 0; }
  bool is_free(Cell c) const { return in_bounds(c) && !is_obstacle(c); }

  int free_count() const;
  int obstacle_count() const { return width() * height() - free_count(); }
  /// Obstacle cells in row-major order.
  std::vector<Cell> obstacles() const;
  /// Free four-neighbours of c.
  std::vector<Cell> free_neighbors(Cell c) const;

  bool operator==(const GridMap& other) const;

 private:
  OccupancyArray occupancy_;
  Cell start_;
};

/// Free cells not reachable from start through four-connected free cells.
std::vector<Cell> unreachable_free_cells(const GridMap& map);
inline bool is_connected(const GridMap& map) { return unreachable_free_cells(map).empty(); }

struct Trajectory {
  std::vector<Cell> waypoints;

  Trajectory() = default;
  Trajectory(std::initializer_list<Cell> cells) : waypoints(cells) {}
  explicit Trajectory(std::vector<Cell> cells) : waypoints(std::move(cells)) {}

  bool empty() const { return waypoints.empty(); }
  std::size_t size() const { return waypoints.size(); }
  const Cell& front() const { return waypoints.front(); }
  const Cell& back() const { return waypoints.back(); }
  auto begin() const { return waypoints.begin(); }
  auto end() const { return waypoints.end(); }
  const Cell& operator[](std::size_t i) const { return waypoints[i]; }

  bool operator==(const Trajectory&) const = default;
};

struct IndexedCell {
  std::size_t index;
  Cell cell;
  bool operator==(const IndexedCell&) const = default;
};

struct ValidityReport {
  bool valid = true;
  std::vector<IndexedCell> collisions;
  std::vector<std::size_t> breaks;  // index i where |p[i-1] - p[i]|_1 != 1
  std::vector<IndexedCell> out_of_bounds;
};

ValidityReport validate_path(const GridMap& map, const Trajectory& path);

/// Human-readable violation lines, one per violation, in the style the proposer receives as feedback.
std::string describe_violations(const ValidityReport& report);

class InvalidPathError : public std::runtime_error {
 public:
  explicit InvalidPathError(ValidityReport report);
  const ValidityReport& report() const { return report_; }

 private:
  ValidityReport report_;
};

class DimensionMismatch : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// M_t: visit multiplicity per cell. Values only; every update returns a new map.
class CoverageMap {
 public:
  /// All-zero coverage for the given map.
  explicit CoverageMap(const GridMap& map);
  explicit CoverageMap(CountArray counts);

  int width() const { return static_cast<int>(counts_.cols()); }
  int height() const { return static_cast<int>(counts_.rows()); }
  int count(Cell c) const { return counts_(c.row, c.col); }
  const CountArray& counts() const { return counts_; }

  bool matches(const GridMap& map) const {
    return width() == map.width() && height() == map.height();
  }
  /// Copy with cell c incremented once.
  CoverageMap visited(Cell c) const;

  bool operator==(const CoverageMap& other) const;

 private:
  CountArray counts_;
};

/// Coverage at launch: zero everywhere except the start cell, which the vehicle occupies.
CoverageMap launch_coverage(const GridMap& map);

/// Increments every waypoint once per occurrence. Throws InvalidPathError on an invalid path.
CoverageMap apply_path(const CoverageMap& coverage, const GridMap& map, const Trajectory& path);

struct CoverageSets {
  int free = 0;
  int visited = 0;
  int revisited = 0;
  bool operator==(const CoverageSets&) const = default;
};

/// (|C_free|, |C_visited|, |C_revisited|). Throws DimensionMismatch.
CoverageSets coverage_sets(const CoverageMap& coverage, const GridMap& map);

class MapGenerationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Random obstacle layout with start at (0, 0), regenerated until the free region is
/// four-connected. Deterministic for fixed arguments.
GridMap generate_map(int width, int height, double obstacle_density, std::uint64_t seed);

enum class DensityTier { Sparse, Medium, Dense };

double density_of(DensityTier tier);
std::string to_string(DensityTier tier);
DensityTier parse_density_tier(const std::string& name);

/// Malformed map document; field() names the offending member, e.g. "obstacles[3]".
class MapFormatError : public std::invalid_argument {
 public:
  MapFormatError(std::string field, const std::string& message)
      : std::invalid_argument(field + ": " + message), field_(std::move(field)) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

// Map files: {"width", "height", "start": [r, c], "obstacles": [[r, c], ...]}.
std::string map_to_text(const GridMap& map);
GridMap map_from_text(const std::string& text);
void save_map(const GridMap& map, const std::filesystem::path& path);
GridMap load_map(const std::filesystem::path& path);

}  // namespace cpilot
