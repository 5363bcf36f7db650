#pragma once

// Simulated planar radar and signed-distance-field scan matching.
//
// Continuous coordinates are in cell units: x runs along columns, y along rows,
// and cell (r, c) covers [c, c+1) x [r, r+1). Everything outside the map
// rectangle counts as occupied, so the map border behaves like a wall.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "coverage_pilot/gridworld.hpp"

namespace cpilot {

template <typename Scalar>
using Vec2 = Eigen::Matrix<Scalar, 2, 1>;

/// Wraps an angle into [-pi, pi).
template <typename Scalar>
Scalar normalize_heading(Scalar angle) {
  const Scalar two_pi = Scalar(2) * std::numbers::pi_v<Scalar>;
  Scalar a = std::fmod(angle + std::numbers::pi_v<Scalar>, two_pi);
  if (a < Scalar(0)) a += two_pi;
  return a - std::numbers::pi_v<Scalar>;
}

template <typename Scalar>
struct Pose {
  Vec2<Scalar> position = Vec2<Scalar>::Zero();
  Scalar heading = Scalar(0);

  Pose() = default;
  Pose(Scalar x, Scalar y, Scalar theta) : position(x, y), heading(normalize_heading(theta)) {}

  Scalar x() const { return position.x(); }
  Scalar y() const { return position.y(); }
};

template <typename Scalar>
struct BeamScan {
  std::vector<Scalar> ranges;  // beam i points along heading + 2*pi*i/N
  Scalar max_range = Scalar(0);

  std::size_t size() const { return ranges.size(); }
  bool clamped(std::size_t i) const { return ranges[i] >= max_range; }
};

/// Direction of beam i of an n-beam scan.
template <typename Scalar>
Scalar beam_angle(Scalar heading, std::size_t i, std::size_t n) {
  return heading + Scalar(2) * std::numbers::pi_v<Scalar> * Scalar(i) / Scalar(n);
}

class AmbiguousFix : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Signed distance to the obstacle boundary sampled on the lattice {k / resolution}.
/// Negative inside obstacle cells (and outside the map), positive in free space.
template <typename Scalar>
class SdfGrid {
 public:
  using Array = Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

  SdfGrid(Array values, int resolution, int width, int height, bool degenerate)
      : values_(std::move(values)),
        resolution_(resolution),
        width_(width),
        height_(height),
        degenerate_(degenerate) {}

  int resolution() const { return resolution_; }
  Scalar spacing() const { return Scalar(1) / Scalar(resolution_); }
  int width() const { return width_; }
  int height() const { return height_; }
  /// True when the map has no obstacle cells; all values are +infinity.
  bool degenerate() const { return degenerate_; }
  const Array& values() const { return values_; }

  /// Sample at lattice node (i, j), i.e. the point (x, y) = (j, i) / resolution.
  Scalar sample(int i, int j) const { return values_(i, j); }

  /// Bilinear interpolation; outside the sampled rectangle the value keeps decreasing
  /// with the distance to the rectangle.
  Scalar value_at(const Vec2<Scalar>& p) const {
    const Scalar w = Scalar(width_), h = Scalar(height_);
    const Scalar cx = std::clamp(p.x(), Scalar(0), w);
    const Scalar cy = std::clamp(p.y(), Scalar(0), h);
    const Scalar outside = std::hypot(p.x() - cx, p.y() - cy);

    const Scalar u = cx * Scalar(resolution_);
    const Scalar v = cy * Scalar(resolution_);
    const int j0 = std::min(static_cast<int>(std::floor(u)), static_cast<int>(values_.cols()) - 2);
    const int i0 = std::min(static_cast<int>(std::floor(v)), static_cast<int>(values_.rows()) - 2);
    const Scalar fu = u - Scalar(j0);
    const Scalar fv = v - Scalar(i0);
    const Scalar top = (Scalar(1) - fu) * values_(i0, j0) + fu * values_(i0, j0 + 1);
    const Scalar bottom = (Scalar(1) - fu) * values_(i0 + 1, j0) + fu * values_(i0 + 1, j0 + 1);
    return (Scalar(1) - fv) * top + fv * bottom - outside;
  }

 private:
  Array values_;
  int resolution_;
  int width_;
  int height_;
  bool degenerate_;
};

namespace detail {

// Euclidean distance from p to the closed unit square of cell c.
template <typename Scalar>
Scalar distance_to_cell(const Vec2<Scalar>& p, Cell c) {
  const Scalar dx = std::max({Scalar(c.col) - p.x(), Scalar(0), p.x() - Scalar(c.col + 1)});
  const Scalar dy = std::max({Scalar(c.row) - p.y(), Scalar(0), p.y() - Scalar(c.row + 1)});
  return std::hypot(dx, dy);
}

template <typename Scalar>
bool point_in_free_cell(const GridMap& map, const Vec2<Scalar>& p) {
  const Cell c{static_cast<int>(std::floor(p.y())), static_cast<int>(std::floor(p.x()))};
  return map.in_bounds(c) && !map.is_obstacle(c);
}

}  // namespace detail

/// Exact signed distance at every lattice node.
template <typename Scalar = double>
SdfGrid<Scalar> compute_sdf(const GridMap& map, int resolution = 4) {
  if (resolution < 1) throw std::invalid_argument("SDF resolution must be >= 1");
  using Array = typename SdfGrid<Scalar>::Array;
  const int rows = map.height() * resolution + 1;
  const int cols = map.width() * resolution + 1;
  const auto obstacles = map.obstacles();
  if (obstacles.empty()) {
    return SdfGrid<Scalar>(Array::Constant(rows, cols, std::numeric_limits<Scalar>::infinity()),
                           resolution, map.width(), map.height(), true);
  }
  std::vector<Cell> free_cells;
  for (int r = 0; r < map.height(); ++r) {
    for (int c = 0; c < map.width(); ++c) {
      if (!map.is_obstacle({r, c})) free_cells.push_back({r, c});
    }
  }

  const Scalar w = Scalar(map.width()), h = Scalar(map.height());
  Array values(rows, cols);
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) {
      const Vec2<Scalar> p(Scalar(j) / Scalar(resolution), Scalar(i) / Scalar(resolution));
      // A node on a cell edge may be classified either way; both give 0 there.
      const bool in_free = detail::point_in_free_cell(map, p);
      Scalar d = std::numeric_limits<Scalar>::infinity();
      if (in_free) {
        d = std::min({p.x(), w - p.x(), p.y(), h - p.y()});
        for (const Cell& c : obstacles) d = std::min(d, detail::distance_to_cell(p, c));
        values(i, j) = d;
      } else {
        for (const Cell& c : free_cells) d = std::min(d, detail::distance_to_cell(p, c));
        values(i, j) = -d;
      }
    }
  }
  return SdfGrid<Scalar>(std::move(values), resolution, map.width(), map.height(), false);
}

/// Range along the ray from `origin` at angle `theta` to the first obstacle cell or the map
/// border, capped at max_range. Grid traversal visits each crossed cell once.
template <typename Scalar>
Scalar ray_range(const GridMap& map, const Vec2<Scalar>& origin, Scalar theta, Scalar max_range) {
  const Scalar inf = std::numeric_limits<Scalar>::infinity();
  const Scalar dx = std::cos(theta), dy = std::sin(theta);
  int col = static_cast<int>(std::floor(origin.x()));
  int row = static_cast<int>(std::floor(origin.y()));
  const int step_c = dx > 0 ? 1 : -1;
  const int step_r = dy > 0 ? 1 : -1;
  const Scalar eps = Scalar(1e-12);
  const Scalar t_delta_c = std::abs(dx) > eps ? Scalar(1) / std::abs(dx) : inf;
  const Scalar t_delta_r = std::abs(dy) > eps ? Scalar(1) / std::abs(dy) : inf;
  Scalar t_next_c = inf, t_next_r = inf;
  if (std::abs(dx) > eps) {
    const Scalar edge = dx > 0 ? Scalar(col + 1) : Scalar(col);
    t_next_c = (edge - origin.x()) / dx;
  }
  if (std::abs(dy) > eps) {
    const Scalar edge = dy > 0 ? Scalar(row + 1) : Scalar(row);
    t_next_r = (edge - origin.y()) / dy;
  }
  while (true) {
    Scalar t;
    if (t_next_c < t_next_r) {
      t = t_next_c;
      col += step_c;
      t_next_c += t_delta_c;
    } else {
      t = t_next_r;
      row += step_r;
      t_next_r += t_delta_r;
    }
    if (t >= max_range) return max_range;
    if (!map.is_free({row, col})) return std::max(t, Scalar(0));
  }
}

/// Forward model of an n-beam planar radar at `pose`. Throws std::invalid_argument if the
/// pose is not inside a free cell.
template <typename Scalar>
BeamScan<Scalar> cast_beams(const GridMap& map, const Pose<Scalar>& pose, int n_beams,
                            Scalar max_range) {
  if (n_beams < 1) throw std::invalid_argument("need at least one beam");
  if (!(max_range > Scalar(0))) throw std::invalid_argument("max_range must be positive");
  if (!detail::point_in_free_cell(map, pose.position)) {
    throw std::invalid_argument("pose is not inside a free cell");
  }
  BeamScan<Scalar> scan;
  scan.max_range = max_range;
  scan.ranges.reserve(n_beams);
  for (int i = 0; i < n_beams; ++i) {
    scan.ranges.push_back(ray_range(map, pose.position,
                                    beam_angle(pose.heading, std::size_t(i), std::size_t(n_beams)),
                                    max_range));
  }
  return scan;
}

/// Beam endpoints in the world frame, R(heading_i) [r_i, 0]^T + t. Clamped beams are skipped.
template <typename Scalar>
std::vector<Vec2<Scalar>> beam_endpoints(const BeamScan<Scalar>& scan, Scalar heading,
                                         const Vec2<Scalar>& position) {
  std::vector<Vec2<Scalar>> out;
  out.reserve(scan.size());
  for (std::size_t i = 0; i < scan.size(); ++i) {
    if (scan.clamped(i)) continue;
    const Eigen::Rotation2D<Scalar> rot(beam_angle(heading, i, scan.size()));
    out.push_back(rot * Vec2<Scalar>(scan.ranges[i], Scalar(0)) + position);
  }
  return out;
}

/// Sum of squared SDF values at the unclamped beam endpoints.
template <typename Scalar>
Scalar scan_residual(const SdfGrid<Scalar>& sdf, const BeamScan<Scalar>& scan, Scalar heading,
                     const Vec2<Scalar>& position) {
  Scalar sum = Scalar(0);
  for (const auto& e : beam_endpoints(scan, heading, position)) {
    const Scalar g = sdf.value_at(e);
    sum += g * g;
  }
  return sum;
}

template <typename Scalar>
struct SearchRegion {
  Scalar x_min, x_max, y_min, y_max;

  bool empty() const { return !(x_min <= x_max && y_min <= y_max); }

  static SearchRegion whole_map(const GridMap& map) {
    return {Scalar(0), Scalar(map.width()), Scalar(0), Scalar(map.height())};
  }
  /// Square window of `radius` cells around the centre of `c`, clipped to the map.
  static SearchRegion around(const GridMap& map, Cell c, Scalar radius) {
    const Scalar cx = Scalar(c.col) + Scalar(0.5), cy = Scalar(c.row) + Scalar(0.5);
    return {std::max(Scalar(0), cx - radius), std::min(Scalar(map.width()), cx + radius),
            std::max(Scalar(0), cy - radius), std::min(Scalar(map.height()), cy + radius)};
  }
};

template <typename Scalar>
struct PoseEstimate {
  Pose<Scalar> pose;
  Scalar residual = Scalar(0);
  bool confident = false;
  int beams_used = 0;
};

struct EstimatorOptions {
  int refinement_levels = 10;
  double initial_step = 0.5;
  /// Mean squared endpoint distance (cell^2) below which a fix is reported confident.
  double confidence_threshold = 0.01;
};

/// Translation-only scan matching with a known heading: exhaustive search over the
/// region on the SDF lattice, then pattern search with the step halved each level.
template <typename Scalar>
PoseEstimate<Scalar> estimate_position(const SdfGrid<Scalar>& sdf, const BeamScan<Scalar>& scan,
                                       Scalar heading, const SearchRegion<Scalar>& region,
                                       const EstimatorOptions& options = {}) {
  if (sdf.degenerate()) throw AmbiguousFix("SDF has no obstacle boundary; position is ambiguous");
  if (scan.size() == 0) throw std::invalid_argument("scan has no beams");
  if (region.empty()) throw std::invalid_argument("search region is empty");

  int used = 0;
  for (std::size_t i = 0; i < scan.size(); ++i) used += scan.clamped(i) ? 0 : 1;
  if (used == 0) throw AmbiguousFix("every beam is clamped at max range");

  auto residual = [&](const Vec2<Scalar>& p) { return scan_residual(sdf, scan, heading, p); };

  const Scalar h = sdf.spacing();
  const int nx = static_cast<int>(std::floor((region.x_max - region.x_min) / h + Scalar(1e-9)));
  const int ny = static_cast<int>(std::floor((region.y_max - region.y_min) / h + Scalar(1e-9)));
  Vec2<Scalar> best(region.x_min, region.y_min);
  Scalar best_value = std::numeric_limits<Scalar>::infinity();
  for (int iy = 0; iy <= ny; ++iy) {
    for (int ix = 0; ix <= nx; ++ix) {
      const Vec2<Scalar> p(region.x_min + Scalar(ix) * h, region.y_min + Scalar(iy) * h);
      const Scalar v = residual(p);
      if (v < best_value) {
        best_value = v;
        best = p;
      }
    }
  }

  Scalar step = Scalar(options.initial_step);
  for (int level = 0; level < options.refinement_levels; ++level, step /= Scalar(2)) {
    for (int moves = 0; moves < 64; ++moves) {
      Vec2<Scalar> candidate = best;
      Scalar candidate_value = best_value;
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          if (dx == 0 && dy == 0) continue;
          const Vec2<Scalar> p = best + step * Vec2<Scalar>(Scalar(dx), Scalar(dy));
          const Scalar v = residual(p);
          if (v < candidate_value) {
            candidate_value = v;
            candidate = p;
          }
        }
      }
      if (!(candidate_value < best_value)) break;
      best = candidate;
      best_value = candidate_value;
    }
  }

  PoseEstimate<Scalar> out;
  out.pose = Pose<Scalar>(best.x(), best.y(), heading);
  out.residual = best_value;
  out.beams_used = used;
  out.confident = best_value / Scalar(used) < Scalar(options.confidence_threshold);
  return out;
}

}  // namespace cpilot
