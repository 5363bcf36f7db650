#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "coverage_pilot/localization.hpp"
#include "support.hpp"

using namespace cpilot;
using namespace cptest;
using V = Vec2<double>;

namespace {

// Distance from p to the boundary of the obstacle set (obstacle cells plus everything outside
// the map), found by sampling every obstacle edge at 1/2000-cell spacing.
double sampled_boundary_distance(const GridMap& m, const V& p) {
  double best = std::min({p.x(), m.width() - p.x(), p.y(), m.height() - p.y()});
  constexpr int kSteps = 2000;
  for (Cell c : m.obstacles()) {
    for (int k = 0; k <= kSteps; ++k) {
      const double t = double(k) / kSteps;
      const V pts[] = {{c.col + t, double(c.row)}, {c.col + t, c.row + 1.0}, {double(c.col), c.row + t},
                       {c.col + 1.0, c.row + t}};
      for (const V& q : pts) best = std::min(best, (q - p).norm());
    }
  }
  return best;
}

bool blocked(const GridMap& m, const V& p) {
  return !m.is_free({static_cast<int>(std::floor(p.y())), static_cast<int>(std::floor(p.x()))});
}

// March along the ray in 1/100-cell steps until the sample point leaves free space. A step that
// changes both row and column can pass through a corner cell for less than one step, so those
// steps are re-marched at 1e-5.
double marched_range(const GridMap& m, const V& origin, double theta, double max_range) {
  const V dir(std::cos(theta), std::sin(theta));
  V prev = origin;
  for (int k = 1;; ++k) {
    const double t = k * 0.01;
    if (t >= max_range) return max_range;
    const V p = origin + t * dir;
    if (std::floor(p.x()) != std::floor(prev.x()) && std::floor(p.y()) != std::floor(prev.y())) {
      for (int j = 1; j < 1000; ++j) {
        const double ts = t - 0.01 + j * 1e-5;
        if (blocked(m, origin + ts * dir)) return ts;
      }
    }
    if (blocked(m, p)) return t;
    prev = p;
  }
}

V random_point_in(Cell c, std::mt19937_64& rng, double margin = 0.05) {
  std::uniform_real_distribution<double> u(margin, 1.0 - margin);
  return V(c.col + u(rng), c.row + u(rng));
}

Cell random_free_cell(const GridMap& m, std::mt19937_64& rng) {
  for (;;) {
    const Cell c{static_cast<int>(rng() % m.height()), static_cast<int>(rng() % m.width())};
    if (m.is_free(c)) return c;
  }
}

// Exhaustive 0.05-cell grid-search argmin of the residual over the region.
std::pair<V, double> grid_oracle(const SdfGrid<double>& sdf, const BeamScan<double>& scan, double heading,
                                 const SearchRegion<double>& region) {
  V best(region.x_min, region.y_min);
  double best_v = std::numeric_limits<double>::infinity();
  for (double y = region.y_min; y <= region.y_max + 1e-9; y += 0.05) {
    for (double x = region.x_min; x <= region.x_max + 1e-9; x += 0.05) {
      const double v = scan_residual(sdf, scan, heading, V(x, y));
      if (v < best_v) {
        best_v = v;
        best = V(x, y);
      }
    }
  }
  return {best, best_v};
}

}  // namespace

TEST_SUITE("pose") {
  TEST_CASE("heading is normalised to [-pi, pi)") {
    const double pi = std::numbers::pi;
    CHECK(Pose<double>(0, 0, pi).heading == doctest::Approx(-pi));
    CHECK(Pose<double>(0, 0, 3 * pi / 2).heading == doctest::Approx(-pi / 2));
    CHECK(Pose<double>(0, 0, -pi).heading == doctest::Approx(-pi));
    CHECK(Pose<float>(1.f, 2.f, 0.5f).heading == doctest::Approx(0.5f));
  }
}

TEST_SUITE("compute_sdf") {
  TEST_CASE("centre of an obstacle cell next to free space is -0.5") {
    const GridMap m(5, 5, {{2, 2}}, {0, 0});
    const SdfGrid<double> sdf = compute_sdf<double>(m, 4);
    CHECK(sdf.sample(10, 10) == doctest::Approx(-0.5));
    CHECK(sdf.value_at(V(2.5, 2.5)) == doctest::Approx(-0.5));
  }

  TEST_CASE("sample three cells from the only obstacle matches a brute-force boundary search") {
    const GridMap m(12, 12, {{5, 5}}, {0, 0});
    const SdfGrid<double> sdf = compute_sdf<double>(m, 4);
    // (x, y) = (9.0, 5.5): three cells right of the obstacle's right edge at x = 6.
    const V p(9.0, 5.5);
    const double oracle = sampled_boundary_distance(m, p);
    CHECK(oracle == doctest::Approx(3.0).epsilon(1e-6));
    CHECK(sdf.sample(22, 36) == doctest::Approx(oracle).epsilon(1e-6));
  }

  TEST_CASE("all-free map is degenerate and cannot localise") {
    const GridMap m = open_map(6, 6);
    const SdfGrid<double> sdf = compute_sdf<double>(m);
    CHECK(sdf.degenerate());
    const BeamScan<double> scan = cast_beams(m, Pose<double>(3, 3, 0), 8, 8.0);
    CHECK_THROWS_AS(estimate_position(sdf, scan, 0.0, SearchRegion<double>::whole_map(m)), AmbiguousFix);
  }

  TEST_CASE("every lattice sample matches the boundary oracle within half a sample spacing") {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 4; ++trial) {
      const GridMap m = generate_map(5, 5, 0.2, rng());
      const SdfGrid<double> sdf = compute_sdf<double>(m, 2);
      for (int i = 0; i <= 10; ++i) {
        for (int j = 0; j <= 10; ++j) {
          const V p(j / 2.0, i / 2.0);
          const double d = sampled_boundary_distance(m, p);
          // Free samples are at +d; samples inside obstacles are at most 0.
          const double v = sdf.sample(i, j);
          if (v > 0) {
            CHECK(v == doctest::Approx(d).epsilon(1e-3));
          } else {
            CHECK(v <= 1e-12);
          }
          CHECK(std::abs(std::abs(v) - (v > 0 ? d : std::abs(v))) <= 0.5 * sdf.spacing());
        }
      }
    }
  }

  TEST_CASE("sign convention strictly inside obstacle and free cells") {
    std::mt19937_64 rng(8);
    for (int trial = 0; trial < 10; ++trial) {
      const GridMap m = generate_map(8, 8, 0.25, rng());
      const SdfGrid<double> sdf = compute_sdf<double>(m, 4);
      for (int r = 0; r < 8; ++r) {
        for (int c = 0; c < 8; ++c) {
          const double v = sdf.value_at(V(c + 0.5, r + 0.5));
          if (m.is_obstacle({r, c})) {
            CHECK(v < 0);
          } else {
            CHECK(v > 0);
          }
        }
      }
    }
  }

  TEST_CASE("float scalar agrees with double") {
    const GridMap m = generate_map(6, 6, 0.2, 4);
    const auto d = compute_sdf<double>(m, 4);
    const auto f = compute_sdf<float>(m, 4);
    CHECK(((d.values().cast<float>() - f.values()).abs() < 1e-5f).all());
  }
}

TEST_SUITE("cast_beams") {
  TEST_CASE("beam towards a wall three cells away reads 3.0") {
    const GridMap m(10, 1, {{0, 4}}, {0, 0});
    const BeamScan<double> scan = cast_beams(m, Pose<double>(1.0, 0.5, 0.0), 4, 8.0);
    CHECK(scan.ranges[0] == doctest::Approx(3.0));
    CHECK(scan.ranges[2] == doctest::Approx(1.0));  // facing the left border
  }

  TEST_CASE("all-free map reads the border distance or max_range") {
    const GridMap m = open_map(10, 10);
    const Pose<double> pose(2.5, 7.5, 0.0);
    const BeamScan<double> scan = cast_beams(m, pose, 8, 8.0);
    for (std::size_t i = 0; i < 8; ++i) {
      const double th = beam_angle(0.0, i, 8);
      const double dx = std::cos(th), dy = std::sin(th);
      double t = std::numeric_limits<double>::infinity();
      if (dx > 1e-12) t = std::min(t, (10 - 2.5) / dx);
      if (dx < -1e-12) t = std::min(t, -2.5 / dx);
      if (dy > 1e-12) t = std::min(t, (10 - 7.5) / dy);
      if (dy < -1e-12) t = std::min(t, -7.5 / dy);
      CHECK(scan.ranges[i] == doctest::Approx(std::min(t, 8.0)));
    }
    CHECK(scan.ranges[4] == doctest::Approx(2.5));  // heading + pi: left border
  }

  TEST_CASE("360 random poses match a 1/100-cell ray march within 0.01") {
    std::mt19937_64 rng(360);
    for (int trial = 0; trial < 360; ++trial) {
      const GridMap m = generate_map(10, 10, 0.15, rng() % 50);
      const V p = random_point_in(random_free_cell(m, rng), rng);
      const double heading = std::uniform_real_distribution<double>(-3.14, 3.14)(rng);
      const BeamScan<double> scan = cast_beams(m, Pose<double>(p.x(), p.y(), heading), 12, 8.0);
      for (std::size_t i = 0; i < scan.size(); ++i) {
        const double oracle = marched_range(m, p, beam_angle(Pose<double>(0, 0, heading).heading, i, 12), 8.0);
        CHECK(std::abs(scan.ranges[i] - oracle) <= 0.01 + 1e-9);
      }
    }
  }

  TEST_CASE("pose inside an obstacle is rejected") {
    const GridMap m(4, 4, {{1, 1}}, {0, 0});
    CHECK_THROWS_AS(cast_beams(m, Pose<double>(1.5, 1.5, 0.0), 8, 5.0), std::invalid_argument);
    CHECK_THROWS_AS(cast_beams(m, Pose<double>(0.5, 0.5, 0.0), 0, 5.0), std::invalid_argument);
  }
}

TEST_SUITE("estimate_position") {
  TEST_CASE("noiseless scan recovers the pose with a tiny residual") {
    const GridMap m = generate_map(10, 10, 0.15, 21);
    const SdfGrid<double> sdf = compute_sdf<double>(m);
    std::mt19937_64 rng(1);
    const Cell c = random_free_cell(m, rng);
    const Pose<double> truth(c.col + 0.5, c.row + 0.5, 0.3);
    const BeamScan<double> scan = cast_beams(m, truth, 16, 20.0);
    const PoseEstimate<double> est =
        estimate_position(sdf, scan, truth.heading, SearchRegion<double>::around(m, c, 1.5));
    CHECK((est.pose.position - truth.position).norm() < 0.1);
    CHECK(est.residual < 1e-3);
    CHECK(est.confident);
    CHECK(est.residual == doctest::Approx(scan_residual(sdf, scan, truth.heading, est.pose.position)));
  }

  TEST_CASE("100 random cases agree with the exhaustive 0.05-cell grid oracle") {
    std::mt19937_64 rng(100);
    int within_truth = 0;
    for (int trial = 0; trial < 100; ++trial) {
      const GridMap m = generate_map(10, 10, 0.15, rng() % 1000);
      const SdfGrid<double> sdf = compute_sdf<double>(m);
      const Cell c = random_free_cell(m, rng);
      const V p = random_point_in(c, rng);
      const double heading = std::uniform_real_distribution<double>(-3.0, 3.0)(rng);
      const Pose<double> truth(p.x(), p.y(), heading);
      const BeamScan<double> scan = cast_beams(m, truth, 16, 20.0);
      const auto region = SearchRegion<double>::around(m, c, 1.5);
      const PoseEstimate<double> est = estimate_position(sdf, scan, truth.heading, region);
      const auto [oracle, oracle_value] = grid_oracle(sdf, scan, truth.heading, region);

      within_truth += (est.pose.position - truth.position).norm() < 0.1;
      CHECK((est.pose.position - oracle).cwiseAbs().maxCoeff() <= 0.05 + 1e-9);
      CHECK(est.residual <= oracle_value + 1e-12);
    }
    CHECK(within_truth == 100);
  }

  TEST_CASE("sigma 0.1 range noise stays within half a cell in at least 95 of 100 trials") {
    std::mt19937_64 rng(95);
    std::normal_distribution<double> noise(0.0, 0.1);
    int good = 0;
    for (int trial = 0; trial < 100; ++trial) {
      const GridMap m = generate_map(10, 10, 0.15, rng() % 1000);
      const SdfGrid<double> sdf = compute_sdf<double>(m);
      const Cell c = random_free_cell(m, rng);
      const V p = random_point_in(c, rng);
      const Pose<double> truth(p.x(), p.y(), 0.0);
      BeamScan<double> scan = cast_beams(m, truth, 16, 20.0);
      for (double& r : scan.ranges) r = std::clamp(r + noise(rng), 0.0, scan.max_range - 1e-9);
      const PoseEstimate<double> est =
          estimate_position(sdf, scan, truth.heading, SearchRegion<double>::around(m, c, 1.5));
      good += (est.pose.position - truth.position).norm() <= 0.5;
    }
    CHECK(good >= 95);
  }

  TEST_CASE("estimate is never worse than its own coarse grid") {
    const GridMap m = generate_map(8, 8, 0.2, 77);
    const SdfGrid<double> sdf = compute_sdf<double>(m);
    const Pose<double> truth(0.7, 0.4, 1.0);
    const BeamScan<double> scan = cast_beams(m, truth, 12, 20.0);
    const auto region = SearchRegion<double>::whole_map(m);
    const PoseEstimate<double> est = estimate_position(sdf, scan, truth.heading, region);
    for (double y = 0; y <= 8; y += sdf.spacing()) {
      for (double x = 0; x <= 8; x += sdf.spacing()) {
        CHECK(est.residual <= scan_residual(sdf, scan, truth.heading, V(x, y)) + 1e-12);
      }
    }
  }

  TEST_CASE("clamped beams are excluded and an all-clamped scan is ambiguous") {
    const GridMap m(20, 20, {{19, 19}}, {0, 0});
    const SdfGrid<double> sdf = compute_sdf<double>(m);
    const BeamScan<double> scan = cast_beams(m, Pose<double>(10.5, 10.5, 0.0), 8, 0.25);
    for (std::size_t i = 0; i < scan.size(); ++i) CHECK(scan.clamped(i));
    CHECK(beam_endpoints(scan, 0.0, V(10.5, 10.5)).empty());
    CHECK_THROWS_AS(estimate_position(sdf, scan, 0.0, SearchRegion<double>::whole_map(m)), AmbiguousFix);
  }

  TEST_CASE("empty region is rejected") {
    const GridMap m(4, 4, {{2, 2}}, {0, 0});
    const SdfGrid<double> sdf = compute_sdf<double>(m);
    const BeamScan<double> scan = cast_beams(m, Pose<double>(0.5, 0.5, 0.0), 8, 8.0);
    CHECK_THROWS_AS(estimate_position(sdf, scan, 0.0, SearchRegion<double>{2, 1, 0, 1}), std::invalid_argument);
  }
}
