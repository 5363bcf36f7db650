#pragma once

#include <vector>

#include "coverage_pilot/gridworld.hpp"

namespace cpilot {

/// Percentage of free cells visited. Throws std::domain_error when the map has no free cell.
double compute_cr(const CoverageMap& coverage, const GridMap& map);
/// Percentage of visited cells visited more than once; 0 when nothing was visited.
double compute_dr(const CoverageMap& coverage);
/// Coverage-success index: mean CR (percent) times success rate.
double compute_csi(double cr_mean, double success_rate);

struct TrialMetrics {
  double cr = 0.0;  // percent
  double dr = 0.0;  // percent
  bool collided = false;
  bool failed = false;
  double latency_seconds = 0.0;  // mean planning latency over the mission
  int steps = 0;
};

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // population standard deviation
};

MeanStd mean_std(const std::vector<double>& values);

struct MetricsReport {
  double cr = 0.0;   // mean percent
  double dr = 0.0;   // mean percent
  double sr = 0.0;   // fraction of collision-free trials
  double csi = 0.0;  // cr * sr
  double il = 0.0;   // mean seconds
  MeanStd cr_stats, dr_stats, csi_stats, il_stats;
  int trials = 0;
  std::vector<TrialMetrics> per_trial;
};

/// Aggregates trials (in the given order). A collided trial counts against SR.
MetricsReport aggregate(std::vector<TrialMetrics> trials);

}  // namespace cpilot
