#include "coverage_pilot/metrics.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

namespace cpilot {

double compute_cr(const CoverageMap& coverage, const GridMap& map) {
  const CoverageSets sets = coverage_sets(coverage, map);
  if (sets.free == 0) throw std::domain_error("coverage rate is undefined on a map without free cells");
  return 100.0 * static_cast<double>(sets.visited) / static_cast<double>(sets.free);
}

double compute_dr(const CoverageMap& coverage) {
  const auto& counts = coverage.counts();
  const auto visited = (counts >= 1).count();
  if (visited == 0) return 0.0;
  return 100.0 * static_cast<double>((counts >= 2).count()) / static_cast<double>(visited);
}

double compute_csi(double cr_mean, double success_rate) {
  if (cr_mean < 0.0 || cr_mean > 100.0) throw std::invalid_argument("CR must lie in [0, 100]");
  if (success_rate < 0.0 || success_rate > 1.0) throw std::invalid_argument("SR must lie in [0, 1]");
  return cr_mean * success_rate;
}

MeanStd mean_std(const std::vector<double>& values) {
  if (values.empty()) return {};
  const double n = static_cast<double>(values.size());
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return {mean, std::sqrt(ss / n)};
}

MetricsReport aggregate(std::vector<TrialMetrics> trials) {
  MetricsReport report;
  report.trials = static_cast<int>(trials.size());
  if (trials.empty()) return report;

  std::vector<double> cr, dr, csi, il;
  int successes = 0;
  for (const TrialMetrics& t : trials) {
    cr.push_back(t.cr);
    dr.push_back(t.dr);
    // Per-trial CSI is CR for a collision-free mission and 0 otherwise.
    csi.push_back(t.collided ? 0.0 : t.cr);
    il.push_back(t.latency_seconds);
    successes += t.collided ? 0 : 1;
  }
  report.cr_stats = mean_std(cr);
  report.dr_stats = mean_std(dr);
  report.csi_stats = mean_std(csi);
  report.il_stats = mean_std(il);
  report.cr = report.cr_stats.mean;
  report.dr = report.dr_stats.mean;
  report.il = report.il_stats.mean;
  report.sr = static_cast<double>(successes) / static_cast<double>(trials.size());
  report.csi = compute_csi(report.cr, report.sr);
  report.per_trial = std::move(trials);
  return report;
}

}  // namespace cpilot
