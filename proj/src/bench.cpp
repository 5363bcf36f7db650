#include "coverage_pilot/bench.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

#include "coverage_pilot/parallel.hpp"

namespace cpilot {

namespace {

std::string fixed2(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string pm(const MeanStd& s) { return fixed2(s.mean) + " ± " + fixed2(s.std); }

}  // namespace

std::uint64_t bench_map_seed(std::uint64_t seed, DensityTier tier, int trial) {
  std::uint64_t x = seed + 0x9e3779b97f4a7c15ULL * (static_cast<std::uint64_t>(tier) * 1000003ULL +
                                                     static_cast<std::uint64_t>(trial) + 1);
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

BenchResult run_benchmark(const BenchConfig& config, Proposer& proposer) {
  if (config.trials < 1) throw std::invalid_argument("trials must be at least 1");
  if (config.tiers.empty() || config.planners.empty()) throw std::invalid_argument("need at least one tier and one planner");
  config.search.validate();
  const int max_steps = config.max_steps > 0 ? config.max_steps : 4 * config.width * config.height;
  const Instruction instruction(config.instruction);

  struct Job {
    std::size_t row;
    DensityTier tier;
    PlannerKind planner;
    int trial;
  };
  std::vector<Job> jobs;
  BenchResult result;
  for (DensityTier tier : config.tiers) {
    for (PlannerKind planner : config.planners) {
      const std::size_t row = result.rows.size();
      result.rows.push_back({to_string(tier), density_of(tier), to_string(planner), {}});
      for (int t = 0; t < config.trials; ++t) jobs.push_back({row, tier, planner, t});
    }
  }

  std::vector<std::vector<TrialMetrics>> per_row(result.rows.size());
  parallel_ordered<TrialRecord>(
      jobs.size(), config.jobs,
      [&](std::size_t i) {
        const Job& job = jobs[i];
        TrialRecord rec{to_string(job.tier), to_string(job.planner), job.trial,
                        bench_map_seed(config.seed, job.tier, job.trial), {}, "", ""};
        try {
          const GridMap map = generate_map(config.width, config.height, density_of(job.tier), rec.map_seed);
          auto planner = make_planner(job.planner, proposer, config.search);
          const MissionRun run =
              run_mission(map, map.start(), instruction, *planner, config.mission, rec.map_seed, max_steps);
          rec.metrics = run.metrics;
          rec.status = to_string(run.state.status);
          rec.failure = run.state.failure.value_or("");
        } catch (const std::exception& e) {
          rec.metrics.failed = true;
          rec.status = "failed";
          rec.failure = e.what();
        }
        if (!config.timing) rec.metrics.latency_seconds = 0.0;
        return rec;
      },
      [&](std::size_t i, TrialRecord&& rec) {
        per_row[jobs[i].row].push_back(rec.metrics);
        result.trials.push_back(std::move(rec));
      });

  for (std::size_t r = 0; r < result.rows.size(); ++r) result.rows[r].report = aggregate(per_row[r]);
  return result;
}

std::string format_table_text(const BenchResult& result) {
  const std::vector<std::string> header{"Tier", "Planner", "Trials", "CR (%)", "DR (%)", "SR", "CSI (%)", "IL (s)"};
  std::vector<std::vector<std::string>> cells{header};
  for (const BenchRow& row : result.rows) {
    const MetricsReport& m = row.report;
    cells.push_back({row.tier + " (" + fixed2(100.0 * row.density) + "%)", row.planner, std::to_string(m.trials),
                     pm(m.cr_stats), pm(m.dr_stats), fixed2(m.sr), fixed2(m.csi) + " ± " + fixed2(m.csi_stats.std),
                     pm(m.il_stats)});
  }
  // "±" is two bytes in UTF-8 but one column wide.
  auto width_of = [](const std::string& s) {
    std::size_t w = 0;
    for (unsigned char c : s) w += (c & 0xC0) != 0x80 ? 1 : 0;
    return w;
  };
  std::vector<std::size_t> widths(header.size(), 0);
  for (const auto& line : cells) {
    for (std::size_t c = 0; c < line.size(); ++c) widths[c] = std::max(widths[c], width_of(line[c]));
  }
  std::ostringstream out;
  for (std::size_t r = 0; r < cells.size(); ++r) {
    for (std::size_t c = 0; c < cells[r].size(); ++c) {
      if (c) out << "  ";
      out << cells[r][c];
      if (c + 1 < cells[r].size()) out << std::string(widths[c] - width_of(cells[r][c]), ' ');
    }
    out << "\n";
    if (r == 0) {
      std::size_t total = 0;
      for (std::size_t w : widths) total += w;
      out << std::string(total + 2 * (widths.size() - 1), '-') << "\n";
    }
  }
  return out.str();
}

std::string format_table_csv(const BenchResult& result) {
  std::ostringstream out;
  out << "tier,density,planner,trials,cr_mean,cr_std,dr_mean,dr_std,sr,csi,csi_std,il_mean,il_std\n";
  for (const BenchRow& row : result.rows) {
    const MetricsReport& m = row.report;
    out << row.tier << ',' << fixed2(row.density) << ',' << row.planner << ',' << m.trials << ','
        << fixed2(m.cr_stats.mean) << ',' << fixed2(m.cr_stats.std) << ',' << fixed2(m.dr_stats.mean) << ','
        << fixed2(m.dr_stats.std) << ',' << fixed2(m.sr) << ',' << fixed2(m.csi) << ',' << fixed2(m.csi_stats.std)
        << ',' << fixed2(m.il_stats.mean) << ',' << fixed2(m.il_stats.std) << "\n";
  }
  return out.str();
}

Json table_to_json(const BenchResult& result) {
  Json rows = Json::array();
  for (const BenchRow& row : result.rows) {
    const MetricsReport& m = row.report;
    auto ms = [](const MeanStd& s) { return Json{{"mean", s.mean}, {"std", s.std}}; };
    rows.push_back({{"tier", row.tier},
                    {"density", row.density},
                    {"planner", row.planner},
                    {"trials", m.trials},
                    {"cr", ms(m.cr_stats)},
                    {"dr", ms(m.dr_stats)},
                    {"sr", m.sr},
                    {"csi", m.csi},
                    {"csi_trials", ms(m.csi_stats)},
                    {"il", ms(m.il_stats)}});
  }
  return Json{{"rows", std::move(rows)}};
}

std::string format_trial_log(const BenchResult& result) {
  std::ostringstream out;
  for (const TrialRecord& t : result.trials) {
    Json j{{"tier", t.tier},
           {"planner", t.planner},
           {"trial", t.trial},
           {"map_seed", t.map_seed},
           {"cr", t.metrics.cr},
           {"dr", t.metrics.dr},
           {"collided", t.metrics.collided},
           {"failed", t.metrics.failed},
           {"latency_seconds", t.metrics.latency_seconds},
           {"steps", t.metrics.steps},
           {"status", t.status},
           {"failure", t.failure}};
    out << j.dump() << "\n";
  }
  return out.str();
}

}  // namespace cpilot
