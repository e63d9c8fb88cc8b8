#include "gcalib/harness.hpp"

#include "gcalib/error.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace gcalib {

using nlohmann::json;

namespace {

json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

json xi_json(const Vec6& xi) {
  json a = json::array();
  for (int i = 0; i < 6; ++i) a.push_back(number_or_null(xi(i)));
  return a;
}

json truth_json(const TruthComparison& t) {
  return {{"delta_roll_deg", t.delta_roll_deg},
          {"delta_pitch_deg", t.delta_pitch_deg},
          {"delta_yaw_deg", t.delta_yaw_deg},
          {"delta_height_cm", t.delta_height_cm},
          {"events", t.events}};
}

json summary_json(const RunSummary& s) {
  json j;
  j["schema_version"] = kSchemaVersion;
  j["keyframes"] = s.keyframes;
  j["optimized_pairs"] = s.optimized_pairs;
  j["events"] = s.events;
  j["failures"] = s.failures;
  j["failure_reasons"] = s.failure_reasons;
  j["aborted"] = s.aborted;
  j["abort_reason"] = s.abort_reason;
  j["truth"] = s.truth ? truth_json(*s.truth) : json(nullptr);
  j["transfer_error"] = {{"mean", number_or_null(s.transfer_error_mean)},
                         {"p90", number_or_null(s.transfer_error_p90)},
                         {"bound_px", s.transfer_bound_px},
                         {"within_bound", number_or_null(s.transfer_within_bound)}};
  j["residual_error_mean"] = s.residual_error_mean ? number_or_null(*s.residual_error_mean)
                                                   : json(nullptr);
  j["first_report_time"] = s.first_report_time ? json(*s.first_report_time) : json(nullptr);
  j["final_xi"] = xi_json(s.final_xi);
  j["truth_xi_at_end"] = xi_json(s.truth_xi_at_end);
  return j;
}

}  // namespace

RunSummary summarize(const CalibrationReport& report, const Scenario& scenario,
                     double transfer_bound_px) {
  RunSummary s;
  s.keyframes = static_cast<int>(report.keyframes.size());
  s.events = static_cast<int>(report.events.size());
  s.failures = static_cast<int>(report.failures.size());
  for (const auto& f : report.failures) ++s.failure_reasons[f.reason];
  s.aborted = report.aborted;
  s.abort_reason = report.abort_reason;
  s.transfer_bound_px = transfer_bound_px;

  if (!report.events.empty()) {
    std::vector<ReportedXi> xs;
    xs.reserve(report.events.size());
    for (const auto& e : report.events) xs.push_back({e.timestamp, e.xi});
    s.truth = compare_to_truth(xs, scenario.truth);
    s.first_report_time = report.events.front().timestamp;
  }

  std::vector<double> eps_f;
  double eps_p_sum = 0.0;
  int eps_p_n = 0;
  for (const auto& k : report.keyframes) {
    if (std::isfinite(k.transfer_error)) eps_f.push_back(k.transfer_error);
    if (k.residual_error && std::isfinite(*k.residual_error)) {
      eps_p_sum += *k.residual_error;
      ++eps_p_n;
    }
  }
  s.optimized_pairs = static_cast<int>(eps_f.size());
  if (!eps_f.empty()) {
    double sum = 0.0;
    long within = 0;
    for (double v : eps_f) {
      sum += v;
      if (v <= transfer_bound_px) ++within;
    }
    s.transfer_error_mean = sum / static_cast<double>(eps_f.size());
    s.transfer_within_bound = static_cast<double>(within) / static_cast<double>(eps_f.size());
    std::vector<double> sorted = eps_f;
    std::sort(sorted.begin(), sorted.end());
    const auto idx = static_cast<std::size_t>(std::ceil(0.9 * static_cast<double>(sorted.size()))) - 1;
    s.transfer_error_p90 = sorted[std::min(idx, sorted.size() - 1)];
  }
  if (eps_p_n > 0) s.residual_error_mean = eps_p_sum / eps_p_n;

  s.final_xi = report.final_result.xi;
  const double t_end = report.keyframes.empty()
                           ? (scenario.keyframes.empty() ? 0.0 : scenario.keyframes.back().timestamp)
                           : report.keyframes.back().timestamp;
  s.truth_xi_at_end = xi_from_extrinsic(apply_extrinsic_schedule(scenario.truth, t_end));
  return s;
}

std::string summary_to_string(const RunSummary& summary) {
  return summary_json(summary).dump(2) + "\n";
}

std::uint64_t replica_seed(std::uint64_t base, int replica) {
  // splitmix64 step keeps neighbouring replicas decorrelated
  std::uint64_t z = base + 0x9E3779B97F4A7C15ull * static_cast<std::uint64_t>(replica + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

SweepResult run_sweep(const ConfigFile& base, const std::vector<double>& noise_grid, int replicas,
                      std::vector<std::vector<CalibrationReport>>* reports) {
  if (replicas < 1) throw Error(ErrorCode::InvalidConfig, "replicas must be >= 1");
  if (noise_grid.empty()) throw Error(ErrorCode::InvalidConfig, "empty noise grid");
  for (double s : noise_grid)
    if (!(s >= 0.0) || !std::isfinite(s)) throw Error(ErrorCode::InvalidConfig, "bad noise level");

  const int cells = static_cast<int>(noise_grid.size());
  const int jobs = cells * replicas;
  std::vector<CalibrationReport> all_reports(static_cast<std::size_t>(jobs));
  std::vector<RunSummary> all_summaries(static_cast<std::size_t>(jobs));
  std::vector<std::string> errors(static_cast<std::size_t>(jobs));

  // Each job owns its slot; nothing is shared between pipeline instances.
#pragma omp parallel for schedule(dynamic, 1)
  for (int job = 0; job < jobs; ++job) {
    const int cell = job / replicas;
    const int rep = job % replicas;
    try {
      ScenarioConfig sc = base.scenario;
      sc.pixel_noise_sigma = noise_grid[static_cast<std::size_t>(cell)];
      sc.seed = replica_seed(base.scenario.seed, rep);
      PipelineConfig pc = base.pipeline;
      pc.seed = replica_seed(base.pipeline.seed, rep);
      // the optimizer whitens with the simulated noise level when there is one
      if (sc.pixel_noise_sigma > 0.0) pc.optimizer.feature_cov_px = sc.pixel_noise_sigma;
      const Scenario scenario = generate(sc);
      CalibrationReport r = run_pipeline(scenario, pc);
      all_summaries[static_cast<std::size_t>(job)] = summarize(r, scenario, 2.0 * sc.pixel_noise_sigma);
      all_reports[static_cast<std::size_t>(job)] = std::move(r);
    } catch (const std::exception& e) {
      errors[static_cast<std::size_t>(job)] = e.what();
    }
  }
  for (const auto& e : errors)
    if (!e.empty()) throw Error(ErrorCode::InvalidConfig, "sweep replica failed: " + e);

  SweepResult out;
  if (reports) reports->assign(static_cast<std::size_t>(cells), {});
  for (int c = 0; c < cells; ++c) {
    SweepCell cell;
    cell.pixel_noise_sigma = noise_grid[static_cast<std::size_t>(c)];
    long within = 0, total = 0;
    for (int r = 0; r < replicas; ++r) {
      const auto idx = static_cast<std::size_t>(c * replicas + r);
      const RunSummary& s = all_summaries[idx];
      if (s.truth) {
        ++cell.replicas_with_events;
        cell.mean_truth.delta_roll_deg += s.truth->delta_roll_deg;
        cell.mean_truth.delta_pitch_deg += s.truth->delta_pitch_deg;
        cell.mean_truth.delta_yaw_deg += s.truth->delta_yaw_deg;
        cell.mean_truth.delta_height_cm += s.truth->delta_height_cm;
        cell.mean_truth.events += s.truth->events;
      }
      if (s.optimized_pairs > 0) {
        within += std::lround(s.transfer_within_bound * s.optimized_pairs);
        total += s.optimized_pairs;
      }
      cell.replicas.push_back(s);
      if (reports) (*reports)[static_cast<std::size_t>(c)].push_back(std::move(all_reports[idx]));
    }
    if (cell.replicas_with_events > 0) {
      const double n = cell.replicas_with_events;
      cell.mean_truth.delta_roll_deg /= n;
      cell.mean_truth.delta_pitch_deg /= n;
      cell.mean_truth.delta_yaw_deg /= n;
      cell.mean_truth.delta_height_cm /= n;
    }
    if (total > 0) cell.transfer_within_bound = static_cast<double>(within) / static_cast<double>(total);
    out.cells.push_back(std::move(cell));
  }
  return out;
}

std::string sweep_to_string(const SweepResult& sweep) {
  json cells = json::array();
  for (const auto& c : sweep.cells) {
    json reps = json::array();
    for (const auto& r : c.replicas) reps.push_back(summary_json(r));
    cells.push_back({{"pixel_noise_sigma", c.pixel_noise_sigma},
                     {"replicas_with_events", c.replicas_with_events},
                     {"mean_truth", truth_json(c.mean_truth)},
                     {"transfer_within_bound", number_or_null(c.transfer_within_bound)},
                     {"replicas", std::move(reps)}});
  }
  return json{{"schema_version", kSchemaVersion}, {"cells", std::move(cells)}}.dump(2) + "\n";
}

}  // namespace gcalib
