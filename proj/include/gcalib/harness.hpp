#pragma once

#include "gcalib/io.hpp"
#include "gcalib/metrics.hpp"
#include "gcalib/pipeline.hpp"

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace gcalib {

struct RunSummary {
  int keyframes = 0;
  int optimized_pairs = 0;  // pairs with a finite eps_f
  int events = 0;
  int failures = 0;
  std::map<std::string, int> failure_reasons;
  bool aborted = false;
  std::string abort_reason;
  std::optional<TruthComparison> truth;  // recomputed from the report events
  double transfer_error_mean = std::nan("");
  double transfer_error_p90 = std::nan("");
  double transfer_bound_px = 0.0;
  double transfer_within_bound = std::nan("");  // share of pairs with eps_f <= bound
  std::optional<double> residual_error_mean;
  std::optional<double> first_report_time;
  Vec6 final_xi = Vec6::Zero();
  Vec6 truth_xi_at_end = Vec6::Zero();
};

/// Metrics of one calibration run against its scenario truth.
RunSummary summarize(const CalibrationReport& report, const Scenario& scenario,
                     double transfer_bound_px = 1.0);

std::string summary_to_string(const RunSummary& summary);

struct SweepCell {
  double pixel_noise_sigma = 0.0;
  std::vector<RunSummary> replicas;
  int replicas_with_events = 0;
  TruthComparison mean_truth;  // averaged over replicas that reported
  double transfer_within_bound = std::nan("");  // pooled over all replicas' pairs
};

struct SweepResult {
  std::vector<SweepCell> cells;
};

/// Seed of a Monte-Carlo replica; distinct per (base, replica).
std::uint64_t replica_seed(std::uint64_t base, int replica);

/// Simulates and calibrates `replicas` scenarios per noise level. Replicas run in parallel
/// with OpenMP; the result does not depend on the thread count.
SweepResult run_sweep(const ConfigFile& base, const std::vector<double>& noise_grid, int replicas,
                      std::vector<std::vector<CalibrationReport>>* reports = nullptr);

std::string sweep_to_string(const SweepResult& sweep);

}  // namespace gcalib
