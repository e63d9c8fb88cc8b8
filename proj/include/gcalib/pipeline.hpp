#pragma once

#include "gcalib/ground.hpp"
#include "gcalib/metrics.hpp"
#include "gcalib/optimizer.hpp"
#include "gcalib/simulator.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace gcalib {

struct KeyframeSelection {
  double min_distance = 0.5;                   // m of odometry travel between keyframes
  double min_speed = 1.0;                      // m/s
  double max_speed = 40.0;                     // m/s
  double max_yaw_rate = 5.0 * M_PI / 180.0;    // rad/s

  bool is_valid() const {
    return min_distance > 0.0 && min_speed >= 0.0 && max_speed > min_speed && max_yaw_rate > 0.0;
  }
};

/// How the Z-test target is chosen.
enum class ReferenceMode {
  /// The window-averaged estimate about to be broadcast, tested against the single-pair samples.
  Estimate,
  /// Mean of the older half of the averaging buffer; the newer half is tested against it.
  SplitHalf,
  /// OptimizerConfig::xi_d, tested against the whole buffer.
  Fixed,
};

struct PipelineConfig {
  Thresholds thresholds;
  OptimizerConfig optimizer;
  FailureConfig failure;
  KeyframeSelection keyframes;
  EpipolarOptions epipolar;
  VerificationOptions verification;
  double gating_radius_px = 8.0;
  int grid_cols = 8;
  int grid_rows = 6;
  int per_cell = 6;
  /// Only triangulated points closer than this enter the per-pair plane fit.
  double max_plane_depth = 12.0;  // m
  /// Information kept by the marginal prior at each slide (1 = no forgetting).
  double prior_decay = 0.6;
  /// Consecutive pairs that must disagree with the window plane before a PlaneJump is raised.
  int plane_jump_persistence = 2;
  ReferenceMode reference_mode = ReferenceMode::Estimate;
  int min_report_samples = 8;
  /// Consecutive rejected reporting tests, after a report, that restart the segment (0 = never).
  int gate_stall_limit = 20;
  Vec6 initial_xi = Vec6::Zero();  // factory extrinsic
  std::uint64_t seed = 1;

  static PipelineConfig defaults();
  void validate() const;
};

struct ReportEvent {
  double timestamp = 0.0;
  int keyframe = 0;
  Vec6 xi = Vec6::Zero();
  Vec6 z = Vec6::Zero();
  int samples = 0;  // N_h
  double critical = 0.0;
};

struct KeyframeDiagnostics {
  int index = 0;       // keyframe number
  int frame = 0;       // scenario frame index
  double timestamp = 0.0;
  int candidates = 0;  // below horizon, matched, gated
  int selected = 0;    // after grid selection
  int inliers = 0;     // epipolar inliers
  int fine = 0;        // verified ground matches
  bool gated = false;  // rejected by the epipolar gates
  bool suspect = false;  // plane disagreed with the window; held back pending confirmation
  std::optional<GroundPlaneEstimate> plane;       // triangulated fit
  std::optional<GroundPlaneEstimate> pair_plane;  // homography fit of this pair alone
  std::string failure;  // empty when none
  double transfer_error = std::nan("");  // eps_f of the newest pair after optimisation
  std::vector<double> residuals;         // per-match transfer residual norms, pixels
  Vec3 window_normal = Vec3::Zero();
  double window_height = 0.0;
  bool marginalization_fallback = false;
  bool gate_restart = false;  // segment restarted after a stalled reporting test
  std::optional<double> residual_error;  // eps_p with the current estimate
};

struct FailureEvent {
  double timestamp = 0.0;
  int keyframe = 0;
  std::string reason;
};

struct CalibrationReport {
  int schema_version = 1;
  std::vector<ReportEvent> events;
  std::vector<KeyframeDiagnostics> keyframes;
  std::vector<FailureEvent> failures;
  Histogram transfer_histogram;
  Histogram residual_histogram;
  std::optional<TruthComparison> truth;
  CalibrationResult final_result;
  bool aborted = false;
  std::string abort_reason;
};

CalibrationReport run_pipeline(const Scenario& scenario, const PipelineConfig& config);

struct KeyframeChoice {
  std::size_t frame = 0;
  bool starts_chain = false;  // previous frames were rejected; no pair with the last keyframe
};

/// Keyframes chosen from the scenario by odometry alone.
std::vector<KeyframeChoice> select_keyframes(const Scenario& scenario, const KeyframeSelection& sel);

/// Ground_from_CoG transform for a CoG height.
RigidTransform ground_from_cog(const VehicleParams& vehicle);

}  // namespace gcalib
