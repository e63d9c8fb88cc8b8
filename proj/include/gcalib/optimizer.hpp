#pragma once

#include "gcalib/geom.hpp"
#include "gcalib/ground.hpp"
#include "gcalib/odometry.hpp"

#include <Eigen/Core>

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace gcalib {

using Vec6 = Eigen::Matrix<double, 6, 1>;

struct OptimizerConfig {
  int window_size = 10;      // N_w
  int averaging_window = 20; // N_r
  double huber_delta = 1.345;  // px
  int max_iterations = 100;
  double convergence_tol = 1e-10;  // relative cost decrease
  double alpha = 0.05;
  Vec6 xi_d = Vec6::Zero();
  double feature_cov_px = 1.0;  // isotropic pixel sigma
  /// Sigma of the per-pair baseline factor ||t_k|| = odometry distance. It fixes the scale
  /// gauge shared by the translations and the plane height.
  double odometry_sigma = 0.01;  // m

  bool is_valid() const {
    return window_size >= 2 && averaging_window >= 1 && alpha > 0.0 && alpha < 1.0 &&
           huber_delta > 0.0 && feature_cov_px > 0.0 && max_iterations >= 1 &&
           convergence_tol >= 0.0 && odometry_sigma > 0.0;
  }
};

/// Camera motion of one keyframe pair (point map k -> k+1).
struct PairState {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();
  double baseline = 0.0;  // odometry distance; <= 0 disables the baseline factor

  Vec3 euler() const { return euler_zyx(rotation); }
};

struct WindowState {
  std::vector<PairState> frames;
  Vec3 normal = Vec3::UnitZ();  // g_s, camera frame, pointing towards the camera
  double height = 1.0;          // h_s

  GroundPlaneEstimate plane() const { return {normal, height, 0}; }
  std::size_t state_dim() const { return 6 * frames.size() + 3; }
};

/// Linear prior ||H_m * delta - r_m||^2 on the shared plane state, where delta is the local
/// coordinate (2 tangent + height) of the plane relative to the linearisation point.
struct MarginalPrior {
  Eigen::VectorXd r_m;
  Eigen::MatrixXd H_m;  // rows x 3
  Vec3 normal0 = Vec3::UnitZ();
  double height0 = 1.0;

  bool empty() const { return H_m.size() == 0; }
  static constexpr int kStateDim = 3;

  Eigen::Vector3d local(const Vec3& normal, double height) const;
  Eigen::VectorXd residual(const Vec3& normal, double height) const;
  /// d(residual)/d[tangent 2 at `normal`, height].
  Eigen::MatrixXd jacobian(const Vec3& normal) const;
};

/// Per-pair ground matches of a window.
using WindowFeatures = std::vector<std::vector<FeatureMatch>>;

struct OptimizeResult {
  WindowState state;
  int iterations = 0;  // accepted steps
  int evaluations = 0;
  double initial_cost = 0.0;
  double final_cost = 0.0;
  double gradient_norm = 0.0;
  std::vector<double> cost_history;  // after each accepted step, starting with the initial cost
};

Mat3 homography(const RelativeMotion& motion, const GroundPlaneEstimate& plane,
                const CameraIntrinsics& intrinsics);

Vec2 transfer_residual(const Mat3& H, const FeatureMatch& match);

/// Robust cost of a window: transfer terms, baseline factors and prior.
double window_cost(const WindowState& state, const WindowFeatures& features,
                   const MarginalPrior& prior, const OptimizerConfig& config,
                   const CameraIntrinsics& intrinsics);

OptimizeResult optimize_window(const WindowState& init, const WindowFeatures& features,
                               const MarginalPrior& prior, const OptimizerConfig& config,
                               const CameraIntrinsics& intrinsics);

/// Mean transfer residual norm (pixels) of every pair at `state`.
std::vector<double> pair_transfer_errors(const WindowState& state, const WindowFeatures& features,
                                         const CameraIntrinsics& intrinsics);

/// Eliminates pair `oldest` and folds its information (and the incoming prior) into a new
/// prior on the plane. Throws SingularBlock when the eliminated block is rank deficient.
MarginalPrior marginalize(const WindowState& window, const WindowFeatures& features,
                          const MarginalPrior& prior, const OptimizerConfig& config,
                          const CameraIntrinsics& intrinsics, std::size_t oldest = 0);

/// Camera-to-ground rotation with rows [t_hat; z_hat x t_hat; z_hat].
Mat3 build_rotation(const Vec3& g_star, const Vec3& t_star);

Mat3 average_rotations(std::span<const Mat3> rotations);
Vec3 average_translations(std::span<const Vec3> translations);

struct ZTestResult {
  Vec6 z = Vec6::Zero();
  bool report = false;
  double critical = 0.0;
  int samples = 0;
};

ZTestResult z_test(std::span<const Vec6> samples, const Vec6& xi_d, double alpha);

// ---------------------------------------------------------------------------
// Calibration parameterisation
// ---------------------------------------------------------------------------

/// xi = [roll, pitch, yaw of R * mount^T; translation].
Vec6 xi_from_extrinsic(const RigidTransform& ground_from_camera);
RigidTransform extrinsic_from_xi(const Vec6& xi);

struct CalibrationResult {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();
  Vec6 xi = Vec6::Zero();
  int sample_count = 0;
  bool reported = false;
};

// ---------------------------------------------------------------------------
// Failure detection
// ---------------------------------------------------------------------------

enum class FailureReason {
  PoseDiscontinuity,
  TooFewFeatures,
  PlaneJump,
  TooFewTriangulated,
  PlaneQualityFailed,
};

const char* to_string(FailureReason reason);
std::optional<FailureReason> failure_reason_from_string(const std::string& s);

struct StepDiagnostics {
  double rotation_jump = 0.0;     // rad, vision rotation vs odometry rotation
  double translation_jump = 0.0;  // m, vision vs odometry translation at equal scale
  bool pose_available = true;
  int ground_features = 0;        // coarse candidates entering the epipolar check
  double normal_change = 0.0;     // rad, new plane vs window plane
  double height_change = 0.0;     // m
  int triangulated = 0;
  bool plane_quality_ok = true;
};

struct FailureConfig {
  double max_rotation_jump = 2.0 * M_PI / 180.0;
  double max_translation_jump = 0.2;
  int min_features = 8;
  double max_normal_change = 3.0 * M_PI / 180.0;
  double max_height_change = 0.05;
  int min_triangulated = 8;
};

std::optional<FailureReason> detect_failure(const StepDiagnostics& step,
                                            const FailureConfig& config);

}  // namespace gcalib
