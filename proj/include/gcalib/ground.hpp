#pragma once

#include "gcalib/geom.hpp"
#include "gcalib/odometry.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace gcalib {

/// How the translation-alignment gates (eps_g after the epipolar check, eps_s on the plane
/// estimate) are evaluated.
enum class GateMode {
  /// eps_g: unit translation vs odometry driving direction, both projected off the ground
  /// normal. eps_s: |g x t_hat|, i.e. the normal must be perpendicular to the travel direction.
  HeadingAlignment,
  /// |t_hat . n| >= eps for both gates, exactly as printed.
  Literal,
};

struct Thresholds {
  double dtheta_max = 1.0 * M_PI / 180.0;  // rad
  double eps_g = 0.95;
  double eps_l = 0.2;
  double eps_s = 0.99;
  double eps_h = 0.05;  // m
  GateMode gate_mode = GateMode::HeadingAlignment;

  bool is_valid() const {
    return dtheta_max > 0 && eps_g > 0 && eps_g <= 1 && eps_l > 0 && eps_s > 0 && eps_s <= 1 &&
           eps_h > 0;
  }
};

/// a*u + b*v + c = 0 with ||(a, b)|| = 1; ground-side pixels evaluate positive.
struct HorizonLine {
  Vec3 coefficients = Vec3(0.0, 1.0, 0.0);

  double evaluate(const PixelPoint& p) const { return coefficients.dot(p.homogeneous()); }
};

enum class GroundLabel { Unverified, Ground, NonGround };

struct FeatureMatch {
  PixelPoint p_k;
  PixelPoint p_k1;
  PixelPoint predicted_p_k1;
  GroundLabel label = GroundLabel::Unverified;
  double score = 0.0;  // tracker quality, higher is better

  long track_id() const { return p_k.track_id; }
};

// ---------------------------------------------------------------------------
// Coarse extraction
// ---------------------------------------------------------------------------

/// Horizon line from the ground-to-camera rotation (columns are the ground axes in the
/// camera frame).
HorizonLine horizon_line(const Mat3& rotation_g_to_c, const CameraIntrinsics& intrinsics);

bool is_below_horizon(const HorizonLine& line, const PixelPoint& pixel);

/// Predicts where a ground feature of keyframe k appears in keyframe k+1.
PixelPoint predict_feature(const PixelPoint& p_k, const RelativeMotion& motion,
                           const Vec3& normal_hat, double height,
                           const CameraIntrinsics& intrinsics);

/// Keeps at most `per_cell` matches per cell of an even grid over image k, best score first,
/// ties broken by ascending track id. Survivors keep their input order.
std::vector<FeatureMatch> grid_select(std::span<const FeatureMatch> matches, int grid_cols,
                                      int grid_rows, int per_cell,
                                      const CameraIntrinsics& intrinsics);

// ---------------------------------------------------------------------------
// Epipolar geometry
// ---------------------------------------------------------------------------

/// F with p_{k+1}^T F p_k = 0 for a camera point map (R, t).
Mat3 fundamental_from_motion(const Mat3& R, const Vec3& t, const CameraIntrinsics& intrinsics);

/// First-order geometric (Sampson) distance, squared pixels.
double sampson_distance(const Mat3& F, const PixelPoint& p_k, const PixelPoint& p_k1);

/// Hartley-normalised eight-point estimate (rank 2 enforced). Needs >= 8 matches.
Mat3 eight_point(std::span<const FeatureMatch> matches);

/// The four (R, t_hat) candidates of an essential matrix.
std::vector<std::pair<Mat3, Vec3>> decompose_essential(const Mat3& E);

struct EpipolarOptions {
  int ransac_iterations = 200;
  double inlier_threshold_px = 1.5;
  std::uint64_t seed = 7;
};

struct EpipolarResult {
  RelativeMotion pose = RelativeMotion::identity(MotionFrame::Camera);  // odometry-scaled
  Mat3 F = Mat3::Zero();
  std::vector<FeatureMatch> inliers;
  Vec3 rotation_deviation = Vec3::Zero();  // Euler angles of R * R_odo^T
  double alignment = 0.0;                  // value compared against eps_g
  bool accepted = false;
};

/// Estimates the relative pose from matches (RANSAC over eight-point hypotheses plus the
/// odometry hypothesis, then Sampson refinement), applies the rotation and alignment gates,
/// and rescales the translation to the odometry baseline.
EpipolarResult epipolar_pose_check(std::span<const FeatureMatch> matches,
                                   const RelativeMotion& odometry_motion, const Vec3& normal_hat,
                                   const Thresholds& thresholds,
                                   const CameraIntrinsics& intrinsics,
                                   const EpipolarOptions& options = {});

// ---------------------------------------------------------------------------
// Ground verification
// ---------------------------------------------------------------------------

/// Normal of the plane through a triple of matches, from the null space of the stacked
/// difference vectors of the triangulated points. Sign chosen so that dot(result, reference)
/// >= 0.
Vec3 lemma3_normal(std::span<const FeatureMatch, 3> triple, const RelativeMotion& pose,
                   const Vec3& reference_normal, const CameraIntrinsics& intrinsics);

/// The cross-product rows (p,r,q) = (0,1,2), (1,0,2), (0,2,1) of the line-based construction,
/// for documentation tests. F satisfies p_k^T F p_{k+1} = 0. For consistent data each row is
/// parallel to the homogeneous pixel of its first point in image k, so the stack cannot
/// recover a plane normal.
Mat3 lemma3_printed_rows(std::span<const FeatureMatch, 3> triple, const Mat3& F);

/// 1 iff ||n_g x n_hat|| <= eps_l.
int label_ground(const Vec3& n_g, const Vec3& n_hat, double eps_l);

struct VerificationOptions {
  int max_seed_attempts = 50;
  double min_seed_area_px2 = 400.0;
  double max_reprojection_px = 1.0;
  int vote_pairs = 3;              // anchor pairs voting on each candidate
  std::size_t pair_pool = 8;       // nearest anchors considered when forming pairs
  double min_pair_spread_m = 0.5;  // anchor separation and candidate offset from the anchor line
  double min_pair_area_px2 = 10.0;
};

struct VerificationResult {
  std::vector<FeatureMatch> fine;     // labelled Ground, passed triangulation
  std::vector<GroundPoint3D> points;  // triangulated fine set, frame k
  std::vector<FeatureMatch> labelled; // every input match with its label
};

/// Seeds with a random ground triple, then grows outwards: each remaining match is labelled by
/// a majority of triples formed with pairs of nearby verified anchors. Output is a subset of
/// the input, deterministic in `rng_seed`.
VerificationResult verify_ground_set(std::span<const FeatureMatch> matches,
                                     const RelativeMotion& pose, const Vec3& normal_hat,
                                     double eps_l, std::uint64_t rng_seed,
                                     const CameraIntrinsics& intrinsics,
                                     const VerificationOptions& options = {});

/// Rejects unrealistic plane estimates (normal vs travel direction, height vs reference).
bool filter_plane_estimate(const GroundPlaneEstimate& est, const Vec3& pose_t,
                           double ref_height, const Thresholds& thresholds);

}  // namespace gcalib
