#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <span>
#include <vector>

namespace gcalib {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

// ---------------------------------------------------------------------------
// SO(3) helpers
// ---------------------------------------------------------------------------

Mat3 skew(const Vec3& v);

/// Rodrigues exponential; second-order Taylor expansion below 1e-8 rad.
Mat3 exp_so3(const Vec3& omega);

/// Inverse of exp_so3 for rotations with angle in [0, pi].
Vec3 log_so3(const Mat3& R);

/// Nearest rotation in the Frobenius sense (SVD projection with det = +1).
Mat3 orthonormalize(const Mat3& M);

/// Angle of the relative rotation a^T b, radians.
double rotation_angle_between(const Mat3& a, const Mat3& b);

/// Orthonormal basis of the plane perpendicular to unit vector n (deterministic in n).
Eigen::Matrix<double, 3, 2> tangent_basis(const Vec3& n);

/// Camera axes of a forward-looking camera expressed in vehicle axes (x forward, y left,
/// z up): optical axis forward, image x to the right, image y down.
Mat3 mount_rotation();

/// Euler angles (roll, pitch, yaw) with R = Rz(yaw) * Ry(pitch) * Rx(roll).
Vec3 euler_zyx(const Mat3& R);
Mat3 from_euler_zyx(const Vec3& roll_pitch_yaw);

// ---------------------------------------------------------------------------
// Rigid transforms
// ---------------------------------------------------------------------------

/// Frame change x_dst = rotation * x_src + translation.
struct RigidTransform {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  static RigidTransform identity() { return {}; }

  Vec3 apply(const Vec3& x) const { return rotation * x + translation; }

  bool is_valid(double tol = 1e-9) const;

  friend bool operator==(const RigidTransform&, const RigidTransform&) = default;
};

/// compose(a, b) applies b first, then a.
RigidTransform compose(const RigidTransform& a, const RigidTransform& b);
RigidTransform invert(const RigidTransform& a);

// ---------------------------------------------------------------------------
// Camera model
// ---------------------------------------------------------------------------

struct CameraIntrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 1;
  int height = 1;

  Mat3 K() const;
  Mat3 K_inv() const;
  bool contains(double u, double v) const {
    return u >= 0.0 && v >= 0.0 && u <= width - 1.0 && v <= height - 1.0;
  }
  bool is_valid() const { return fx > 0 && fy > 0 && width > 0 && height > 0; }

  friend bool operator==(const CameraIntrinsics&, const CameraIntrinsics&) = default;
};

struct PixelPoint {
  double u = 0.0;
  double v = 0.0;
  long track_id = -1;

  Vec2 vec() const { return {u, v}; }
  Vec3 homogeneous() const { return {u, v, 1.0}; }

  friend bool operator==(const PixelPoint&, const PixelPoint&) = default;
};

struct GroundPoint3D {
  Vec3 position = Vec3::Zero();
  double reprojection_error = 0.0;
};

/// Plane n . X = -height in the camera frame; n points from the road towards the camera.
struct GroundPlaneEstimate {
  Vec3 normal = Vec3::UnitZ();
  double height = 1.0;
  int inlier_count = 0;
};

PixelPoint project(const Vec3& point, const CameraIntrinsics& intrinsics);

/// K^-1 [u v 1]^T; the third component is exactly 1.
Vec3 backproject(const PixelPoint& pixel, const CameraIntrinsics& intrinsics);

/// Midpoint triangulation. `relative_pose` maps frame k coordinates into frame k+1; the
/// returned point is expressed in frame k.
GroundPoint3D triangulate(const PixelPoint& p_k, const PixelPoint& p_k1,
                          const RigidTransform& relative_pose,
                          const CameraIntrinsics& intrinsics);

/// Total-least-squares plane through the points, oriented so the camera origin lies on the
/// positive side (height > 0).
GroundPlaneEstimate fit_plane(std::span<const GroundPoint3D> points);

}  // namespace gcalib
