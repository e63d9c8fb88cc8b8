#include "gcalib/geom.hpp"

#include "gcalib/error.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>

namespace gcalib {

const char* to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::NonPositiveDepth: return "NonPositiveDepth";
    case ErrorCode::DegenerateRays: return "DegenerateRays";
    case ErrorCode::NegativeDepth: return "NegativeDepth";
    case ErrorCode::InsufficientPoints: return "InsufficientPoints";
    case ErrorCode::CollinearPoints: return "CollinearPoints";
    case ErrorCode::CameraFacingSky: return "CameraFacingSky";
    case ErrorCode::RayParallelToGround: return "RayParallelToGround";
    case ErrorCode::PointBehindCamera: return "PointBehindCamera";
    case ErrorCode::InsufficientMatches: return "InsufficientMatches";
    case ErrorCode::DecompositionFailed: return "DecompositionFailed";
    case ErrorCode::CollinearTriple: return "CollinearTriple";
    case ErrorCode::RankDeficient: return "RankDeficient";
    case ErrorCode::NoGroundSeed: return "NoGroundSeed";
    case ErrorCode::PointAtInfinity: return "PointAtInfinity";
    case ErrorCode::SolverDiverged: return "SolverDiverged";
    case ErrorCode::InsufficientFeatures: return "InsufficientFeatures";
    case ErrorCode::SingularBlock: return "SingularBlock";
    case ErrorCode::DegenerateGeometry: return "DegenerateGeometry";
    case ErrorCode::RankDeficientSum: return "RankDeficientSum";
    case ErrorCode::EmptySet: return "EmptySet";
    case ErrorCode::NoSecondCamera: return "NoSecondCamera";
    case ErrorCode::EmptyMatches: return "EmptyMatches";
    case ErrorCode::EmptyScene: return "EmptyScene";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::SchemaVersionMismatch: return "SchemaVersionMismatch";
    case ErrorCode::MalformedField: return "MalformedField";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
  }
  return "Unknown";
}

Mat3 skew(const Vec3& v) {
  Mat3 S;
  S << 0.0, -v.z(), v.y(),
       v.z(), 0.0, -v.x(),
       -v.y(), v.x(), 0.0;
  return S;
}

Mat3 exp_so3(const Vec3& omega) {
  const double theta = omega.norm();
  const Mat3 W = skew(omega);
  if (theta < 1e-8) {
    return Mat3::Identity() + W + 0.5 * W * W;
  }
  const double a = std::sin(theta) / theta;
  const double b = (1.0 - std::cos(theta)) / (theta * theta);
  return Mat3::Identity() + a * W + b * W * W;
}

Vec3 log_so3(const Mat3& R) {
  const double c = std::clamp((R.trace() - 1.0) * 0.5, -1.0, 1.0);
  const double theta = std::acos(c);
  const Vec3 w(R(2, 1) - R(1, 2), R(0, 2) - R(2, 0), R(1, 0) - R(0, 1));
  if (theta < 1e-8) {
    return 0.5 * w;
  }
  if (M_PI - theta < 1e-6) {
    // Near pi the antisymmetric part vanishes; recover the axis from R + I.
    const Mat3 B = 0.5 * (R + Mat3::Identity());
    int i = 0;
    B.diagonal().maxCoeff(&i);
    Vec3 axis = B.col(i) / std::sqrt(std::max(B(i, i), 1e-300));
    axis.normalize();
    if (axis.dot(w) < 0.0) axis = -axis;
    return theta * axis;
  }
  return theta / (2.0 * std::sin(theta)) * w;
}

Mat3 orthonormalize(const Mat3& M) {
  Eigen::JacobiSVD<Mat3> svd(M, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 D = Mat3::Identity();
  D(2, 2) = (svd.matrixU() * svd.matrixV().transpose()).determinant() < 0.0 ? -1.0 : 1.0;
  return svd.matrixU() * D * svd.matrixV().transpose();
}

double rotation_angle_between(const Mat3& a, const Mat3& b) {
  return log_so3(a.transpose() * b).norm();
}

Eigen::Matrix<double, 3, 2> tangent_basis(const Vec3& n) {
  const Vec3 seed = std::abs(n.x()) < 0.9 ? Vec3::UnitX() : Vec3::UnitY();
  const Vec3 b1 = n.cross(seed).normalized();
  const Vec3 b2 = n.cross(b1).normalized();
  Eigen::Matrix<double, 3, 2> B;
  B << b1, b2;
  return B;
}

Mat3 mount_rotation() {
  Mat3 M;
  M << 0.0, 0.0, 1.0, -1.0, 0.0, 0.0, 0.0, -1.0, 0.0;
  return M;
}

Vec3 euler_zyx(const Mat3& R) {
  const double pitch = std::asin(std::clamp(-R(2, 0), -1.0, 1.0));
  const double roll = std::atan2(R(2, 1), R(2, 2));
  const double yaw = std::atan2(R(1, 0), R(0, 0));
  return {roll, pitch, yaw};
}

Mat3 from_euler_zyx(const Vec3& rpy) {
  return (Eigen::AngleAxisd(rpy.z(), Vec3::UnitZ()) * Eigen::AngleAxisd(rpy.y(), Vec3::UnitY()) *
          Eigen::AngleAxisd(rpy.x(), Vec3::UnitX()))
      .toRotationMatrix();
}

bool RigidTransform::is_valid(double tol) const {
  return (rotation * rotation.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff() <= tol &&
         std::abs(rotation.determinant() - 1.0) <= tol && translation.allFinite();
}

RigidTransform compose(const RigidTransform& a, const RigidTransform& b) {
  return {a.rotation * b.rotation, a.rotation * b.translation + a.translation};
}

RigidTransform invert(const RigidTransform& a) {
  const Mat3 Rt = a.rotation.transpose();
  return {Rt, -(Rt * a.translation)};
}

Mat3 CameraIntrinsics::K() const {
  Mat3 K;
  K << fx, 0.0, cx, 0.0, fy, cy, 0.0, 0.0, 1.0;
  return K;
}

Mat3 CameraIntrinsics::K_inv() const {
  Mat3 Ki;
  Ki << 1.0 / fx, 0.0, -cx / fx, 0.0, 1.0 / fy, -cy / fy, 0.0, 0.0, 1.0;
  return Ki;
}

PixelPoint project(const Vec3& point, const CameraIntrinsics& intrinsics) {
  if (!(point.z() > 1e-12)) {
    throw Error(ErrorCode::NonPositiveDepth, "point depth must be positive");
  }
  return {intrinsics.fx * point.x() / point.z() + intrinsics.cx,
          intrinsics.fy * point.y() / point.z() + intrinsics.cy, -1};
}

Vec3 backproject(const PixelPoint& pixel, const CameraIntrinsics& intrinsics) {
  return {(pixel.u - intrinsics.cx) / intrinsics.fx, (pixel.v - intrinsics.cy) / intrinsics.fy,
          1.0};
}

GroundPoint3D triangulate(const PixelPoint& p_k, const PixelPoint& p_k1,
                          const RigidTransform& relative_pose,
                          const CameraIntrinsics& intrinsics) {
  const Mat3 Rt = relative_pose.rotation.transpose();
  const Vec3 c2 = -(Rt * relative_pose.translation);
  if (c2.norm() < 1e-12) {
    throw Error(ErrorCode::DegenerateRays, "zero baseline");
  }
  const Vec3 d1 = backproject(p_k, intrinsics).normalized();
  const Vec3 d2 = (Rt * backproject(p_k1, intrinsics)).normalized();

  // Closest points s*d1 and c2 + u*d2.
  const double b = d1.dot(d2);
  const double denom = 1.0 - b * b;
  if (d1.cross(d2).norm() < 1e-12 || denom < 1e-24) {
    throw Error(ErrorCode::DegenerateRays, "rays are parallel");
  }
  const double e = d1.dot(c2);
  const double f = d2.dot(c2);
  const double s = (e - b * f) / denom;
  const double u = (b * e - f) / denom;
  if (s <= 0.0 || u <= 0.0) {
    throw Error(ErrorCode::NegativeDepth, "point lies behind a camera");
  }
  const Vec3 X = 0.5 * (s * d1 + c2 + u * d2);
  const Vec3 X1 = relative_pose.apply(X);
  if (X.z() <= 1e-12 || X1.z() <= 1e-12) {
    throw Error(ErrorCode::NegativeDepth, "point lies behind a camera");
  }
  const double e0 = (project(X, intrinsics).vec() - p_k.vec()).norm();
  const double e1 = (project(X1, intrinsics).vec() - p_k1.vec()).norm();
  return {X, std::max(e0, e1)};
}

GroundPlaneEstimate fit_plane(std::span<const GroundPoint3D> points) {
  if (points.size() < 3) {
    throw Error(ErrorCode::InsufficientPoints, "plane fit needs at least 3 points");
  }
  Vec3 centroid = Vec3::Zero();
  for (const auto& p : points) centroid += p.position;
  centroid /= static_cast<double>(points.size());

  Mat3 scatter = Mat3::Zero();
  for (const auto& p : points) {
    const Vec3 d = p.position - centroid;
    scatter += d * d.transpose();
  }
  Eigen::SelfAdjointEigenSolver<Mat3> eig(scatter);
  const Vec3 lambda = eig.eigenvalues();  // ascending
  if (lambda(1) - lambda(0) <= 1e-12 * std::max(1.0, lambda(2))) {
    throw Error(ErrorCode::CollinearPoints, "points do not span a plane");
  }
  Vec3 normal = eig.eigenvectors().col(0).normalized();
  double height = -normal.dot(centroid);
  if (height < 0.0) {
    normal = -normal;
    height = -height;
  }
  if (height < 1e-12) {
    throw Error(ErrorCode::DegenerateGeometry, "plane passes through the camera centre");
  }
  return {normal, height, static_cast<int>(points.size())};
}

}  // namespace gcalib
