#include "gcalib/optimizer.hpp"

#include "gcalib/error.hpp"
#include "gcalib/kernels.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <Eigen/SVD>
#include <boost/math/distributions/normal.hpp>

#include <cmath>
#include <limits>

namespace gcalib {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

std::vector<kernels::PairFeatures> prepare(const WindowFeatures& features,
                                           const CameraIntrinsics& intrinsics) {
  std::vector<kernels::PairFeatures> out(features.size());
  for (std::size_t k = 0; k < features.size(); ++k) {
    for (const auto& m : features[k]) {
      out[k].rays.push_back(backproject(m.p_k, intrinsics));
      out[k].observed.push_back(m.p_k1.vec());
    }
  }
  return out;
}

/// Owns the arrays a kernels::HomographyProblem points into.
struct ProblemStorage {
  std::vector<Mat3> rotations;
  std::vector<Vec3> translations;
  kernels::HomographyProblem problem;

  ProblemStorage(const WindowState& s, std::span<const kernels::PairFeatures> feats,
                 const OptimizerConfig& config, const CameraIntrinsics& intrinsics) {
    for (const auto& f : s.frames) {
      rotations.push_back(f.rotation);
      translations.push_back(f.translation);
    }
    problem.intrinsics = intrinsics;
    problem.rotations = rotations;
    problem.translations = translations;
    problem.features = feats;
    problem.normal = s.normal;
    problem.normal_basis = tangent_basis(s.normal);
    problem.height = s.height;
    problem.sigma_px = config.feature_cov_px;
    problem.huber_delta_px = config.huber_delta * config.feature_cov_px;
  }
};

double baseline_residual(const PairState& f, double sigma) {
  return (f.translation.norm() - f.baseline) / sigma;
}

double extra_cost(const WindowState& s, const MarginalPrior& prior, const OptimizerConfig& config) {
  double c = 0.0;
  for (const auto& f : s.frames) {
    if (f.baseline > 0.0) c += std::pow(baseline_residual(f, config.odometry_sigma), 2);
  }
  if (!prior.empty()) c += prior.residual(s.normal, s.height).squaredNorm();
  return c;
}

double full_cost(const WindowState& s, std::span<const kernels::PairFeatures> feats,
                 const MarginalPrior& prior, const OptimizerConfig& config,
                 const CameraIntrinsics& intrinsics) {
  if (!(s.height > 0.0)) return kInf;
  ProblemStorage ps(s, feats, config, intrinsics);
  const double c = kernels::omp::cost(ps.problem);
  return c + extra_cost(s, prior, config);
}

kernels::NormalEquations full_assemble(const WindowState& s,
                                       std::span<const kernels::PairFeatures> feats,
                                       const MarginalPrior& prior, const OptimizerConfig& config,
                                       const CameraIntrinsics& intrinsics) {
  ProblemStorage ps(s, feats, config, intrinsics);
  kernels::NormalEquations ne = kernels::omp::assemble(ps.problem);
  for (std::size_t k = 0; k < s.frames.size(); ++k) {
    const auto& f = s.frames[k];
    const double n = f.translation.norm();
    if (f.baseline <= 0.0 || n <= 0.0) continue;
    const double r = baseline_residual(f, config.odometry_sigma);
    const Eigen::RowVector3d J = f.translation.transpose() / (n * config.odometry_sigma);
    const auto o = static_cast<Eigen::Index>(6 * k + 3);
    ne.hessian.block<3, 3>(o, o) += J.transpose() * J;
    ne.gradient.segment<3>(o) += J.transpose() * r;
    ne.cost += r * r;
  }
  if (!prior.empty()) {
    const auto so = static_cast<Eigen::Index>(6 * s.frames.size());
    const Eigen::VectorXd r = prior.residual(s.normal, s.height);
    const Eigen::MatrixXd J = prior.jacobian(s.normal);
    ne.hessian.block<3, 3>(so, so) += J.transpose() * J;
    ne.gradient.segment<3>(so) += J.transpose() * r;
    ne.cost += r.squaredNorm();
  }
  return ne;
}

WindowState retract(const WindowState& s, const Eigen::VectorXd& d) {
  WindowState out = s;
  for (std::size_t k = 0; k < s.frames.size(); ++k) {
    const auto o = static_cast<Eigen::Index>(6 * k);
    out.frames[k].rotation = exp_so3(d.segment<3>(o)) * s.frames[k].rotation;
    out.frames[k].translation = s.frames[k].translation + d.segment<3>(o + 3);
  }
  const auto so = static_cast<Eigen::Index>(6 * s.frames.size());
  out.normal = (s.normal + tangent_basis(s.normal) * d.segment<2>(so)).normalized();
  out.height = s.height + d(so + 2);
  return out;
}

void check_window(const WindowState& s, const WindowFeatures& features) {
  if (features.size() != s.frames.size()) {
    throw Error(ErrorCode::InsufficientFeatures, "one feature set per keyframe pair is required");
  }
  for (const auto& f : features) {
    if (f.size() < 4) {
      throw Error(ErrorCode::InsufficientFeatures, "every pair needs at least 4 ground matches");
    }
  }
  if (!(s.height > 0.0)) {
    throw Error(ErrorCode::DegenerateGeometry, "plane height must be positive");
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Marginal prior
// ---------------------------------------------------------------------------

Eigen::Vector3d MarginalPrior::local(const Vec3& normal, double height) const {
  const auto B0 = tangent_basis(normal0);
  const double denom = normal0.dot(normal);
  Eigen::Vector3d d;
  d.head<2>() = B0.transpose() * normal / denom;
  d(2) = height - height0;
  return d;
}

Eigen::VectorXd MarginalPrior::residual(const Vec3& normal, double height) const {
  return H_m * local(normal, height) - r_m;
}

Eigen::MatrixXd MarginalPrior::jacobian(const Vec3& normal) const {
  const auto B0 = tangent_basis(normal0);
  const double denom = normal0.dot(normal);
  const Eigen::Matrix<double, 2, 3> da_dg =
      B0.transpose() / denom - (B0.transpose() * normal) * normal0.transpose() / (denom * denom);
  Mat3 J = Mat3::Zero();
  J.block<2, 2>(0, 0) = da_dg * tangent_basis(normal);
  J(2, 2) = 1.0;
  return H_m * J;
}

// ---------------------------------------------------------------------------

Mat3 homography(const RelativeMotion& motion, const GroundPlaneEstimate& plane,
                const CameraIntrinsics& intrinsics) {
  if (!(plane.height > 0.0)) {
    throw Error(ErrorCode::DegenerateGeometry, "homography needs a positive plane height");
  }
  const Mat3& dR = motion.rotation();
  const Vec3 t_back = -(dR.transpose() * motion.translation());
  return intrinsics.K() * dR *
         (Mat3::Identity() + t_back * plane.normal.transpose() / plane.height) *
         intrinsics.K_inv();
}

Vec2 transfer_residual(const Mat3& H, const FeatureMatch& match) {
  const Vec3 y = H * match.p_k.homogeneous();
  if (y.z() < 1e-12) {
    throw Error(ErrorCode::PointAtInfinity, "transferred point is at infinity");
  }
  return match.p_k1.vec() - y.head<2>() / y.z();
}

double window_cost(const WindowState& state, const WindowFeatures& features,
                   const MarginalPrior& prior, const OptimizerConfig& config,
                   const CameraIntrinsics& intrinsics) {
  const auto feats = prepare(features, intrinsics);
  return full_cost(state, feats, prior, config, intrinsics);
}

OptimizeResult optimize_window(const WindowState& init, const WindowFeatures& features,
                               const MarginalPrior& prior, const OptimizerConfig& config,
                               const CameraIntrinsics& intrinsics) {
  if (!config.is_valid()) throw Error(ErrorCode::InvalidConfig, "invalid optimizer config");
  check_window(init, features);
  const auto feats = prepare(features, intrinsics);

  OptimizeResult res;
  WindowState x = init;
  x.normal.normalize();
  double cost = full_cost(x, feats, prior, config, intrinsics);
  if (!std::isfinite(cost)) {
    throw Error(ErrorCode::SolverDiverged, "initial window cost is not finite");
  }
  res.initial_cost = cost;
  res.cost_history.push_back(cost);

  double lambda = 1e-4;
  int rejected = 0;
  bool streak_finite = false;
  kernels::NormalEquations ne = full_assemble(x, feats, prior, config, intrinsics);
  while (res.evaluations < config.max_iterations) {
    if (cost < 1e-20 || ne.gradient.lpNorm<Eigen::Infinity>() < 1e-14) break;
    Eigen::MatrixXd A = ne.hessian;
    const double dmax = std::max(A.diagonal().maxCoeff(), 1e-300);
    A.diagonal() += lambda * (A.diagonal().array() + 1e-12 * dmax).matrix();
    const Eigen::VectorXd step = A.ldlt().solve(-ne.gradient);
    ++res.evaluations;
    double cand_cost = kInf;
    WindowState cand;
    if (step.allFinite()) {
      cand = retract(x, step);
      cand_cost = full_cost(cand, feats, prior, config, intrinsics);
    }
    if (cand_cost < cost) {
      const double rel = (cost - cand_cost) / cost;
      x = std::move(cand);
      cost = cand_cost;
      res.cost_history.push_back(cost);
      ++res.iterations;
      lambda = std::max(lambda * 0.1, 1e-12);
      rejected = 0;
      streak_finite = false;
      ne = full_assemble(x, feats, prior, config, intrinsics);
      if (rel < config.convergence_tol) break;
    } else {
      lambda *= 10.0;
      streak_finite = streak_finite || std::isfinite(cand_cost);
      if (++rejected >= 5) {
        if (!streak_finite) {
          throw Error(ErrorCode::SolverDiverged, "no damped step produced a valid state");
        }
        break;
      }
    }
  }
  res.state = x;
  res.final_cost = cost;
  res.gradient_norm = ne.gradient.norm();
  return res;
}

std::vector<double> pair_transfer_errors(const WindowState& state, const WindowFeatures& features,
                                         const CameraIntrinsics& intrinsics) {
  const auto feats = prepare(features, intrinsics);
  OptimizerConfig cfg;
  ProblemStorage ps(state, feats, cfg, intrinsics);
  std::vector<double> out;
  for (std::size_t k = 0; k < feats.size(); ++k) {
    const auto norms = kernels::omp::residual_norms(ps.problem, k);
    if (norms.empty()) {
      throw Error(ErrorCode::EmptySet, "pair without ground matches");
    }
    double sum = 0.0;
    for (double v : norms) sum += v;
    out.push_back(sum / static_cast<double>(norms.size()));
  }
  return out;
}

MarginalPrior marginalize(const WindowState& window, const WindowFeatures& features,
                          const MarginalPrior& prior, const OptimizerConfig& config,
                          const CameraIntrinsics& intrinsics, std::size_t oldest) {
  if (oldest >= window.frames.size() || features.size() != window.frames.size()) {
    throw Error(ErrorCode::InvalidConfig, "no such frame to marginalise");
  }
  WindowState sub;
  sub.frames = {window.frames[oldest]};
  sub.normal = window.normal;
  sub.height = window.height;
  const auto feats = prepare(WindowFeatures{features[oldest]}, intrinsics);
  const auto ne = full_assemble(sub, feats, prior, config, intrinsics);

  const Eigen::Matrix<double, 6, 6> A00 = ne.hessian.topLeftCorner<6, 6>();
  const Eigen::Matrix<double, 6, 3> A0s = ne.hessian.topRightCorner<6, 3>();
  const Eigen::Matrix<double, 3, 3> Ass = ne.hessian.bottomRightCorner<3, 3>();
  const Eigen::Matrix<double, 6, 1> g0 = ne.gradient.head<6>();
  const Eigen::Matrix<double, 3, 1> gs = ne.gradient.tail<3>();

  Eigen::SelfAdjointEigenSolver<Eigen::Matrix<double, 6, 6>> eig(A00);
  const auto& ev = eig.eigenvalues();
  if (!(ev.maxCoeff() > 1e-300) || ev.minCoeff() <= 1e-12 * ev.maxCoeff()) {
    throw Error(ErrorCode::SingularBlock, "eliminated block is rank deficient");
  }
  const Eigen::Matrix<double, 6, 6> A00_inv =
      eig.eigenvectors() * ev.cwiseInverse().asDiagonal() * eig.eigenvectors().transpose();
  Eigen::Matrix3d L = Ass - A0s.transpose() * A00_inv * A0s;
  L = 0.5 * (L + L.transpose());
  const Eigen::Vector3d b = gs - A0s.transpose() * A00_inv * g0;

  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(L);
  const double lmax = std::max(es.eigenvalues().maxCoeff(), 0.0);
  std::vector<int> keep;
  for (int i = 0; i < 3; ++i) {
    if (es.eigenvalues()(i) > 1e-12 * lmax && es.eigenvalues()(i) > 0.0) keep.push_back(i);
  }
  MarginalPrior out;
  out.normal0 = window.normal.normalized();
  out.height0 = window.height;
  out.H_m = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(keep.size()), 3);
  out.r_m = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(keep.size()));
  for (std::size_t r = 0; r < keep.size(); ++r) {
    const double d = es.eigenvalues()(keep[r]);
    const Eigen::Vector3d v = es.eigenvectors().col(keep[r]);
    const auto row = static_cast<Eigen::Index>(r);
    out.H_m.row(row) = std::sqrt(d) * v.transpose();
    out.r_m(row) = -v.dot(b) / std::sqrt(d);
  }
  return out;
}

// ---------------------------------------------------------------------------

Mat3 build_rotation(const Vec3& g_star, const Vec3& t_star) {
  const double tn = t_star.norm();
  if (tn <= 1e-9 || g_star.norm() <= 0.0) {
    throw Error(ErrorCode::DegenerateGeometry, "translation too small to define a heading");
  }
  const Vec3 nx = t_star / tn;
  const Vec3 g = g_star.normalized();
  if (nx.cross(g).norm() <= std::sin(1e-6)) {
    throw Error(ErrorCode::DegenerateGeometry, "normal parallel to the heading");
  }
  const Vec3 nz = (g - g.dot(nx) * nx).normalized();
  Mat3 R;
  R.row(0) = nx.transpose();
  R.row(1) = nz.cross(nx).transpose();
  R.row(2) = nz.transpose();
  return R;
}

Mat3 average_rotations(std::span<const Mat3> rotations) {
  if (rotations.empty()) throw Error(ErrorCode::EmptySet, "no rotations to average");
  Mat3 S = Mat3::Zero();
  for (const auto& R : rotations) S += R;
  Eigen::JacobiSVD<Mat3> svd(S, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Vec3 sv = svd.singularValues();
  if (sv(1) <= 1e-12 * static_cast<double>(rotations.size())) {
    throw Error(ErrorCode::RankDeficientSum, "rotation sum has rank below 2");
  }
  const Mat3 U = svd.matrixU();
  const Mat3 V = svd.matrixV();
  const double d = (U * V.transpose()).determinant() >= 0.0 ? 1.0 : -1.0;
  return U * Vec3(1.0, 1.0, d).asDiagonal() * V.transpose();
}

Vec3 average_translations(std::span<const Vec3> translations) {
  if (translations.empty()) throw Error(ErrorCode::EmptySet, "no translations to average");
  Vec3 s = Vec3::Zero();
  for (const auto& t : translations) s += t;
  return s / static_cast<double>(translations.size());
}

ZTestResult z_test(std::span<const Vec6> samples, const Vec6& xi_d, double alpha) {
  if (samples.size() < 2) {
    throw Error(ErrorCode::InsufficientPoints, "z-test needs at least two samples");
  }
  if (!(alpha > 0.0 && alpha < 1.0)) throw Error(ErrorCode::InvalidConfig, "alpha outside (0,1)");
  const double n = static_cast<double>(samples.size());
  Vec6 mean = Vec6::Zero();
  for (const auto& s : samples) mean += s;
  mean /= n;
  Vec6 var = Vec6::Zero();
  for (const auto& s : samples) var += (s - mean).cwiseAbs2();
  var /= (n - 1.0);

  ZTestResult out;
  out.samples = static_cast<int>(samples.size());
  out.critical = boost::math::quantile(boost::math::normal(0.0, 1.0), 1.0 - alpha / 2.0);
  out.report = true;
  for (int i = 0; i < 6; ++i) {
    const double v = std::max(var(i), 1e-12);
    out.z(i) = (mean(i) - xi_d(i)) / std::sqrt(v / n);
    if (!(std::abs(out.z(i)) < out.critical)) out.report = false;
  }
  return out;
}

Vec6 xi_from_extrinsic(const RigidTransform& T) {
  Vec6 xi;
  xi.head<3>() = euler_zyx(T.rotation * mount_rotation().transpose());
  xi.tail<3>() = T.translation;
  return xi;
}

RigidTransform extrinsic_from_xi(const Vec6& xi) {
  return {from_euler_zyx(xi.head<3>()) * mount_rotation(), xi.tail<3>()};
}

// ---------------------------------------------------------------------------

const char* to_string(FailureReason reason) {
  switch (reason) {
    case FailureReason::PoseDiscontinuity: return "PoseDiscontinuity";
    case FailureReason::TooFewFeatures: return "TooFewFeatures";
    case FailureReason::PlaneJump: return "PlaneJump";
    case FailureReason::TooFewTriangulated: return "TooFewTriangulated";
    case FailureReason::PlaneQualityFailed: return "PlaneQualityFailed";
  }
  return "Unknown";
}

std::optional<FailureReason> failure_reason_from_string(const std::string& s) {
  for (auto r : {FailureReason::PoseDiscontinuity, FailureReason::TooFewFeatures,
                 FailureReason::PlaneJump, FailureReason::TooFewTriangulated,
                 FailureReason::PlaneQualityFailed}) {
    if (s == to_string(r)) return r;
  }
  return std::nullopt;
}

std::optional<FailureReason> detect_failure(const StepDiagnostics& step,
                                            const FailureConfig& config) {
  if (!step.pose_available || step.rotation_jump > config.max_rotation_jump ||
      step.translation_jump > config.max_translation_jump) {
    return FailureReason::PoseDiscontinuity;
  }
  if (step.ground_features < config.min_features) return FailureReason::TooFewFeatures;
  if (step.normal_change > config.max_normal_change ||
      step.height_change > config.max_height_change) {
    return FailureReason::PlaneJump;
  }
  if (step.triangulated < config.min_triangulated) return FailureReason::TooFewTriangulated;
  if (!step.plane_quality_ok) return FailureReason::PlaneQualityFailed;
  return std::nullopt;
}

}  // namespace gcalib
