#include "gcalib/kernels.hpp"

#include "gcalib/error.hpp"
#include "gcalib/ground.hpp"

#include <cmath>
#include <limits>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace gcalib::kernels {

namespace {

using Mat29 = Eigen::Matrix<double, 2, 9>;

constexpr int kPairDim = 6;
constexpr int kSharedDim = 3;

Eigen::Index shared_offset(const HomographyProblem& p) {
  return static_cast<Eigen::Index>(p.rotations.size()) * kPairDim;
}

Eigen::Index problem_dim(const HomographyProblem& p) { return shared_offset(p) + kSharedDim; }

/// Whitened residual, its Jacobian and the robust weight of one feature.
struct Term {
  Eigen::Vector2d r;
  Mat29 J;
  double s = 0.0;
  bool valid = false;
};

Term evaluate_term(const HomographyProblem& p, std::size_t pair, std::size_t j) {
  Term t;
  const auto& f = p.features[pair];
  Vec2 pix;
  if (!transfer_with_jacobian(p, pair, f.rays[j], &pix, &t.J)) return t;
  const double inv_sigma = 1.0 / p.sigma_px;
  t.r = (f.observed[j] - pix) * inv_sigma;
  t.J *= -inv_sigma;
  t.s = t.r.squaredNorm();
  t.valid = true;
  return t;
}

/// Contribution of one pair to the normal equations.
struct PairAccumulator {
  Eigen::Matrix<double, 6, 6> H_pp = Eigen::Matrix<double, 6, 6>::Zero();
  Eigen::Matrix<double, 6, 3> H_ps = Eigen::Matrix<double, 6, 3>::Zero();
  Eigen::Matrix<double, 3, 3> H_ss = Eigen::Matrix<double, 3, 3>::Zero();
  Eigen::Matrix<double, 6, 1> g_p = Eigen::Matrix<double, 6, 1>::Zero();
  Eigen::Matrix<double, 3, 1> g_s = Eigen::Matrix<double, 3, 1>::Zero();
  double cost = 0.0;
  int invalid = 0;
};

PairAccumulator accumulate_pair(const HomographyProblem& p, std::size_t pair) {
  PairAccumulator acc;
  const double delta = p.huber_delta_px / p.sigma_px;
  const auto n = p.features[pair].rays.size();
  for (std::size_t j = 0; j < n; ++j) {
    const Term t = evaluate_term(p, pair, j);
    if (!t.valid) {
      ++acc.invalid;
      continue;
    }
    const double w = huber_weight(t.s, delta);
    acc.cost += huber_cost(t.s, delta);
    const auto Jp = t.J.leftCols<6>();
    const auto Js = t.J.rightCols<3>();
    acc.H_pp.noalias() += w * Jp.transpose() * Jp;
    acc.H_ps.noalias() += w * Jp.transpose() * Js;
    acc.H_ss.noalias() += w * Js.transpose() * Js;
    acc.g_p.noalias() += w * Jp.transpose() * t.r;
    acc.g_s.noalias() += w * Js.transpose() * t.r;
  }
  return acc;
}

double pair_cost(const HomographyProblem& p, std::size_t pair, int* invalid) {
  const double delta = p.huber_delta_px / p.sigma_px;
  double c = 0.0;
  const auto& f = p.features[pair];
  const double inv_sigma = 1.0 / p.sigma_px;
  for (std::size_t j = 0; j < f.rays.size(); ++j) {
    Vec2 pix;
    if (!transfer_with_jacobian(p, pair, f.rays[j], &pix, nullptr)) {
      ++*invalid;
      continue;
    }
    c += huber_cost(((f.observed[j] - pix) * inv_sigma).squaredNorm(), delta);
  }
  return c;
}

std::vector<double> pair_residual_norms(const HomographyProblem& p, std::size_t pair) {
  const auto& f = p.features[pair];
  std::vector<double> out(f.rays.size(), std::numeric_limits<double>::infinity());
  for (std::size_t j = 0; j < f.rays.size(); ++j) {
    Vec2 pix;
    if (transfer_with_jacobian(p, pair, f.rays[j], &pix, nullptr)) {
      out[j] = (f.observed[j] - pix).norm();
    }
  }
  return out;
}

PixelPoint predict_one(const PixelPoint& p, const RelativeMotion& motion, const Vec3& normal,
                       double height, const CameraIntrinsics& intrinsics) {
  try {
    return predict_feature(p, motion, normal, height, intrinsics);
  } catch (const Error&) {
    const double nan = std::numeric_limits<double>::quiet_NaN();
    return {nan, nan, p.track_id};
  }
}

}  // namespace

double huber_cost(double s, double delta) {
  if (s <= delta * delta) return s;
  return 2.0 * delta * std::sqrt(s) - delta * delta;
}

double huber_weight(double s, double delta) {
  if (s <= delta * delta) return 1.0;
  return delta / std::sqrt(s);
}

bool transfer_with_jacobian(const HomographyProblem& p, std::size_t pair, const Vec3& ray,
                            Vec2* pixel, Mat29* jacobian) {
  const Mat3& R = p.rotations[pair];
  const Vec3& t = p.translations[pair];
  const double s = p.normal.dot(ray) / p.height;
  const Vec3 Rr = R * ray;
  const Vec3 y = Rr - s * t;
  if (y.z() < 1e-12) return false;
  const auto& K = p.intrinsics;
  const double iz = 1.0 / y.z();
  *pixel = Vec2(K.fx * y.x() * iz + K.cx, K.fy * y.y() * iz + K.cy);
  if (jacobian != nullptr) {
    Eigen::Matrix<double, 2, 3> Jpi;
    Jpi << K.fx * iz, 0.0, -K.fx * y.x() * iz * iz, 0.0, K.fy * iz, -K.fy * y.y() * iz * iz;
    Eigen::Matrix<double, 3, 9> dy;
    dy.block<3, 3>(0, 0) = -skew(Rr);
    dy.block<3, 3>(0, 3) = -s * Mat3::Identity();
    dy.block<3, 2>(0, 6) = -(t * (ray.transpose() * p.normal_basis)) / p.height;
    dy.block<3, 1>(0, 8) = t * (s / p.height);
    *jacobian = Jpi * dy;
  }
  return true;
}

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

// ---------------------------------------------------------------------------

namespace serial {

NormalEquations assemble(const HomographyProblem& p) {
  const Eigen::Index dim = problem_dim(p);
  const Eigen::Index so = shared_offset(p);
  NormalEquations ne;
  ne.hessian = Eigen::MatrixXd::Zero(dim, dim);
  ne.gradient = Eigen::VectorXd::Zero(dim);
  const double delta = p.huber_delta_px / p.sigma_px;
  for (std::size_t k = 0; k < p.features.size(); ++k) {
    const Eigen::Index po = static_cast<Eigen::Index>(k) * kPairDim;
    for (std::size_t j = 0; j < p.features[k].rays.size(); ++j) {
      const Term t = evaluate_term(p, k, j);
      if (!t.valid) {
        ++ne.invalid;
        continue;
      }
      const double w = huber_weight(t.s, delta);
      ne.cost += huber_cost(t.s, delta);
      // Scatter the 9 local columns into the global layout.
      Eigen::Index idx[9];
      for (int c = 0; c < 6; ++c) idx[c] = po + c;
      for (int c = 0; c < 3; ++c) idx[6 + c] = so + c;
      for (int a = 0; a < 9; ++a) {
        ne.gradient(idx[a]) += w * t.J.col(a).dot(t.r);
        for (int b = 0; b < 9; ++b) ne.hessian(idx[a], idx[b]) += w * t.J.col(a).dot(t.J.col(b));
      }
    }
  }
  return ne;
}

double cost(const HomographyProblem& p) {
  double c = 0.0;
  int invalid = 0;
  for (std::size_t k = 0; k < p.features.size(); ++k) c += pair_cost(p, k, &invalid);
  return invalid > 0 ? std::numeric_limits<double>::infinity() : c;
}

std::vector<double> residual_norms(const HomographyProblem& p, std::size_t pair) {
  return pair_residual_norms(p, pair);
}

std::vector<PixelPoint> predict_batch(std::span<const PixelPoint> points,
                                      const RelativeMotion& motion, const Vec3& normal,
                                      double height, const CameraIntrinsics& intrinsics) {
  std::vector<PixelPoint> out;
  out.reserve(points.size());
  for (const auto& pt : points) out.push_back(predict_one(pt, motion, normal, height, intrinsics));
  return out;
}

}  // namespace serial

// ---------------------------------------------------------------------------

namespace omp {

NormalEquations assemble(const HomographyProblem& p) {
  const auto pairs = static_cast<long>(p.features.size());
  std::vector<PairAccumulator> acc(p.features.size());
#pragma omp parallel for schedule(static)
  for (long k = 0; k < pairs; ++k) acc[static_cast<std::size_t>(k)] = accumulate_pair(p, static_cast<std::size_t>(k));

  // Ordered merge: identical for any thread count.
  const Eigen::Index dim = problem_dim(p);
  const Eigen::Index so = shared_offset(p);
  NormalEquations ne;
  ne.hessian = Eigen::MatrixXd::Zero(dim, dim);
  ne.gradient = Eigen::VectorXd::Zero(dim);
  for (std::size_t k = 0; k < acc.size(); ++k) {
    const Eigen::Index po = static_cast<Eigen::Index>(k) * kPairDim;
    const auto& a = acc[k];
    ne.hessian.block<6, 6>(po, po) = a.H_pp;
    ne.hessian.block<6, 3>(po, so) = a.H_ps;
    ne.hessian.block<3, 6>(so, po) = a.H_ps.transpose();
    ne.hessian.block<3, 3>(so, so) += a.H_ss;
    ne.gradient.segment<6>(po) = a.g_p;
    ne.gradient.segment<3>(so) += a.g_s;
    ne.cost += a.cost;
    ne.invalid += a.invalid;
  }
  return ne;
}

double cost(const HomographyProblem& p) {
  const auto pairs = static_cast<long>(p.features.size());
  std::vector<double> costs(p.features.size(), 0.0);
  std::vector<int> invalid(p.features.size(), 0);
#pragma omp parallel for schedule(static)
  for (long k = 0; k < pairs; ++k) {
    const auto i = static_cast<std::size_t>(k);
    costs[i] = pair_cost(p, i, &invalid[i]);
  }
  double c = 0.0;
  for (std::size_t k = 0; k < costs.size(); ++k) {
    if (invalid[k] > 0) return std::numeric_limits<double>::infinity();
    c += costs[k];
  }
  return c;
}

std::vector<double> residual_norms(const HomographyProblem& p, std::size_t pair) {
  const auto& f = p.features[pair];
  const auto n = static_cast<long>(f.rays.size());
  std::vector<double> out(f.rays.size(), std::numeric_limits<double>::infinity());
#pragma omp parallel for schedule(static)
  for (long j = 0; j < n; ++j) {
    const auto i = static_cast<std::size_t>(j);
    Vec2 pix;
    if (transfer_with_jacobian(p, pair, f.rays[i], &pix, nullptr)) out[i] = (f.observed[i] - pix).norm();
  }
  return out;
}

std::vector<PixelPoint> predict_batch(std::span<const PixelPoint> points,
                                      const RelativeMotion& motion, const Vec3& normal,
                                      double height, const CameraIntrinsics& intrinsics) {
  std::vector<PixelPoint> out(points.size());
  const auto n = static_cast<long>(points.size());
#pragma omp parallel for schedule(static)
  for (long j = 0; j < n; ++j) {
    const auto i = static_cast<std::size_t>(j);
    out[i] = predict_one(points[i], motion, normal, height, intrinsics);
  }
  return out;
}

}  // namespace omp

}  // namespace gcalib::kernels
