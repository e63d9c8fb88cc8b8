#pragma once

// Data-parallel inner loops of the window solver. Every kernel has a plain serial reference
// (namespace serial) and an OpenMP version (namespace omp). The OpenMP versions reduce in a
// fixed block order, so their results do not depend on the thread count.

#include "gcalib/geom.hpp"
#include "gcalib/odometry.hpp"

#include <Eigen/Core>

#include <span>
#include <vector>

namespace gcalib::kernels {

/// Ground matches of one keyframe pair, pre-converted for the solver.
struct PairFeatures {
  std::vector<Vec3> rays;      // K^-1 p_k (z = 1)
  std::vector<Vec2> observed;  // p_{k+1}, pixels
};

/// Read-only view of a window linearisation point.
struct HomographyProblem {
  CameraIntrinsics intrinsics;
  std::span<const Mat3> rotations;     // per pair, point map k -> k+1
  std::span<const Vec3> translations;  // per pair
  std::span<const PairFeatures> features;
  Vec3 normal = Vec3::UnitZ();
  Eigen::Matrix<double, 3, 2> normal_basis = Eigen::Matrix<double, 3, 2>::Zero();
  double height = 1.0;
  double sigma_px = 1.0;
  double huber_delta_px = 1.345;
};

/// Gauss-Newton normal equations of the robustified transfer residuals over the layout
/// [pair 0 (rot 3, trans 3), ..., pair N-1, normal tangent 2, height 1].
struct NormalEquations {
  Eigen::MatrixXd hessian;   // J^T W J
  Eigen::VectorXd gradient;  // J^T W r
  double cost = 0.0;         // sum of Huber-robustified whitened squared residuals
  int invalid = 0;           // residuals whose transferred point is at infinity
};

/// Huber loss of a whitened squared residual s and its IRLS weight.
double huber_cost(double s, double delta);
double huber_weight(double s, double delta);

/// Transferred pixel and its derivative w.r.t. [rot 3, trans 3, normal tangent 2, height 1].
/// Returns false when the transferred point is at infinity.
bool transfer_with_jacobian(const HomographyProblem& problem, std::size_t pair, const Vec3& ray,
                            Vec2* pixel, Eigen::Matrix<double, 2, 9>* jacobian);

namespace serial {
NormalEquations assemble(const HomographyProblem& problem);
double cost(const HomographyProblem& problem);
/// Residual norms ||p_{k+1} - transfer(p_k)|| (pixels) for one pair.
std::vector<double> residual_norms(const HomographyProblem& problem, std::size_t pair);
std::vector<PixelPoint> predict_batch(std::span<const PixelPoint> points,
                                      const RelativeMotion& motion, const Vec3& normal,
                                      double height, const CameraIntrinsics& intrinsics);
}  // namespace serial

namespace omp {
NormalEquations assemble(const HomographyProblem& problem);
double cost(const HomographyProblem& problem);
std::vector<double> residual_norms(const HomographyProblem& problem, std::size_t pair);
/// Points whose prediction fails get NaN coordinates.
std::vector<PixelPoint> predict_batch(std::span<const PixelPoint> points,
                                      const RelativeMotion& motion, const Vec3& normal,
                                      double height, const CameraIntrinsics& intrinsics);
}  // namespace omp

/// Number of OpenMP threads available (1 without OpenMP).
int max_threads();

}  // namespace gcalib::kernels
