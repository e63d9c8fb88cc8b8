#include "gcalib/ground.hpp"

#include "gcalib/error.hpp"

#include <Eigen/SVD>

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <tuple>

namespace gcalib {

namespace {

constexpr double kBranchZero = 1e-10;

double triangle_area(const PixelPoint& a, const PixelPoint& b, const PixelPoint& c) {
  return 0.5 * std::abs((b.u - a.u) * (c.v - a.v) - (c.u - a.u) * (b.v - a.v));
}

Mat3 hartley_normalization(std::span<const Vec2> pts) {
  Vec2 c = Vec2::Zero();
  for (const auto& p : pts) c += p;
  c /= static_cast<double>(pts.size());
  double mean_dist = 0.0;
  for (const auto& p : pts) mean_dist += (p - c).norm();
  mean_dist /= static_cast<double>(pts.size());
  const double s = mean_dist > 0.0 ? std::sqrt(2.0) / mean_dist : 1.0;
  Mat3 T;
  T << s, 0.0, -s * c.x(), 0.0, s, -s * c.y(), 0.0, 0.0, 1.0;
  return T;
}

/// Signed Sampson residual in pixels.
double sampson_residual(const Mat3& F, const PixelPoint& a, const PixelPoint& b) {
  const Vec3 x1 = a.homogeneous();
  const Vec3 x2 = b.homogeneous();
  const Vec3 Fx1 = F * x1;
  const Vec3 Ftx2 = F.transpose() * x2;
  const double denom = Fx1.x() * Fx1.x() + Fx1.y() * Fx1.y() + Ftx2.x() * Ftx2.x() +
                       Ftx2.y() * Ftx2.y();
  if (denom <= 0.0) return 0.0;
  return x2.dot(Fx1) / std::sqrt(denom);
}

int count_cheirality(std::span<const FeatureMatch> matches, const Mat3& R, const Vec3& t,
                     const CameraIntrinsics& intrinsics) {
  int positive = 0;
  for (const auto& m : matches) {
    try {
      triangulate(m.p_k, m.p_k1, {R, t}, intrinsics);
      ++positive;
    } catch (const Error&) {
    }
  }
  return positive;
}

struct PoseHypothesis {
  Mat3 R;
  Vec3 t_hat;
};

double truncated_cost(std::span<const FeatureMatch> matches, const Mat3& F, double thr2) {
  double cost = 0.0;
  for (const auto& m : matches) cost += std::min(sampson_distance(F, m.p_k, m.p_k1), thr2);
  return cost;
}

std::vector<FeatureMatch> sampson_inliers(std::span<const FeatureMatch> matches, const Mat3& F,
                                          double thr2) {
  std::vector<FeatureMatch> out;
  for (const auto& m : matches) {
    if (sampson_distance(F, m.p_k, m.p_k1) <= thr2) out.push_back(m);
  }
  return out;
}

/// Levenberg-Marquardt on the Sampson residuals over 5 dof (rotation + unit translation).
PoseHypothesis refine_pose(std::span<const FeatureMatch> matches, PoseHypothesis start,
                           const CameraIntrinsics& intrinsics) {
  if (matches.size() < 5) return start;
  const auto residuals = [&](const PoseHypothesis& h) {
    const Mat3 F = fundamental_from_motion(h.R, h.t_hat, intrinsics);
    Eigen::VectorXd r(static_cast<Eigen::Index>(matches.size()));
    for (std::size_t i = 0; i < matches.size(); ++i) {
      r(static_cast<Eigen::Index>(i)) = sampson_residual(F, matches[i].p_k, matches[i].p_k1);
    }
    return r;
  };
  const auto retract = [](const PoseHypothesis& h, const Eigen::Matrix<double, 5, 1>& d) {
    const auto B = tangent_basis(h.t_hat);
    return PoseHypothesis{exp_so3(d.head<3>()) * h.R, (h.t_hat + B * d.tail<2>()).normalized()};
  };

  PoseHypothesis cur = start;
  Eigen::VectorXd r = residuals(cur);
  double cost = r.squaredNorm();
  double lambda = 1e-3;
  for (int iter = 0; iter < 50; ++iter) {
    Eigen::MatrixXd J(r.size(), 5);
    constexpr double h = 1e-7;
    for (int c = 0; c < 5; ++c) {
      Eigen::Matrix<double, 5, 1> d = Eigen::Matrix<double, 5, 1>::Zero();
      d(c) = h;
      const Eigen::VectorXd rp = residuals(retract(cur, d));
      d(c) = -h;
      const Eigen::VectorXd rm = residuals(retract(cur, d));
      J.col(c) = (rp - rm) / (2.0 * h);
    }
    const Eigen::Matrix<double, 5, 5> A = J.transpose() * J;
    const Eigen::Matrix<double, 5, 1> g = J.transpose() * r;
    if (g.norm() < 1e-14) break;
    bool improved = false;
    for (int attempt = 0; attempt < 10 && !improved; ++attempt) {
      Eigen::Matrix<double, 5, 5> Ad = A;
      Ad.diagonal() += lambda * (A.diagonal().array() + 1e-12).matrix();
      const Eigen::Matrix<double, 5, 1> step = Ad.ldlt().solve(-g);
      const PoseHypothesis cand = retract(cur, step);
      const Eigen::VectorXd rc = residuals(cand);
      const double cc = rc.squaredNorm();
      if (cc < cost) {
        improved = true;
        const double rel = (cost - cc) / std::max(cost, 1e-300);
        cur = cand;
        r = rc;
        cost = cc;
        lambda = std::max(lambda * 0.1, 1e-12);
        if (rel < 1e-12 || step.norm() < 1e-14) return cur;
      } else {
        lambda *= 10.0;
      }
    }
    if (!improved) break;
  }
  return cur;
}

}  // namespace

// ---------------------------------------------------------------------------

HorizonLine horizon_line(const Mat3& r, const CameraIntrinsics& intrinsics) {
  const double r31 = r(2, 0);
  const double r32 = r(2, 1);
  const bool r31_zero = std::abs(r31) < kBranchZero;
  const bool r32_zero = std::abs(r32) < kBranchZero;
  if (r31_zero && r32_zero) {
    throw Error(ErrorCode::CameraFacingSky, "principal axis does not observe the road");
  }
  Vec3 P1;
  Vec3 P2;
  if (!r31_zero && !r32_zero) {
    P1 << r(0, 0) / r31, r(1, 0) / r31, 1.0;
    P2 << r(0, 1) / r32, r(1, 1) / r32, 1.0;
  } else if (r31_zero) {
    P1 << r(0, 1) / r32, r(1, 1) / r32, 1.0;
    P2 << (r(0, 0) + r(0, 1)) / r32, (r(1, 0) + r(1, 1)) / r32, 1.0;
  } else {
    P1 << r(0, 0) / r31, r(1, 0) / r31, 1.0;
    P2 << (r(0, 0) + r(0, 1)) / r31, (r(1, 0) + r(1, 1)) / r31, 1.0;
  }
  const Mat3 K = intrinsics.K();
  Vec3 l = (K * P1).cross(K * P2);
  l /= l.head<2>().norm();
  // Ground-side orientation: for the up normal n, ground rays d satisfy n.d < 0, and
  // l ~ s K^-T n gives l.p = s n.d, so s = l^T K n must be negative.
  const Vec3 n_up = r.col(2);
  if (l.dot(K * n_up) > 0.0) l = -l;
  return {l};
}

bool is_below_horizon(const HorizonLine& line, const PixelPoint& pixel) {
  return line.evaluate(pixel) > 0.0;
}

PixelPoint predict_feature(const PixelPoint& p_k, const RelativeMotion& motion,
                           const Vec3& normal_hat, double height,
                           const CameraIntrinsics& intrinsics) {
  const Vec3 ray = backproject(p_k, intrinsics);
  const double dn = ray.dot(normal_hat);
  if (std::abs(dn) <= 1e-9) {
    throw Error(ErrorCode::RayParallelToGround, "ray does not intersect the ground plane");
  }
  const Vec3 P = (height / std::abs(dn)) * ray;
  const Vec3 P1 = motion.rotation() * P + motion.translation();
  if (P1.z() <= 1e-12) {
    throw Error(ErrorCode::PointBehindCamera, "predicted point is behind camera k+1");
  }
  PixelPoint out = project(P1, intrinsics);
  out.track_id = p_k.track_id;
  return out;
}

std::vector<FeatureMatch> grid_select(std::span<const FeatureMatch> matches, int grid_cols,
                                      int grid_rows, int per_cell,
                                      const CameraIntrinsics& intrinsics) {
  grid_cols = std::max(grid_cols, 1);
  grid_rows = std::max(grid_rows, 1);
  const auto cell_of = [&](const PixelPoint& p) {
    const int c = std::clamp(static_cast<int>(std::floor(p.u * grid_cols / intrinsics.width)), 0,
                             grid_cols - 1);
    const int r = std::clamp(static_cast<int>(std::floor(p.v * grid_rows / intrinsics.height)), 0,
                             grid_rows - 1);
    return r * grid_cols + c;
  };
  std::vector<std::vector<std::size_t>> cells(static_cast<std::size_t>(grid_cols * grid_rows));
  for (std::size_t i = 0; i < matches.size(); ++i) {
    cells[static_cast<std::size_t>(cell_of(matches[i].p_k))].push_back(i);
  }
  std::vector<char> keep(matches.size(), 0);
  for (auto& cell : cells) {
    std::sort(cell.begin(), cell.end(), [&](std::size_t a, std::size_t b) {
      if (matches[a].score != matches[b].score) return matches[a].score > matches[b].score;
      return matches[a].track_id() < matches[b].track_id();
    });
    const auto n = std::min<std::size_t>(cell.size(), static_cast<std::size_t>(std::max(per_cell, 0)));
    for (std::size_t i = 0; i < n; ++i) keep[cell[i]] = 1;
  }
  std::vector<FeatureMatch> out;
  for (std::size_t i = 0; i < matches.size(); ++i) {
    if (keep[i]) out.push_back(matches[i]);
  }
  return out;
}

Mat3 fundamental_from_motion(const Mat3& R, const Vec3& t, const CameraIntrinsics& intrinsics) {
  const Mat3 Ki = intrinsics.K_inv();
  return Ki.transpose() * skew(t) * R * Ki;
}

double sampson_distance(const Mat3& F, const PixelPoint& p_k, const PixelPoint& p_k1) {
  const double r = sampson_residual(F, p_k, p_k1);
  return r * r;
}

Mat3 eight_point(std::span<const FeatureMatch> matches) {
  if (matches.size() < 8) {
    throw Error(ErrorCode::InsufficientMatches, "eight-point needs at least 8 matches");
  }
  std::vector<Vec2> a;
  std::vector<Vec2> b;
  for (const auto& m : matches) {
    a.push_back(m.p_k.vec());
    b.push_back(m.p_k1.vec());
  }
  const Mat3 T1 = hartley_normalization(a);
  const Mat3 T2 = hartley_normalization(b);
  Eigen::MatrixXd A(static_cast<Eigen::Index>(matches.size()), 9);
  for (std::size_t i = 0; i < matches.size(); ++i) {
    const Vec3 x1 = T1 * matches[i].p_k.homogeneous();
    const Vec3 x2 = T2 * matches[i].p_k1.homogeneous();
    A.row(static_cast<Eigen::Index>(i)) << x2.x() * x1.x(), x2.x() * x1.y(), x2.x(),
        x2.y() * x1.x(), x2.y() * x1.y(), x2.y(), x1.x(), x1.y(), 1.0;
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(A, Eigen::ComputeFullV);
  const Eigen::Matrix<double, 9, 1> f = svd.matrixV().col(8);
  Mat3 Fn;
  Fn << f(0), f(1), f(2), f(3), f(4), f(5), f(6), f(7), f(8);
  Eigen::JacobiSVD<Mat3> svd3(Fn, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Vec3 s = svd3.singularValues();
  s(2) = 0.0;
  Fn = svd3.matrixU() * s.asDiagonal() * svd3.matrixV().transpose();
  Mat3 F = T2.transpose() * Fn * T1;
  return F / F.norm();
}

std::vector<std::pair<Mat3, Vec3>> decompose_essential(const Mat3& E) {
  Eigen::JacobiSVD<Mat3> svd(E, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 U = svd.matrixU();
  Mat3 V = svd.matrixV();
  if (U.determinant() < 0.0) U = -U;
  if (V.determinant() < 0.0) V = -V;
  Mat3 W;
  W << 0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0;
  const Mat3 R1 = U * W * V.transpose();
  const Mat3 R2 = U * W.transpose() * V.transpose();
  const Vec3 t = U.col(2);
  return {{R1, t}, {R1, -t}, {R2, t}, {R2, -t}};
}

EpipolarResult epipolar_pose_check(std::span<const FeatureMatch> matches,
                                   const RelativeMotion& odometry_motion, const Vec3& normal_hat,
                                   const Thresholds& thresholds,
                                   const CameraIntrinsics& intrinsics,
                                   const EpipolarOptions& options) {
  if (matches.size() < 8) {
    throw Error(ErrorCode::InsufficientMatches, "epipolar check needs at least 8 matches");
  }
  const double baseline = odometry_motion.translation().norm();
  if (baseline < 1e-9) {
    throw Error(ErrorCode::DecompositionFailed, "odometry reports no baseline");
  }
  const double thr2 = options.inlier_threshold_px * options.inlier_threshold_px;
  const Mat3 R_odo = odometry_motion.rotation();
  const Vec3 t_odo_hat = odometry_motion.translation() / baseline;
  const Mat3 K = intrinsics.K();

  const auto score = [&](const PoseHypothesis& h) {
    return truncated_cost(matches, fundamental_from_motion(h.R, h.t_hat, intrinsics), thr2);
  };

  PoseHypothesis best{R_odo, t_odo_hat};
  double best_cost = score(best);

  std::mt19937_64 rng(options.seed);
  std::vector<std::size_t> idx(matches.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::vector<FeatureMatch> sample(8);
  for (int it = 0; it < options.ransac_iterations; ++it) {
    for (std::size_t s = 0; s < 8; ++s) {
      std::uniform_int_distribution<std::size_t> pick(s, idx.size() - 1);
      std::swap(idx[s], idx[pick(rng)]);
      sample[s] = matches[idx[s]];
    }
    const Mat3 F = eight_point(sample);
    if (!F.allFinite()) continue;
    const Mat3 E = K.transpose() * F * K;
    PoseHypothesis cand{Mat3::Identity(), Vec3::UnitZ()};
    int best_pos = -1;
    for (const auto& [R, t] : decompose_essential(E)) {
      const int pos = count_cheirality(sample, R, t, intrinsics);
      if (pos > best_pos) {
        best_pos = pos;
        cand = {R, t};
      }
    }
    const double c = score(cand);
    if (c < best_cost) {
      best_cost = c;
      best = cand;
    }
  }

  // Refine both the consensus winner and the odometry hypothesis; planar scenes admit a
  // second Sampson minimum, so near-ties go to the solution closer to odometry.
  PoseHypothesis candidates[2] = {best, {R_odo, t_odo_hat}};
  double costs[2];
  for (auto& c : candidates) {
    const auto inl = sampson_inliers(matches, fundamental_from_motion(c.R, c.t_hat, intrinsics),
                                     thr2);
    c = refine_pose(inl, c, intrinsics);
    const auto inl2 = sampson_inliers(matches, fundamental_from_motion(c.R, c.t_hat, intrinsics),
                                      thr2);
    c = refine_pose(inl2, c, intrinsics);
  }
  for (int i = 0; i < 2; ++i) costs[i] = score(candidates[i]);
  int pick = costs[0] < costs[1] ? 0 : 1;
  if (std::abs(costs[0] - costs[1]) <= 0.01 * std::max(costs[0], costs[1])) {
    pick = rotation_angle_between(candidates[0].R, R_odo) <
                   rotation_angle_between(candidates[1].R, R_odo)
               ? 0
               : 1;
  }
  PoseHypothesis sol = candidates[pick];

  Mat3 F = fundamental_from_motion(sol.R, sol.t_hat, intrinsics);
  auto inliers = sampson_inliers(matches, F, thr2);
  const int pos_plus = count_cheirality(inliers, sol.R, sol.t_hat, intrinsics);
  const int pos_minus = count_cheirality(inliers, sol.R, -sol.t_hat, intrinsics);
  if (pos_minus > pos_plus) sol.t_hat = -sol.t_hat;
  if (2 * std::max(pos_plus, pos_minus) <= static_cast<int>(inliers.size()) || inliers.size() < 8) {
    throw Error(ErrorCode::DecompositionFailed, "no cheirality-consistent pose");
  }

  EpipolarResult res;
  res.F = F / F.norm();
  res.inliers = std::move(inliers);
  res.pose = RelativeMotion(sol.R, sol.t_hat * baseline, MotionFrame::Camera);
  res.rotation_deviation = euler_zyx(sol.R * R_odo.transpose());
  const Vec3 angles = euler_zyx(sol.R);
  const bool rotation_ok = (angles.cwiseAbs().array() < thresholds.dtheta_max).all();
  if (thresholds.gate_mode == GateMode::Literal) {
    res.alignment = std::abs(sol.t_hat.dot(normal_hat));
  } else {
    const Vec3 a = sol.t_hat - sol.t_hat.dot(normal_hat) * normal_hat;
    const Vec3 b = t_odo_hat - t_odo_hat.dot(normal_hat) * normal_hat;
    res.alignment = (a.norm() > 1e-12 && b.norm() > 1e-12) ? a.normalized().dot(b.normalized())
                                                           : 0.0;
  }
  res.accepted = rotation_ok && res.alignment >= thresholds.eps_g;
  return res;
}

Vec3 lemma3_normal(std::span<const FeatureMatch, 3> triple, const RelativeMotion& pose,
                   const Vec3& reference_normal, const CameraIntrinsics& intrinsics) {
  if (triangle_area(triple[0].p_k, triple[1].p_k, triple[2].p_k) <= 1e-6) {
    throw Error(ErrorCode::CollinearTriple, "triple is collinear in image k");
  }
  Vec3 P[3];
  for (int i = 0; i < 3; ++i) {
    P[i] = triangulate(triple[i].p_k, triple[i].p_k1, pose.as_transform(), intrinsics).position;
  }
  Mat3 A;
  A.row(0) = (P[1] - P[0]).transpose();
  A.row(1) = (P[2] - P[0]).transpose();
  A.row(2) = (P[2] - P[1]).transpose();
  Eigen::JacobiSVD<Mat3> svd(A, Eigen::ComputeFullV);
  if (svd.singularValues()(1) < 1e-10) {
    throw Error(ErrorCode::RankDeficient, "triangulated triple does not span a plane");
  }
  Vec3 n = svd.matrixV().col(2).normalized();
  if (n.dot(reference_normal) < 0.0) n = -n;
  return n;
}

Mat3 lemma3_printed_rows(std::span<const FeatureMatch, 3> t, const Mat3& F) {
  const auto row = [&](int p, int r, int q) -> Vec3 {
    const Vec3 pk_p = t[p].p_k.homogeneous();
    const Vec3 pk_q = t[q].p_k.homogeneous();
    const Vec3 p1_p = t[p].p_k1.homogeneous();
    const Vec3 p1_r = t[r].p_k1.homogeneous();
    const Vec3 p1_q = t[q].p_k1.homogeneous();
    return pk_p.cross(pk_q).cross(F * skew(p1_p.cross(p1_r)) * p1_p.cross(p1_q));
  };
  Mat3 M;
  M.row(0) = row(0, 1, 2).transpose();
  M.row(1) = row(1, 0, 2).transpose();
  M.row(2) = row(0, 2, 1).transpose();
  return M;
}

int label_ground(const Vec3& n_g, const Vec3& n_hat, double eps_l) {
  return n_g.cross(n_hat).norm() <= eps_l ? 1 : 0;
}

VerificationResult verify_ground_set(std::span<const FeatureMatch> matches,
                                     const RelativeMotion& pose, const Vec3& normal_hat,
                                     double eps_l, std::uint64_t rng_seed,
                                     const CameraIntrinsics& intrinsics,
                                     const VerificationOptions& options) {
  if (matches.size() < 3) {
    throw Error(ErrorCode::NoGroundSeed, "fewer than three candidate matches");
  }
  const std::size_t n = matches.size();
  std::vector<GroundLabel> label(n, GroundLabel::Unverified);

  const auto triple_normal_label = [&](std::size_t a, std::size_t b, std::size_t c) {
    const std::array<FeatureMatch, 3> tri{matches[a], matches[b], matches[c]};
    try {
      const Vec3 ng = lemma3_normal(std::span<const FeatureMatch, 3>(tri), pose, normal_hat,
                                    intrinsics);
      return label_ground(ng, normal_hat, eps_l) == 1;
    } catch (const Error&) {
      return false;
    }
  };

  // Seed phase.
  std::mt19937_64 rng(rng_seed);
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  std::array<std::size_t, 3> seed{};
  bool seeded = false;
  for (int attempt = 0; attempt < options.max_seed_attempts && !seeded; ++attempt) {
    std::size_t a = pick(rng);
    std::size_t b = pick(rng);
    std::size_t c = pick(rng);
    if (a == b || b == c || a == c) continue;
    const double area = triangle_area(matches[a].p_k, matches[b].p_k, matches[c].p_k);
    const double min_area = n == 3 ? 1e-6 : options.min_seed_area_px2;
    if (area < min_area) continue;
    if (triple_normal_label(a, b, c)) {
      seed = {a, b, c};
      seeded = true;
    }
  }
  if (!seeded && n == 3 && triple_normal_label(0, 1, 2)) {
    seed = {0, 1, 2};
    seeded = true;
  }
  if (!seeded) {
    throw Error(ErrorCode::NoGroundSeed, "no ground triple found within the attempt budget");
  }
  std::vector<std::size_t> anchors(seed.begin(), seed.end());
  for (auto s : seed) label[s] = GroundLabel::Ground;

  // Sequential phase. Anchors are ranked by distance between triangulated points: image
  // neighbours near the horizon can be metres apart, which flattens the tilt a raised point causes.
  std::vector<Vec3> X(n, Vec3::Zero());
  std::vector<bool> has_x(n, false);
  for (std::size_t j = 0; j < n; ++j) {
    try {
      X[j] = triangulate(matches[j].p_k, matches[j].p_k1, pose.as_transform(), intrinsics).position;
      has_x[j] = X[j].z() > 0.0;
    } catch (const Error&) {
    }
  }
  const double pair_min_area = options.min_pair_area_px2;
  std::vector<std::size_t> pending;
  for (std::size_t j = 0; j < n; ++j) {
    if (label[j] != GroundLabel::Unverified) continue;
    if (has_x[j]) {
      pending.push_back(j);
    } else {
      label[j] = GroundLabel::NonGround;
    }
  }
  // Grow outwards from the seed: the candidate closest to any anchor is decided next.
  std::vector<double> gap(n, std::numeric_limits<double>::infinity());
  const auto update_gap = [&](std::size_t a) {
    for (auto j : pending) gap[j] = std::min(gap[j], (X[a] - X[j]).squaredNorm());
  };
  for (auto a : anchors) update_gap(a);
  std::vector<std::pair<double, std::size_t>> by_dist;
  std::vector<std::tuple<double, std::size_t, std::size_t>> pairs;
  while (!pending.empty()) {
    const auto it = std::min_element(pending.begin(), pending.end(),
                                     [&](std::size_t a, std::size_t b) { return gap[a] < gap[b]; });
    const std::size_t j = *it;
    pending.erase(it);
    const PixelPoint& pj = matches[j].p_k;
    by_dist.clear();
    for (auto a : anchors) by_dist.emplace_back((X[a] - X[j]).squaredNorm(), a);
    std::sort(by_dist.begin(), by_dist.end());
    // Candidate pairs come from the nearest anchors. The tilt a raised point induces scales with
    // its height over its distance to the anchor line, so the tightest qualifying pairs vote.
    const std::size_t pool = std::min<std::size_t>(by_dist.size(), options.pair_pool);
    pairs.clear();
    for (std::size_t k = 1; k < pool; ++k) {
      for (std::size_t i = 0; i < k; ++i) {
        const auto a = by_dist[i].second;
        const auto b = by_dist[k].second;
        const Vec3 ab = X[b] - X[a];
        const double len = ab.norm();
        if (len < options.min_pair_spread_m) continue;
        const double offset = ab.cross(X[j] - X[a]).norm() / len;
        if (offset < options.min_pair_spread_m) continue;
        if (triangle_area(matches[a].p_k, matches[b].p_k, pj) < pair_min_area) continue;
        pairs.push_back({offset, a, b});
      }
    }
    std::sort(pairs.begin(), pairs.end());
    int votes = 0;
    int evaluated = 0;
    for (const auto& [offset, a, b] : pairs) {
      if (evaluated >= options.vote_pairs) break;
      ++evaluated;
      votes += triple_normal_label(a, b, j) ? 1 : 0;
    }
    const bool is_ground = 2 * votes > evaluated;
    label[j] = is_ground ? GroundLabel::Ground : GroundLabel::NonGround;
    if (is_ground) {
      anchors.push_back(j);
      update_gap(j);
    }
  }

  VerificationResult out;
  for (std::size_t j = 0; j < n; ++j) {
    FeatureMatch m = matches[j];
    if (label[j] == GroundLabel::Ground) {
      try {
        const auto P = triangulate(m.p_k, m.p_k1, pose.as_transform(), intrinsics);
        if (P.reprojection_error <= options.max_reprojection_px) {
          out.fine.push_back(m);
          out.fine.back().label = GroundLabel::Ground;
          out.points.push_back(P);
        } else {
          label[j] = GroundLabel::NonGround;
        }
      } catch (const Error&) {
        label[j] = GroundLabel::NonGround;
      }
    }
    m.label = label[j];
    out.labelled.push_back(m);
  }
  return out;
}

bool filter_plane_estimate(const GroundPlaneEstimate& est, const Vec3& pose_t,
                           double ref_height, const Thresholds& thresholds) {
  const double tn = pose_t.norm();
  if (tn < 1e-12) return false;
  const Vec3 t_hat = pose_t / tn;
  const double gate = thresholds.gate_mode == GateMode::Literal
                          ? std::abs(est.normal.dot(t_hat))
                          : est.normal.cross(t_hat).norm();
  return gate >= thresholds.eps_s && std::abs(est.height - ref_height) <= thresholds.eps_h;
}

}  // namespace gcalib
