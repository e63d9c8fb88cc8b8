#include "gcalib/metrics.hpp"

#include "gcalib/error.hpp"

#include <cmath>

namespace gcalib {

namespace {

double wrap_angle(double a) { return std::atan2(std::sin(a), std::cos(a)); }

double point_line_distance_sq(const Vec3& p, const Vec3& line) {
  const double n2 = line.x() * line.x() + line.y() * line.y();
  if (n2 <= 0.0) return 0.0;
  const double d = line.dot(p);
  return d * d / n2;
}

}  // namespace

double metric_transfer_error(std::span<const FeatureMatch> matches, const Mat3& H) {
  if (matches.empty()) throw Error(ErrorCode::EmptySet, "transfer error of an empty set");
  double sum = 0.0;
  for (const auto& m : matches) sum += transfer_residual(H, m).norm();
  return sum / static_cast<double>(matches.size());
}

Mat3 cross_camera_fundamental(const RigidTransform& front_extrinsic,
                              const RigidTransform& second_extrinsic,
                              const CameraIntrinsics& front_intrinsics,
                              const CameraIntrinsics& second_intrinsics) {
  // second_from_front = (ground_from_second)^-1 * ground_from_front
  const RigidTransform q_from_f = compose(invert(second_extrinsic), front_extrinsic);
  return second_intrinsics.K_inv().transpose() * skew(q_from_f.translation) * q_from_f.rotation *
         front_intrinsics.K_inv();
}

double metric_residual_error(std::span<const CrossMatch> matches,
                             const RigidTransform& front_extrinsic,
                             const RigidTransform& second_extrinsic,
                             const CameraIntrinsics& front_intrinsics,
                             const std::optional<CameraIntrinsics>& second_intrinsics) {
  if (!second_intrinsics) throw Error(ErrorCode::NoSecondCamera, "no second camera");
  if (matches.empty()) throw Error(ErrorCode::EmptyMatches, "no cross-camera matches");
  const Mat3 F =
      cross_camera_fundamental(front_extrinsic, second_extrinsic, front_intrinsics, *second_intrinsics);
  double sum = 0.0;
  for (const auto& m : matches) {
    const Vec3 p = m.p.homogeneous();
    const Vec3 q = m.q.homogeneous();
    sum += point_line_distance_sq(q, F * p) + point_line_distance_sq(p, F.transpose() * q);
  }
  return sum / static_cast<double>(matches.size());
}

TruthComparison compare_to_truth(std::span<const ReportedXi> reports, const ScenarioTruth& truth) {
  TruthComparison out;
  if (reports.empty()) return out;
  constexpr double deg = 180.0 / M_PI;
  for (const auto& r : reports) {
    const Vec6 t = xi_from_extrinsic(apply_extrinsic_schedule(truth, r.timestamp));
    out.delta_roll_deg += std::abs(wrap_angle(r.xi(0) - t(0))) * deg;
    out.delta_pitch_deg += std::abs(wrap_angle(r.xi(1) - t(1))) * deg;
    out.delta_yaw_deg += std::abs(wrap_angle(r.xi(2) - t(2))) * deg;
    out.delta_height_cm += std::abs(r.xi(5) - t(5)) * 100.0;
  }
  const double n = static_cast<double>(reports.size());
  out.delta_roll_deg /= n;
  out.delta_pitch_deg /= n;
  out.delta_yaw_deg /= n;
  out.delta_height_cm /= n;
  out.events = static_cast<int>(reports.size());
  return out;
}

Histogram make_histogram(std::span<const double> values, double bin_width, int bins) {
  if (!(bin_width > 0.0) || bins < 1) throw Error(ErrorCode::InvalidConfig, "bad histogram shape");
  Histogram h;
  h.bin_width = bin_width;
  h.counts.assign(static_cast<std::size_t>(bins), 0);
  for (double v : values) {
    if (!std::isfinite(v)) continue;
    auto b = static_cast<long>(std::floor(std::max(v, 0.0) / bin_width));
    b = std::min<long>(b, bins - 1);
    ++h.counts[static_cast<std::size_t>(b)];
    ++h.total;
  }
  return h;
}

}  // namespace gcalib
