#include "gcalib/odometry.hpp"

#include "gcalib/error.hpp"

#include <algorithm>
#include <cmath>

namespace gcalib {

double slip_angle(double steering_angle, const VehicleParams& params) {
  return std::atan(params.cg_to_rear * std::tan(steering_angle) / params.wheelbase);
}

double yaw_rate(const WheelSample& sample, const VehicleParams& params) {
  return sample.speed * std::sin(slip_angle(sample.steering_angle, params)) / params.cg_to_rear;
}

VehicleState integrate_step(const VehicleState& state, const WheelSample& sample,
                            const VehicleParams& params, double dt, double acceleration) {
  const double beta = slip_angle(sample.steering_angle, params);
  const double omega_z = sample.speed * std::sin(beta) / params.cg_to_rear;
  const double course = state.heading_angle + beta;
  const Vec3 direction(std::cos(course), std::sin(course), 0.0);
  const Vec3 v = sample.speed * direction;
  const Vec3 a = acceleration * direction;

  VehicleState next;
  next.timestamp = state.timestamp + dt;
  next.position = state.position + v * dt + a * (0.5 * dt * dt);
  next.velocity = v + a * dt;
  next.heading_rotation = state.heading_rotation * exp_so3(Vec3(0.0, 0.0, omega_z * dt));
  next.heading_angle = state.heading_angle + omega_z * dt;
  return next;
}

std::vector<double> finite_difference_acceleration(std::span<const WheelSample> samples) {
  std::vector<double> acc(samples.size(), 0.0);
  for (std::size_t i = 0; i + 1 < samples.size(); ++i) {
    const double dt = samples[i + 1].timestamp - samples[i].timestamp;
    acc[i] = dt > 0.0 ? (samples[i + 1].speed - samples[i].speed) / dt : 0.0;
  }
  return acc;
}

std::vector<VehicleState> integrate_stream(std::span<const WheelSample> samples,
                                           const VehicleParams& params) {
  std::vector<VehicleState> states;
  if (samples.empty()) return states;
  const auto acc = finite_difference_acceleration(samples);
  states.reserve(samples.size());
  VehicleState s;
  s.timestamp = samples.front().timestamp;
  states.push_back(s);
  for (std::size_t i = 0; i + 1 < samples.size(); ++i) {
    const double dt = samples[i + 1].timestamp - samples[i].timestamp;
    VehicleState next = integrate_step(states.back(), samples[i], params, dt, acc[i]);
    next.timestamp = samples[i + 1].timestamp;
    states.push_back(next);
  }
  return states;
}

VehicleState state_at(std::span<const WheelSample> samples, std::span<const VehicleState> states,
                      std::span<const double> accelerations, const VehicleParams& params,
                      double t) {
  if (samples.empty() || samples.size() != states.size()) {
    throw Error(ErrorCode::InvalidConfig, "state_at needs one state per wheel sample");
  }
  auto it = std::upper_bound(samples.begin(), samples.end(), t,
                             [](double value, const WheelSample& s) { return value < s.timestamp; });
  if (it == samples.begin()) return states.front();
  const auto i = static_cast<std::size_t>(std::distance(samples.begin(), it) - 1);
  const double dt = t - samples[i].timestamp;
  if (dt == 0.0) return states[i];
  const double a = i < accelerations.size() ? accelerations[i] : 0.0;
  VehicleState s = integrate_step(states[i], samples[i], params, dt, a);
  s.timestamp = t;
  return s;
}

RelativeMotion relative_vehicle_motion(const VehicleState& from, const VehicleState& to) {
  const Mat3 dR = to.heading_rotation.transpose() * from.heading_rotation;
  const Vec3 displacement = from.heading_rotation.transpose() * (to.position - from.position);
  return {dR, -(dR * displacement), MotionFrame::VehicleCog};
}

RelativeMotion vehicle_to_camera_motion(const RelativeMotion& motion,
                                        const RigidTransform& camera_from_cog) {
  if (motion.frame() != MotionFrame::VehicleCog) {
    throw Error(ErrorCode::InvalidConfig, "vehicle_to_camera_motion expects a CoG-frame motion");
  }
  const RigidTransform conj =
      compose(camera_from_cog, compose(motion.as_transform(), invert(camera_from_cog)));
  return {conj.rotation, conj.translation, MotionFrame::Camera};
}

double driving_fraction(std::span<const WheelSample> samples, double threshold) {
  if (samples.size() < 2) return 0.0;
  double moving = 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i + 1 < samples.size(); ++i) {
    const double dt = samples[i + 1].timestamp - samples[i].timestamp;
    total += dt;
    if (std::abs(samples[i].speed) > threshold) moving += dt;
  }
  return total > 0.0 ? moving / total : 0.0;
}

}  // namespace gcalib
