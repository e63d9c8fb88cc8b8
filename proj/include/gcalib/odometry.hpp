#pragma once

#include "gcalib/geom.hpp"

#include <span>
#include <vector>

namespace gcalib {

struct WheelSample {
  double timestamp = 0.0;       // s
  double speed = 0.0;           // m/s
  double steering_angle = 0.0;  // rad, front wheel

  friend bool operator==(const WheelSample&, const WheelSample&) = default;
};

struct VehicleParams {
  double wheelbase = 2.8;   // L
  double cg_to_rear = 1.4;  // L_r
  double cg_height = 0.6;   // height of the CoG frame above the road, m

  bool is_valid() const { return cg_to_rear > 0.0 && cg_to_rear < wheelbase && cg_height >= 0.0; }
  friend bool operator==(const VehicleParams&, const VehicleParams&) = default;
};

/// Planar vehicle state in the world frame W (coincides with the CoG frame at start).
struct VehicleState {
  double timestamp = 0.0;
  Vec3 position = Vec3::Zero();
  Vec3 velocity = Vec3::Zero();
  Mat3 heading_rotation = Mat3::Identity();
  double heading_angle = 0.0;

  RigidTransform pose() const { return {heading_rotation, position}; }
};

enum class MotionFrame { VehicleCog, Camera };

/// Point map between consecutive frames: x_{k+1} = rotation * x_k + translation.
class RelativeMotion {
 public:
  RelativeMotion(const Mat3& rotation, const Vec3& translation, MotionFrame frame)
      : rotation_(rotation), translation_(translation), frame_(frame) {}

  static RelativeMotion identity(MotionFrame frame) {
    return {Mat3::Identity(), Vec3::Zero(), frame};
  }

  const Mat3& rotation() const { return rotation_; }
  const Vec3& translation() const { return translation_; }
  MotionFrame frame() const { return frame_; }

  /// Origin of frame k+1 expressed in frame k.
  Vec3 displacement() const { return -(rotation_.transpose() * translation_); }

  RigidTransform as_transform() const { return {rotation_, translation_}; }

 private:
  Mat3 rotation_;
  Vec3 translation_;
  MotionFrame frame_;
};

/// Slip angle of the kinematic bicycle model.
double slip_angle(double steering_angle, const VehicleParams& params);

/// One step of the kinematic bicycle model. `acceleration` is the finite-difference speed
/// derivative over the step.
VehicleState integrate_step(const VehicleState& state, const WheelSample& sample,
                            const VehicleParams& params, double dt, double acceleration = 0.0);

/// Forward finite difference of consecutive speeds; zero for the last sample.
std::vector<double> finite_difference_acceleration(std::span<const WheelSample> samples);

/// States at every sample timestamp, starting from the identity pose at samples[0].
std::vector<VehicleState> integrate_stream(std::span<const WheelSample> samples,
                                           const VehicleParams& params);

/// State at an arbitrary time, by a partial step from the last sample at or before `t`.
VehicleState state_at(std::span<const WheelSample> samples, std::span<const VehicleState> states,
                      std::span<const double> accelerations, const VehicleParams& params,
                      double t);

RelativeMotion relative_vehicle_motion(const VehicleState& from, const VehicleState& to);

/// Similarity conjugation by the camera-from-CoG extrinsic.
RelativeMotion vehicle_to_camera_motion(const RelativeMotion& motion,
                                        const RigidTransform& camera_from_cog);

/// Fraction of sampled time with speed above `threshold`.
double driving_fraction(std::span<const WheelSample> samples, double threshold = 1e-3);

/// Yaw rate at a sample, rad/s.
double yaw_rate(const WheelSample& sample, const VehicleParams& params);

}  // namespace gcalib
