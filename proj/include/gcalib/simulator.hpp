#pragma once

#include "gcalib/geom.hpp"
#include "gcalib/odometry.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace gcalib {

enum class TrajectoryKind { Straight, Arc, SCurve, StopAndGo };

const char* to_string(TrajectoryKind kind);
std::optional<TrajectoryKind> trajectory_from_string(const std::string& s);

struct TrajectoryParams {
  TrajectoryKind kind = TrajectoryKind::Straight;
  double speed = 10.0;            // m/s cruise speed
  double steering = 0.02;         // rad, arc steering / s-curve amplitude
  double period = 10.0;           // s, s-curve period
  double drive_time = 8.0;        // s, stop-and-go moving phase
  double stop_time = 2.0;         // s, stop-and-go standstill phase

  friend bool operator==(const TrajectoryParams&, const TrajectoryParams&) = default;
};

struct OdometryNoise {
  double speed_sigma = 0.0;           // m/s, absolute
  double speed_sigma_fraction = 0.0;  // relative to |speed|
  double steering_sigma = 0.0;        // rad

  friend bool operator==(const OdometryNoise&, const OdometryNoise&) = default;
};

/// Perturbation of the nominal extrinsic, ramped linearly (on the rotation geodesic) over
/// [time, time + ramp]. Angles are roll/pitch/yaw about the vehicle axes.
struct ExtrinsicPerturbation {
  double time = 0.0;
  double ramp = 0.0;
  Vec3 euler = Vec3::Zero();
  double height_delta = 0.0;

  friend bool operator==(const ExtrinsicPerturbation&, const ExtrinsicPerturbation&) = default;
};

struct SecondCameraConfig {
  RigidTransform ground_from_camera;
  CameraIntrinsics intrinsics;
};

struct ScenarioConfig {
  std::uint64_t seed = 1;
  double duration = 10.0;   // s
  double wheel_rate = 100.0;
  double frame_rate = 33.0;
  TrajectoryParams trajectory;
  double ground_feature_density = 0.3;  // landmarks per m^2
  double structure_fraction = 0.0;
  double pixel_noise_sigma = 0.0;
  OdometryNoise odometry_noise;
  std::vector<ExtrinsicPerturbation> extrinsic_schedule;
  std::optional<SecondCameraConfig> second_camera;

  CameraIntrinsics intrinsics = default_intrinsics();
  VehicleParams vehicle;
  RigidTransform nominal_extrinsic = default_extrinsic();  // ground_from_camera
  double max_range = 30.0;  // m

  static CameraIntrinsics default_intrinsics();
  static RigidTransform default_extrinsic();
  static SecondCameraConfig default_second_camera();
  void validate() const;
};

struct CrossMatch {
  PixelPoint p;  // front camera
  PixelPoint q;  // second camera

  friend bool operator==(const CrossMatch&, const CrossMatch&) = default;
};

struct KeyframeObservations {
  double timestamp = 0.0;
  std::vector<PixelPoint> observations;
  std::vector<CrossMatch> cross_matches;

  friend bool operator==(const KeyframeObservations&, const KeyframeObservations&) = default;
};

struct TrackLabel {
  long track_id = -1;
  bool ground = true;

  friend bool operator==(const TrackLabel&, const TrackLabel&) = default;
};

struct ScenarioTruth {
  RigidTransform nominal_extrinsic;
  std::vector<ExtrinsicPerturbation> schedule;
  std::vector<RigidTransform> extrinsics;  // ground_from_camera per keyframe
  std::vector<RigidTransform> poses;       // world_from_cog per keyframe
  std::vector<TrackLabel> labels;          // sorted by track id
  std::optional<RigidTransform> second_extrinsic;

  friend bool operator==(const ScenarioTruth&, const ScenarioTruth&) = default;
};

struct Scenario {
  CameraIntrinsics intrinsics;
  std::optional<CameraIntrinsics> second_intrinsics;
  VehicleParams vehicle;
  std::vector<WheelSample> wheel_samples;
  std::vector<KeyframeObservations> keyframes;
  ScenarioTruth truth;

  friend bool operator==(const Scenario&, const Scenario&) = default;
};

/// Noise-free speed and steering commanded by a trajectory at time t.
WheelSample trajectory_command(const TrajectoryParams& params, double t);

/// Exact share of time the trajectory spends moving over [0, duration).
double expected_driving_fraction(const TrajectoryParams& params, double duration);

/// Ground-from-camera extrinsic active at time t.
RigidTransform apply_extrinsic_schedule(const RigidTransform& nominal,
                                        const std::vector<ExtrinsicPerturbation>& schedule,
                                        double t);
RigidTransform apply_extrinsic_schedule(const ScenarioTruth& truth, double t);

Scenario generate(const ScenarioConfig& config);

/// Whether track_id is a ground landmark according to the truth labels.
std::optional<bool> truth_label(const ScenarioTruth& truth, long track_id);

}  // namespace gcalib
