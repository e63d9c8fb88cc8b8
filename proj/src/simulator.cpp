#include "gcalib/simulator.hpp"

#include "gcalib/error.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <unordered_set>

namespace gcalib {

namespace {

constexpr double kPhaseEps = 1e-9;

std::mt19937_64 stream(std::uint64_t seed, std::uint64_t id) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(id)};
  return std::mt19937_64(seq);
}

struct Landmark {
  Vec3 position;
  bool ground;
};

bool stop_and_go_moving(const TrajectoryParams& p, double t) {
  const double cycle = p.drive_time + p.stop_time;
  const double phase = t - cycle * std::floor((t + kPhaseEps) / cycle);
  return phase < p.drive_time - kPhaseEps;
}

/// Projection of a G0-frame point into a camera; nullopt if not visible.
std::optional<PixelPoint> observe(const Vec3& X, const RigidTransform& camera_from_g0,
                                  const CameraIntrinsics& K, double max_range) {
  const Vec3 Xc = camera_from_g0.apply(X);
  if (Xc.z() <= 0.1 || Xc.norm() > max_range) return std::nullopt;
  const PixelPoint p = project(Xc, K);
  if (!K.contains(p.u, p.v)) return std::nullopt;
  return p;
}

PixelPoint add_noise(PixelPoint p, double sigma, std::mt19937_64& rng,
                     const CameraIntrinsics& K) {
  if (sigma <= 0.0) return p;
  std::normal_distribution<double> n(0.0, sigma);
  p.u = std::clamp(p.u + n(rng), 0.0, K.width - 1.0);
  p.v = std::clamp(p.v + n(rng), 0.0, K.height - 1.0);
  return p;
}

}  // namespace

const char* to_string(TrajectoryKind kind) {
  switch (kind) {
    case TrajectoryKind::Straight: return "straight";
    case TrajectoryKind::Arc: return "arc";
    case TrajectoryKind::SCurve: return "s_curve";
    case TrajectoryKind::StopAndGo: return "stop_and_go";
  }
  return "straight";
}

std::optional<TrajectoryKind> trajectory_from_string(const std::string& s) {
  for (auto k : {TrajectoryKind::Straight, TrajectoryKind::Arc, TrajectoryKind::SCurve,
                 TrajectoryKind::StopAndGo}) {
    if (s == to_string(k)) return k;
  }
  return std::nullopt;
}

CameraIntrinsics ScenarioConfig::default_intrinsics() {
  return {420.0, 420.0, 406.0, 270.0, 812, 540};
}

RigidTransform ScenarioConfig::default_extrinsic() {
  return {from_euler_zyx(Vec3(0.0, 12.0 * M_PI / 180.0, 0.0)) * mount_rotation(), Vec3(1.8, 0.0, 1.5)};
}

SecondCameraConfig ScenarioConfig::default_second_camera() {
  SecondCameraConfig c;
  c.ground_from_camera = {
      from_euler_zyx(Vec3(0.0, 10.0 * M_PI / 180.0, 60.0 * M_PI / 180.0)) * mount_rotation(),
      Vec3(1.2, 0.9, 1.4)};
  c.intrinsics = default_intrinsics();
  return c;
}

void ScenarioConfig::validate() const {
  const auto fail = [](const char* what) { throw Error(ErrorCode::InvalidConfig, what); };
  if (!(duration > 0.0)) fail("duration must be positive");
  if (!(frame_rate > 0.0)) fail("frame_rate must be positive");
  if (!(wheel_rate >= frame_rate)) fail("wheel_rate must be at least frame_rate");
  if (!(ground_feature_density >= 0.0)) fail("ground_feature_density must be >= 0");
  if (!(structure_fraction >= 0.0 && structure_fraction <= 1.0)) {
    fail("structure_fraction must lie in [0, 1]");
  }
  if (!(pixel_noise_sigma >= 0.0)) fail("pixel_noise_sigma must be >= 0");
  if (odometry_noise.speed_sigma < 0.0 || odometry_noise.speed_sigma_fraction < 0.0 ||
      odometry_noise.steering_sigma < 0.0) {
    fail("odometry noise must be >= 0");
  }
  if (!intrinsics.is_valid()) fail("invalid intrinsics");
  if (!vehicle.is_valid()) fail("invalid vehicle parameters");
  if (!nominal_extrinsic.is_valid()) fail("nominal extrinsic is not a rigid transform");
  if (!(max_range > 0.0)) fail("max_range must be positive");
  if (trajectory.kind == TrajectoryKind::SCurve && !(trajectory.period > 0.0)) {
    fail("s_curve period must be positive");
  }
  if (trajectory.kind == TrajectoryKind::StopAndGo &&
      !(trajectory.drive_time > 0.0 && trajectory.stop_time >= 0.0)) {
    fail("stop_and_go phases must be positive");
  }
  for (std::size_t i = 1; i < extrinsic_schedule.size(); ++i) {
    if (extrinsic_schedule[i].time < extrinsic_schedule[i - 1].time) {
      fail("extrinsic schedule must be sorted by time");
    }
  }
  for (const auto& p : extrinsic_schedule) {
    if (p.ramp < 0.0) fail("ramp duration must be >= 0");
  }
  if (second_camera && (!second_camera->intrinsics.is_valid() ||
                        !second_camera->ground_from_camera.is_valid())) {
    fail("invalid second camera");
  }
}

WheelSample trajectory_command(const TrajectoryParams& p, double t) {
  WheelSample s;
  s.timestamp = t;
  s.speed = p.speed;
  switch (p.kind) {
    case TrajectoryKind::Straight:
      break;
    case TrajectoryKind::Arc:
      s.steering_angle = p.steering;
      break;
    case TrajectoryKind::SCurve:
      s.steering_angle = p.steering * std::sin(2.0 * M_PI * t / p.period);
      break;
    case TrajectoryKind::StopAndGo:
      s.speed = stop_and_go_moving(p, t) ? p.speed : 0.0;
      break;
  }
  return s;
}

double expected_driving_fraction(const TrajectoryParams& p, double duration) {
  if (duration <= 0.0 || p.speed == 0.0) return 0.0;
  if (p.kind != TrajectoryKind::StopAndGo) return 1.0;
  const double cycle = p.drive_time + p.stop_time;
  const double full = std::floor((duration + kPhaseEps) / cycle);
  const double rem = duration - full * cycle;
  return (full * p.drive_time + std::min(std::max(rem, 0.0), p.drive_time)) / duration;
}

RigidTransform apply_extrinsic_schedule(const RigidTransform& nominal,
                                        const std::vector<ExtrinsicPerturbation>& schedule,
                                        double t) {
  RigidTransform out = nominal;
  for (const auto& p : schedule) {
    if (t < p.time) break;
    const double f = p.ramp > 0.0 ? std::min((t - p.time) / p.ramp, 1.0) : 1.0;
    const Mat3 dR = from_euler_zyx(p.euler);
    const Mat3 step = f == 1.0 ? dR : exp_so3(f * log_so3(dR));
    out.rotation = step * out.rotation;
    out.translation.z() += f * p.height_delta;
  }
  return out;
}

RigidTransform apply_extrinsic_schedule(const ScenarioTruth& truth, double t) {
  return apply_extrinsic_schedule(truth.nominal_extrinsic, truth.schedule, t);
}

std::optional<bool> truth_label(const ScenarioTruth& truth, long track_id) {
  auto it = std::lower_bound(truth.labels.begin(), truth.labels.end(), track_id,
                             [](const TrackLabel& l, long id) { return l.track_id < id; });
  if (it == truth.labels.end() || it->track_id != track_id) return std::nullopt;
  return it->ground;
}

Scenario generate(const ScenarioConfig& config) {
  config.validate();

  Scenario sc;
  sc.intrinsics = config.intrinsics;
  sc.vehicle = config.vehicle;
  if (config.second_camera) sc.second_intrinsics = config.second_camera->intrinsics;

  // Exact wheel stream and the trajectory it integrates to.
  const auto n_wheel = static_cast<std::size_t>(std::floor(config.duration * config.wheel_rate + 1e-9)) + 1;
  std::vector<WheelSample> clean(n_wheel);
  for (std::size_t i = 0; i < n_wheel; ++i) {
    clean[i] = trajectory_command(config.trajectory, static_cast<double>(i) / config.wheel_rate);
  }
  const auto states = integrate_stream(clean, config.vehicle);
  const auto acc = finite_difference_acceleration(clean);

  const auto n_frames = static_cast<std::size_t>(std::floor(config.duration * config.frame_rate + 1e-9)) + 1;
  std::vector<double> frame_times(n_frames);
  std::vector<RigidTransform> poses(n_frames);
  std::vector<RigidTransform> extrinsics(n_frames);
  Vec2 lo = Vec2::Constant(1e300);
  Vec2 hi = Vec2::Constant(-1e300);
  for (std::size_t i = 0; i < n_frames; ++i) {
    frame_times[i] = static_cast<double>(i) / config.frame_rate;
    const auto s = state_at(clean, states, acc, config.vehicle, frame_times[i]);
    poses[i] = s.pose();
    extrinsics[i] =
        apply_extrinsic_schedule(config.nominal_extrinsic, config.extrinsic_schedule, frame_times[i]);
    lo = lo.cwiseMin(s.position.head<2>());
    hi = hi.cwiseMax(s.position.head<2>());
  }

  // Landmarks over the driven area, in the ground frame at t = 0.
  std::vector<Landmark> landmarks;
  {
    auto rng = stream(config.seed, 1);
    lo.array() -= config.max_range;
    hi.array() += config.max_range;
    const double area = (hi - lo).prod();
    const auto count = static_cast<std::size_t>(std::llround(config.ground_feature_density * area));
    std::uniform_real_distribution<double> ux(lo.x(), hi.x());
    std::uniform_real_distribution<double> uy(lo.y(), hi.y());
    std::uniform_real_distribution<double> uz(0.3, 2.5);
    std::bernoulli_distribution structure(config.structure_fraction);
    landmarks.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
      Landmark l;
      l.position = Vec3(ux(rng), uy(rng), 0.0);
      l.ground = !structure(rng);
      if (!l.ground) l.position.z() = uz(rng);
      landmarks.push_back(l);
    }
  }

  auto pix_rng = stream(config.seed, 2);
  std::vector<char> seen(landmarks.size(), 0);
  sc.keyframes.resize(n_frames);
  for (std::size_t i = 0; i < n_frames; ++i) {
    // camera_from_g0 = (g0_from_ground * ground_from_camera)^-1
    const RigidTransform cam_from_g0 = invert(compose(poses[i], extrinsics[i]));
    std::optional<RigidTransform> q_from_g0;
    if (config.second_camera) {
      q_from_g0 = invert(compose(poses[i], config.second_camera->ground_from_camera));
    }
    auto& kf = sc.keyframes[i];
    kf.timestamp = frame_times[i];
    for (std::size_t j = 0; j < landmarks.size(); ++j) {
      const auto p = observe(landmarks[j].position, cam_from_g0, config.intrinsics, config.max_range);
      if (!p) continue;
      PixelPoint obs = add_noise(*p, config.pixel_noise_sigma, pix_rng, config.intrinsics);
      obs.track_id = static_cast<long>(j);
      kf.observations.push_back(obs);
      seen[j] = 1;
      if (q_from_g0) {
        const auto q = observe(landmarks[j].position, *q_from_g0,
                               config.second_camera->intrinsics, config.max_range);
        if (q) {
          CrossMatch cm;
          cm.p = add_noise(*p, config.pixel_noise_sigma, pix_rng, config.intrinsics);
          cm.q = add_noise(*q, config.pixel_noise_sigma, pix_rng, config.second_camera->intrinsics);
          cm.p.track_id = cm.q.track_id = static_cast<long>(j);
          kf.cross_matches.push_back(cm);
        }
      }
    }
  }

  bool shared = false;
  for (std::size_t i = 0; i + 1 < n_frames && !shared; ++i) {
    std::unordered_set<long> ids;
    for (const auto& o : sc.keyframes[i].observations) ids.insert(o.track_id);
    for (const auto& o : sc.keyframes[i + 1].observations) {
      if (ids.count(o.track_id)) {
        shared = true;
        break;
      }
    }
  }
  if (!shared) {
    throw Error(ErrorCode::EmptyScene, "no landmark is visible in two consecutive keyframes");
  }

  // Odometry as the vehicle reports it.
  {
    auto rng = stream(config.seed, 3);
    std::normal_distribution<double> n01(0.0, 1.0);
    const auto& nz = config.odometry_noise;
    sc.wheel_samples = clean;
    for (auto& s : sc.wheel_samples) {
      const double sv = nz.speed_sigma + nz.speed_sigma_fraction * std::abs(s.speed);
      const double a = n01(rng);
      const double b = n01(rng);
      if (sv > 0.0) s.speed += sv * a;
      if (nz.steering_sigma > 0.0) s.steering_angle += nz.steering_sigma * b;
    }
  }

  sc.truth.nominal_extrinsic = config.nominal_extrinsic;
  sc.truth.schedule = config.extrinsic_schedule;
  sc.truth.extrinsics = extrinsics;
  sc.truth.poses = poses;
  for (std::size_t j = 0; j < landmarks.size(); ++j) {
    if (seen[j]) sc.truth.labels.push_back({static_cast<long>(j), landmarks[j].ground});
  }
  if (config.second_camera) sc.truth.second_extrinsic = config.second_camera->ground_from_camera;
  return sc;
}

}  // namespace gcalib
