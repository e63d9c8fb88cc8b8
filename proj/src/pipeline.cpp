#include "gcalib/pipeline.hpp"

#include "gcalib/error.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <unordered_map>

namespace gcalib {

namespace {

struct Segment {
  WindowState window;
  WindowFeatures features;
  std::vector<double> headings;  // odometry heading of the camera displacement, per pair
  MarginalPrior prior;
  std::deque<Mat3> rotations;
  std::deque<Vec3> translations;
  std::deque<Vec6> samples;       // window estimates, averaged into the broadcast value
  std::deque<Vec6> pair_samples;  // single-pair estimates, tested before broadcasting
  int pending_jumps = 0;  // consecutive pairs that disagreed with the window plane
  std::optional<GroundPlaneEstimate> suspect_plane;  // plane of the latest disagreeing pair
  bool has_reported = false;
  int gate_failures = 0;  // consecutive rejected reporting tests since the last report

  void reset() { *this = Segment{}; }
};

double heading_of_camera_motion(const RelativeMotion& vehicle_motion,
                                const RigidTransform& cog_from_camera) {
  const Vec3 c = cog_from_camera.translation;
  const Vec3 moved = invert(vehicle_motion.as_transform()).apply(c);
  const Vec3 d = moved - c;
  return std::atan2(d.y(), d.x());
}

Mat3 rot_z(double a) { return exp_so3(Vec3(0.0, 0.0, a)); }

std::size_t sample_index_at(const std::vector<WheelSample>& samples, double t) {
  auto it = std::upper_bound(samples.begin(), samples.end(), t,
                             [](double v, const WheelSample& s) { return v < s.timestamp; });
  if (it == samples.begin()) return 0;
  return static_cast<std::size_t>(std::distance(samples.begin(), it) - 1);
}

}  // namespace

PipelineConfig PipelineConfig::defaults() {
  PipelineConfig c;
  c.initial_xi = xi_from_extrinsic(ScenarioConfig::default_extrinsic());
  return c;
}

void PipelineConfig::validate() const {
  const auto fail = [](const char* what) { throw Error(ErrorCode::InvalidConfig, what); };
  if (!thresholds.is_valid()) fail("invalid thresholds");
  if (!optimizer.is_valid()) fail("invalid optimizer config");
  if (!keyframes.is_valid()) fail("invalid keyframe selection");
  if (!(gating_radius_px > 0.0)) fail("gating radius must be positive");
  if (grid_cols < 1 || grid_rows < 1 || per_cell < 1) fail("grid must be at least 1x1x1");
  if (!(max_plane_depth > 0.0)) fail("max_plane_depth must be positive");
  if (!(prior_decay > 0.0 && prior_decay <= 1.0)) fail("prior_decay must lie in (0, 1]");
  if (plane_jump_persistence < 1) fail("plane_jump_persistence must be at least 1");
  if (gate_stall_limit < 0) fail("gate_stall_limit must be non-negative");
  if (min_report_samples < 2) fail("min_report_samples must be at least 2");
  if (reference_mode == ReferenceMode::SplitHalf && min_report_samples < 4) {
    fail("split-half reference needs min_report_samples >= 4");
  }
  if (epipolar.ransac_iterations < 0 || !(epipolar.inlier_threshold_px > 0.0)) {
    fail("invalid epipolar options");
  }
  if (verification.max_seed_attempts < 1 || verification.vote_pairs < 1 ||
      verification.pair_pool < 2 || !(verification.min_seed_area_px2 >= 0.0) ||
      !(verification.max_reprojection_px > 0.0) || !(verification.min_pair_spread_m >= 0.0) ||
      !(verification.min_pair_area_px2 >= 0.0)) {
    fail("invalid verification options");
  }
  if (failure.min_features < 8)fail("failure.min_features below the eight-point minimum");
  if (!initial_xi.allFinite()) fail("initial extrinsic is not finite");
}

RigidTransform ground_from_cog(const VehicleParams& vehicle) {
  return {Mat3::Identity(), Vec3(0.0, 0.0, vehicle.cg_height)};
}

std::vector<KeyframeChoice> select_keyframes(const Scenario& scenario, const KeyframeSelection& sel) {
  std::vector<KeyframeChoice> out;
  const auto& samples = scenario.wheel_samples;
  if (samples.empty() || scenario.keyframes.empty()) return out;
  const auto states = integrate_stream(samples, scenario.vehicle);
  const auto acc = finite_difference_acceleration(samples);
  bool chain_broken = true;
  Vec3 last = Vec3::Zero();
  for (std::size_t i = 0; i < scenario.keyframes.size(); ++i) {
    const double t = scenario.keyframes[i].timestamp;
    const auto& ws = samples[sample_index_at(samples, t)];
    const double speed = std::abs(ws.speed);
    const bool ok = speed >= sel.min_speed && speed <= sel.max_speed &&
                    std::abs(yaw_rate(ws, scenario.vehicle)) <= sel.max_yaw_rate;
    if (!ok) {
      chain_broken = true;
      continue;
    }
    const Vec3 p = state_at(samples, states, acc, scenario.vehicle, t).position;
    if (chain_broken) {
      out.push_back({i, true});
      last = p;
      chain_broken = false;
      continue;
    }
    if ((p - last).norm() >= sel.min_distance) {
      out.push_back({i, false});
      last = p;
    }
  }
  return out;
}

CalibrationReport run_pipeline(const Scenario& scenario, const PipelineConfig& config) {
  config.validate();
  CalibrationReport report;
  const auto& K = scenario.intrinsics;
  const OptimizerConfig& oc = config.optimizer;
  const RigidTransform factory = extrinsic_from_xi(config.initial_xi);
  RigidTransform current = factory;
  // The front end (odometry in the camera frame, horizon, prediction) runs on the last
  // broadcast calibration so an unconfirmed estimate never steers feature selection.
  RigidTransform frontend = factory;
  bool last_reported = false;
  Segment seg;
  std::vector<double> eps_f;
  std::vector<double> eps_p;

  const auto& samples = scenario.wheel_samples;
  const auto states = integrate_stream(samples, scenario.vehicle);
  const auto acc = finite_difference_acceleration(samples);
  const auto choices = select_keyframes(scenario, config.keyframes);
  const RigidTransform g_from_cog = ground_from_cog(scenario.vehicle);

  const auto fail_segment = [&](KeyframeDiagnostics& d, const std::string& reason) {
    d.failure = reason;
    report.failures.push_back({d.timestamp, d.index, reason});
    seg.reset();
  };

  try {
    for (std::size_t c = 1; c < choices.size(); ++c) {
      if (choices[c].starts_chain) continue;
      const std::size_t fa = choices[c - 1].frame;
      const std::size_t fb = choices[c].frame;
      const auto& kfa = scenario.keyframes[fa];
      const auto& kfb = scenario.keyframes[fb];

      KeyframeDiagnostics diag;
      diag.index = static_cast<int>(c);
      diag.frame = static_cast<int>(fb);
      diag.timestamp = kfb.timestamp;

      // Odometry between the keyframes, seen from the camera.
      const auto va = state_at(samples, states, acc, scenario.vehicle, kfa.timestamp);
      const auto vb = state_at(samples, states, acc, scenario.vehicle, kfb.timestamp);
      const RelativeMotion m_vehicle = relative_vehicle_motion(va, vb);
      const RigidTransform cam_from_cog = compose(invert(frontend), g_from_cog);
      const RelativeMotion m_cam = vehicle_to_camera_motion(m_vehicle, cam_from_cog);
      const Vec3 n_hat = frontend.rotation.row(2).transpose();
      const double h_ref = frontend.translation.z();

      // Coarse ground candidates.
      std::unordered_map<long, PixelPoint> in_b;
      for (const auto& o : kfb.observations) in_b.emplace(o.track_id, o);
      std::vector<FeatureMatch> candidates;
      const HorizonLine horizon = horizon_line(frontend.rotation.transpose(), K);
      for (const auto& o : kfa.observations) {
        if (!is_below_horizon(horizon, o)) continue;
        auto it = in_b.find(o.track_id);
        if (it == in_b.end()) continue;
        PixelPoint pred;
        try {
          pred = predict_feature(o, m_cam, n_hat, h_ref, K);
        } catch (const Error&) {
          continue;
        }
        const double d = (it->second.vec() - pred.vec()).norm();
        if (d > config.gating_radius_px) continue;
        candidates.push_back({o, it->second, pred, GroundLabel::Unverified, -d});
      }
      diag.candidates = static_cast<int>(candidates.size());
      const auto selected =
          grid_select(candidates, config.grid_cols, config.grid_rows, config.per_cell, K);
      diag.selected = static_cast<int>(selected.size());

      StepDiagnostics step;
      step.ground_features = diag.selected;
      if (diag.selected < config.failure.min_features) {
        fail_segment(diag, to_string(FailureReason::TooFewFeatures));
        report.keyframes.push_back(diag);
        continue;
      }

      // Epipolar check against odometry.
      std::optional<EpipolarResult> epi;
      EpipolarOptions eo = config.epipolar;
      eo.seed = config.seed * 1000003ULL + static_cast<std::uint64_t>(c);
      try {
        epi = epipolar_pose_check(selected, m_cam, n_hat, config.thresholds, K, eo);
      } catch (const Error&) {
        step.pose_available = false;
      }
      if (epi) {
        diag.inliers = static_cast<int>(epi->inliers.size());
        step.rotation_jump = rotation_angle_between(epi->pose.rotation(), m_cam.rotation());
        step.translation_jump = (epi->pose.translation() - m_cam.translation()).norm();
      }
      step.triangulated = config.failure.min_triangulated;  // not evaluated yet
      if (auto f = detect_failure(step, config.failure)) {
        fail_segment(diag, to_string(*f));
        report.keyframes.push_back(diag);
        continue;
      }
      if (!epi->accepted) {
        diag.gated = true;
        report.keyframes.push_back(diag);
        continue;
      }

      // Fine ground verification and the per-pair plane.
      std::vector<FeatureMatch> fine;
      std::vector<GroundPoint3D> plane_points;
      try {
        const auto ver = verify_ground_set(epi->inliers, epi->pose, n_hat, config.thresholds.eps_l,
                                           config.seed * 7919ULL + static_cast<std::uint64_t>(c), K,
                                           config.verification);
        fine = ver.fine;
        step.triangulated = static_cast<int>(ver.points.size());
        for (const auto& p : ver.points) {
          if (p.position.norm() <= config.max_plane_depth) plane_points.push_back(p);
        }
        // far points are noisy but better than no starting plane at all
        if (plane_points.size() < 3) plane_points = ver.points;
      } catch (const Error&) {
      }
      diag.fine = static_cast<int>(fine.size());
      std::optional<GroundPlaneEstimate> est;
      if (plane_points.size() >= 3) {
        try {
          est = fit_plane(plane_points);
        } catch (const Error&) {
          step.triangulated = 0;
        }
      }
      const Vec3 disp = epi->pose.displacement();
      const double baseline = m_cam.translation().norm();
      // Plane seen by this pair alone: homography fit over its fine set, started from the
      // triangulated plane. Falls back to the triangulated plane when the fit fails.
      std::optional<GroundPlaneEstimate> pair_plane;
      Vec3 pair_forward = disp;
      if (est) {
        diag.plane = est;
        pair_plane = est;
        if (fine.size() >= 4) {
          WindowState single;
          single.frames.push_back({epi->pose.rotation(), epi->pose.translation(), baseline});
          single.normal = est->normal;
          single.height = est->height;
          try {
            const WindowFeatures wf{fine};
            single = optimize_window(single, wf, MarginalPrior{}, oc, K).state;
            pair_plane = GroundPlaneEstimate{single.normal, single.height, static_cast<int>(fine.size())};
            diag.pair_plane = pair_plane;
            pair_forward = -(single.frames[0].rotation.transpose() * single.frames[0].translation);
          } catch (const Error&) {
          }
        }
        const bool have_window = !seg.window.frames.empty();
        if (have_window) {
          step.normal_change =
              std::acos(std::clamp(pair_plane->normal.dot(seg.window.normal), -1.0, 1.0));
          step.height_change = std::abs(pair_plane->height - seg.window.height);
        }
        step.plane_quality_ok = filter_plane_estimate(
            *pair_plane, disp, have_window ? seg.window.height : pair_plane->height,
            config.thresholds);
      } else {
        step.triangulated = 0;
      }
      if (fine.size() < 4) step.triangulated = 0;

      const auto failure = detect_failure(step, config.failure);
      if (failure == FailureReason::PlaneJump) {
        // A jump is confirmed only by consecutive pairs that agree on the new plane; two
        // outliers on opposite sides of the window plane restart the count.
        const bool agrees =
            seg.pending_jumps > 0 && seg.suspect_plane &&
            std::acos(std::clamp(pair_plane->normal.dot(seg.suspect_plane->normal), -1.0, 1.0)) <=
                config.failure.max_normal_change &&
            std::abs(pair_plane->height - seg.suspect_plane->height) <=
                config.failure.max_height_change;
        seg.pending_jumps = agrees ? seg.pending_jumps + 1 : 1;
        seg.suspect_plane = pair_plane;
        if (seg.pending_jumps < config.plane_jump_persistence) {
          diag.suspect = true;
          report.keyframes.push_back(diag);
          continue;
        }
      }
      seg.pending_jumps = 0;
      seg.suspect_plane.reset();
      if (failure) {
        fail_segment(diag, to_string(*failure));
        report.keyframes.push_back(diag);
        continue;
      }

      if (seg.window.frames.empty()) {
        seg.window.normal = pair_plane->normal;
        seg.window.height = pair_plane->height;
      }
      seg.window.frames.push_back({epi->pose.rotation(), epi->pose.translation(), baseline});
      seg.features.push_back(fine);
      seg.headings.push_back(heading_of_camera_motion(m_vehicle, invert(cam_from_cog)));

      // Independent per-pair calibration sample; these feed the reporting test.
      {
        const Mat3 R_pair = rot_z(seg.headings.back()) * build_rotation(pair_plane->normal, pair_forward);
        const Vec3 t_pair(factory.translation.x(), factory.translation.y(), pair_plane->height);
        seg.pair_samples.push_back(xi_from_extrinsic({R_pair, t_pair}));
        while (seg.pair_samples.size() > static_cast<std::size_t>(oc.averaging_window))
          seg.pair_samples.pop_front();
      }

      if (seg.window.frames.size() > static_cast<std::size_t>(oc.window_size)) {
        try {
          MarginalPrior p = marginalize(seg.window, seg.features, seg.prior, oc, K, 0);
          const double s = std::sqrt(config.prior_decay);
          p.H_m *= s;
          p.r_m *= s;
          seg.prior = std::move(p);
        } catch (const Error& e) {
          if (e.code() != ErrorCode::SingularBlock) throw;
          diag.marginalization_fallback = true;
        }
        seg.window.frames.erase(seg.window.frames.begin());
        seg.features.erase(seg.features.begin());
        seg.headings.erase(seg.headings.begin());
      }

      try {
        seg.window = optimize_window(seg.window, seg.features, seg.prior, oc, K).state;
      } catch (const Error& e) {
        fail_segment(diag, to_string(e.code()));
        report.keyframes.push_back(diag);
        continue;
      }
      diag.window_normal = seg.window.normal;
      diag.window_height = seg.window.height;

      // Transfer error of the newest pair.
      const auto& newest = seg.window.frames.back();
      const Mat3 H = homography(RelativeMotion(newest.rotation, newest.translation, MotionFrame::Camera),
                                seg.window.plane(), K);
      for (const auto& m : seg.features.back()) diag.residuals.push_back(transfer_residual(H, m).norm());
      diag.transfer_error = metric_transfer_error(seg.features.back(), H);
      eps_f.push_back(diag.transfer_error);

      // Calibration sample from the window.
      std::vector<Mat3> per_pair;
      for (std::size_t j = 0; j < seg.window.frames.size(); ++j) {
        const auto& f = seg.window.frames[j];
        const Vec3 forward = -(f.rotation.transpose() * f.translation);
        per_pair.push_back(rot_z(seg.headings[j]) * build_rotation(seg.window.normal, forward));
      }
      const Mat3 R_sample = average_rotations(per_pair);
      const Vec3 t_sample(factory.translation.x(), factory.translation.y(), seg.window.height);
      seg.rotations.push_back(R_sample);
      seg.translations.push_back(t_sample);
      seg.samples.push_back(xi_from_extrinsic({R_sample, t_sample}));
      while (seg.samples.size() > static_cast<std::size_t>(oc.averaging_window)) {
        seg.rotations.pop_front();
        seg.translations.pop_front();
        seg.samples.pop_front();
      }
      const std::vector<Mat3> rs(seg.rotations.begin(), seg.rotations.end());
      const std::vector<Vec3> ts(seg.translations.begin(), seg.translations.end());
      current = {average_rotations(rs), average_translations(ts)};

      // Reporting gate.
      last_reported = false;
      const auto& ps = seg.pair_samples;
      const auto n = ps.size();
      if (n >= static_cast<std::size_t>(config.min_report_samples)) {
        const std::vector<Vec6> all(ps.begin(), ps.end());
        ZTestResult z;
        switch (config.reference_mode) {
          case ReferenceMode::Estimate:
            z = z_test(all, xi_from_extrinsic(current), oc.alpha);
            break;
          case ReferenceMode::SplitHalf: {
            const std::size_t half = n / 2;
            Vec6 ref = Vec6::Zero();
            for (std::size_t i = 0; i < half; ++i) ref += ps[i];
            ref /= static_cast<double>(half);
            const std::vector<Vec6> recent(ps.begin() + static_cast<long>(half), ps.end());
            z = z_test(recent, ref, oc.alpha);
            break;
          }
          case ReferenceMode::Fixed:
            z = z_test(all, oc.xi_d, oc.alpha);
            break;
        }
        if (z.report) {
          last_reported = true;
          frontend = current;
          seg.has_reported = true;
          seg.gate_failures = 0;
          report.events.push_back(
              {kfb.timestamp, diag.index, xi_from_extrinsic(current), z.z, z.samples, z.critical});
        } else if (seg.has_reported && ++seg.gate_failures >= config.gate_stall_limit &&
                   config.gate_stall_limit > 0) {
          // The estimate no longer agrees with what the pairs measure: the extrinsic moved.
          diag.gate_restart = true;
          seg.reset();
        }
      }

      if (scenario.second_intrinsics && scenario.truth.second_extrinsic && !kfb.cross_matches.empty()) {
        diag.residual_error = metric_residual_error(kfb.cross_matches, current,
                                                    *scenario.truth.second_extrinsic, K,
                                                    scenario.second_intrinsics);
        eps_p.push_back(*diag.residual_error);
      }
      report.keyframes.push_back(diag);
    }
  } catch (const Error& e) {
    report.aborted = true;
    report.abort_reason = e.what();
  }

  report.transfer_histogram = make_histogram(eps_f, 0.1, 50);
  report.residual_histogram = make_histogram(eps_p, 0.5, 50);
  if (!report.events.empty()) {
    std::vector<ReportedXi> xs;
    for (const auto& e : report.events) xs.push_back({e.timestamp, e.xi});
    report.truth = compare_to_truth(xs, scenario.truth);
  }
  report.final_result.rotation = current.rotation;
  report.final_result.translation = current.translation;
  report.final_result.xi = xi_from_extrinsic(current);
  report.final_result.sample_count = static_cast<int>(seg.samples.size());
  report.final_result.reported = last_reported;
  return report;
}

}  // namespace gcalib
