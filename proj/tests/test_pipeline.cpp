#include "gcalib/io.hpp"
#include "gcalib/pipeline.hpp"

#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cmath>

namespace gcalib {
namespace {

using testing::code_of;
using testing::deg;

ScenarioConfig drive(std::uint64_t seed, double duration) {
  ScenarioConfig c;
  c.seed = seed;
  c.duration = duration;
  return c;
}

PipelineConfig factory_config(const ScenarioConfig& c) {
  PipelineConfig pc = PipelineConfig::defaults();
  pc.initial_xi = xi_from_extrinsic(c.nominal_extrinsic);
  return pc;
}

TEST(Pipeline, NoiseFreeStraightDriveRecoversTruth) {
  auto c = drive(31, 4.0);
  // start from a wrong factory guess
  PipelineConfig pc = factory_config(c);
  pc.initial_xi(1) += deg(0.8);
  pc.initial_xi(5) += 0.03;
  const Scenario s = generate(c);
  const CalibrationReport r = run_pipeline(s, pc);
  ASSERT_FALSE(r.events.empty());
  EXPECT_TRUE(r.failures.empty());
  const Vec6 truth = xi_from_extrinsic(s.truth.extrinsics.back());
  const Vec6 got = r.events.back().xi;
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(got(i), truth(i), 1e-5) << "axis " << i;
  EXPECT_NEAR(got(5), truth(5), 1e-5);
  EXPECT_TRUE(r.final_result.reported);
  EXPECT_EQ(r.final_result.xi, got);
  const Mat3& R = r.final_result.rotation;
  EXPECT_LT((R * R.transpose() - Mat3::Identity()).norm(), 1e-12);
  EXPECT_LT((xi_from_extrinsic({R, r.final_result.translation}) - r.final_result.xi).norm(), 1e-12);
}

TEST(Pipeline, PitchStepReconverges) {
  auto c = drive(77, 14.0);
  c.extrinsic_schedule = {{6.0, 0.0, Vec3(0, deg(1.0), 0), 0.0}};
  const Scenario s = generate(c);
  const CalibrationReport r = run_pipeline(s, factory_config(c));
  int after = 0;
  for (const auto& e : r.events) {
    // the keyframe at the step itself still carries pre-step data
    if (e.timestamp <= 6.0) continue;
    ++after;
    const Vec6 t = xi_from_extrinsic(apply_extrinsic_schedule(s.truth, e.timestamp));
    EXPECT_LT(std::abs(e.xi(1) - t(1)), deg(0.1)) << "t = " << e.timestamp;
  }
  EXPECT_GT(after, 10);
}

TEST(Pipeline, StandstillGivesEmptyReport) {
  auto c = drive(5, 2.0);
  c.trajectory.speed = 0.0;
  const Scenario s = generate(c);
  const CalibrationReport r = run_pipeline(s, factory_config(c));
  EXPECT_TRUE(r.keyframes.empty());
  EXPECT_TRUE(r.events.empty());
  EXPECT_FALSE(r.aborted);
  EXPECT_FALSE(r.final_result.reported);
  EXPECT_EQ(r.transfer_histogram.total, 0);
}

class NoisyRun : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    auto c = drive(44, 6.0);
    c.pixel_noise_sigma = 0.5;
    c.structure_fraction = 0.3;
    c.odometry_noise.speed_sigma_fraction = 0.01;
    c.second_camera = ScenarioConfig::default_second_camera();
    config_ = new ScenarioConfig(c);
    scenario_ = new Scenario(generate(c));
    report_ = new CalibrationReport(run_pipeline(*scenario_, factory_config(c)));
  }
  static void TearDownTestSuite() {
    delete report_;
    delete scenario_;
    delete config_;
  }
  static ScenarioConfig* config_;
  static Scenario* scenario_;
  static CalibrationReport* report_;
};

ScenarioConfig* NoisyRun::config_ = nullptr;
Scenario* NoisyRun::scenario_ = nullptr;
CalibrationReport* NoisyRun::report_ = nullptr;

TEST_F(NoisyRun, DeterministicReport) {
  const CalibrationReport again = run_pipeline(*scenario_, factory_config(*config_));
  EXPECT_EQ(report_to_string(again), report_to_string(*report_));
}

TEST_F(NoisyRun, EveryBroadcastPassedTheGate) {
  ASSERT_FALSE(report_->events.empty());
  for (const auto& e : report_->events) {
    EXPECT_NEAR(e.critical, 1.959964, 1e-6);
    EXPECT_GE(e.samples, 2);
    for (int i = 0; i < 6; ++i) EXPECT_LT(std::abs(e.z(i)), e.critical);
  }
  for (std::size_t i = 1; i < report_->events.size(); ++i) {
    EXPECT_LE(report_->events[i - 1].timestamp, report_->events[i].timestamp);
  }
}

TEST_F(NoisyRun, TransferErrorIsTheMeanOfStoredResiduals) {
  long finite = 0;
  for (const auto& k : report_->keyframes) {
    if (!std::isfinite(k.transfer_error)) continue;
    ++finite;
    ASSERT_FALSE(k.residuals.empty());
    double sum = 0.0;
    for (double v : k.residuals) sum += v;
    EXPECT_NEAR(k.transfer_error, sum / static_cast<double>(k.residuals.size()), 1e-12);
  }
  EXPECT_GT(finite, 20);
  EXPECT_EQ(report_->transfer_histogram.total, finite);
}

TEST_F(NoisyRun, TruthComparisonMatchesEvents) {
  ASSERT_TRUE(report_->truth.has_value());
  std::vector<ReportedXi> xs;
  for (const auto& e : report_->events) xs.push_back({e.timestamp, e.xi});
  const auto c = compare_to_truth(xs, scenario_->truth);
  EXPECT_EQ(report_->truth->events, c.events);
  EXPECT_NEAR(report_->truth->delta_pitch_deg, c.delta_pitch_deg, 1e-12);
  EXPECT_NEAR(report_->truth->delta_height_cm, c.delta_height_cm, 1e-12);
  EXPECT_LT(c.delta_pitch_deg, 0.3);
  EXPECT_LT(c.delta_height_cm, 1.0);
}

TEST_F(NoisyRun, CrossCameraErrorIsRecorded) {
  long with_eps_p = 0;
  for (const auto& k : report_->keyframes) {
    if (k.residual_error) {
      ++with_eps_p;
      EXPECT_GE(*k.residual_error, 0.0);
    }
  }
  EXPECT_GT(with_eps_p, 0);
  EXPECT_EQ(report_->residual_histogram.total, with_eps_p);
}

// ---------------------------------------------------------------------------

TEST(SelectKeyframes, StopAndGoRestartsTheChain) {
  auto c = drive(6, 14.0);
  c.trajectory.kind = TrajectoryKind::StopAndGo;
  c.ground_feature_density = 0.05;
  const Scenario s = generate(c);
  const auto kfs = select_keyframes(s, KeyframeSelection{});
  ASSERT_GT(kfs.size(), 10u);
  EXPECT_TRUE(kfs.front().starts_chain);
  int restarts = 0;
  for (std::size_t i = 0; i < kfs.size(); ++i) {
    const double t = s.keyframes[kfs[i].frame].timestamp;
    // no keyframe while parked (8 s to 10 s)
    EXPECT_FALSE(t > 8.0 + 1e-9 && t < 10.0 - 1e-9) << "t = " << t;
    if (i > 0) {
      EXPECT_GT(kfs[i].frame, kfs[i - 1].frame);
      restarts += kfs[i].starts_chain ? 1 : 0;
    }
  }
  EXPECT_EQ(restarts, 1);
}

TEST(SelectKeyframes, SpacingFollowsMinimumDistance) {
  const auto c = drive(7, 3.0);
  const Scenario s = generate(c);
  KeyframeSelection sel;
  sel.min_distance = 1.0;
  const auto kfs = select_keyframes(s, sel);
  ASSERT_GT(kfs.size(), 5u);
  for (std::size_t i = 1; i < kfs.size(); ++i) {
    const double d = (s.truth.poses[kfs[i].frame].translation -
                      s.truth.poses[kfs[i - 1].frame].translation)
                         .norm();
    EXPECT_GE(d, 1.0 - 1e-9);
    EXPECT_LT(d, 1.0 + 10.0 / 33.0 + 1e-9);
  }
}

TEST(PipelineConfig, Validation) {
  EXPECT_NO_THROW(PipelineConfig::defaults().validate());
  auto pc = PipelineConfig::defaults();
  pc.gating_radius_px = 0.0;
  EXPECT_EQ(code_of([&] { pc.validate(); }), ErrorCode::InvalidConfig);
  pc = PipelineConfig::defaults();
  pc.failure.min_features = 5;
  EXPECT_EQ(code_of([&] { pc.validate(); }), ErrorCode::InvalidConfig);
  pc = PipelineConfig::defaults();
  pc.verification.vote_pairs = 0;
  EXPECT_EQ(code_of([&] { pc.validate(); }), ErrorCode::InvalidConfig);
  pc = PipelineConfig::defaults();
  pc.optimizer.window_size = 1;
  EXPECT_EQ(code_of([&] { pc.validate(); }), ErrorCode::InvalidConfig);
}

TEST(GroundFromCog, LiftsByCogHeight) {
  VehicleParams v;
  v.cg_height = 0.7;
  const RigidTransform T = ground_from_cog(v);
  EXPECT_TRUE(T.rotation == Mat3::Identity());
  EXPECT_EQ(T.translation, Vec3(0, 0, 0.7));
}

}  // namespace
}  // namespace gcalib
