#include "gcalib/metrics.hpp"

#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <numeric>

namespace gcalib {
namespace {

using testing::code_of;
using testing::deg;
using testing::forward_motion;
using testing::ground_matches;
using testing::RoadCamera;

TEST(TransferError, PerfectHomographyIsZero) {
  const RoadCamera cam;
  const auto m = forward_motion(cam, 1.2, 0.02);
  std::mt19937_64 rng(1);
  const auto matches = ground_matches(cam, m, 80, rng);
  const Mat3 H = homography(m, {cam.normal(), cam.height(), 0}, cam.intrinsics);
  EXPECT_LT(metric_transfer_error(matches, H), 1e-9);
}

TEST(TransferError, UnitResidualsAverageToOne) {
  std::vector<FeatureMatch> ms;
  for (int i = 0; i < 7; ++i) {
    FeatureMatch m;
    m.p_k = {10.0 * i, 5.0 * i, i};
    m.p_k1 = {10.0 * i + 1.0, 5.0 * i, i};
    ms.push_back(m);
  }
  EXPECT_DOUBLE_EQ(metric_transfer_error(ms, Mat3::Identity()), 1.0);
  EXPECT_EQ(code_of([] { metric_transfer_error({}, Mat3::Identity()); }), ErrorCode::EmptySet);
}

TEST(TransferError, NoisySetMatchesHandSum) {
  const RoadCamera cam;
  const auto m = forward_motion(cam, 1.0);
  std::mt19937_64 rng(2);
  const auto matches = ground_matches(cam, m, 50, rng, 0.7);
  const Mat3 H = homography(m, {cam.normal(), cam.height(), 0}, cam.intrinsics);
  double sum = 0.0;
  for (const auto& fm : matches) {
    const Vec3 y = H * Vec3(fm.p_k.u, fm.p_k.v, 1.0);
    sum += std::hypot(fm.p_k1.u - y.x() / y.z(), fm.p_k1.v - y.y() / y.z());
  }
  EXPECT_NEAR(metric_transfer_error(matches, H), sum / 50.0, 1e-12);
}

// ---------------------------------------------------------------------------

TEST(ResidualError, RectifiedPairClosedForm) {
  // second camera 1 m to the side of an identical front camera: epipolar lines are image rows
  const CameraIntrinsics K = testing::test_camera();
  const RigidTransform front{Mat3::Identity(), Vec3::Zero()};
  const RigidTransform second{Mat3::Identity(), Vec3(1.0, 0.0, 0.0)};
  CrossMatch m;
  m.p = {100.0, 200.0, 0};
  m.q = {50.0, 203.0, 0};
  const std::vector<CrossMatch> one{m};
  // symmetric squared distance: 3^2 in each image
  EXPECT_NEAR(metric_residual_error(one, front, second, K, K), 18.0, 1e-9);
}

TEST(ResidualError, ZeroWithTrueExtrinsicsAndGrowsWithYaw) {
  auto c = ScenarioConfig{};
  c.seed = 4;
  c.duration = 1.0;
  c.second_camera = ScenarioConfig::default_second_camera();
  const Scenario s = generate(c);
  std::vector<CrossMatch> all;
  for (const auto& kf : s.keyframes) all.insert(all.end(), kf.cross_matches.begin(), kf.cross_matches.end());
  ASSERT_GT(all.size(), 20u);
  const RigidTransform front = s.truth.extrinsics.front();
  const double at_truth =
      metric_residual_error(all, front, *s.truth.second_extrinsic, s.intrinsics, s.second_intrinsics);
  EXPECT_LT(at_truth, 1e-10);
  RigidTransform yawed = front;
  yawed.rotation = from_euler_zyx(Vec3(0, 0, deg(0.5))) * front.rotation;
  EXPECT_GT(metric_residual_error(all, yawed, *s.truth.second_extrinsic, s.intrinsics,
                                  s.second_intrinsics),
            at_truth);
}

TEST(ResidualError, FundamentalAnnihilatesTrueCorrespondences) {
  const CameraIntrinsics K = testing::test_camera();
  const RigidTransform front = ScenarioConfig::default_extrinsic();
  const auto sc = ScenarioConfig::default_second_camera();
  const Mat3 F = cross_camera_fundamental(front, sc.ground_from_camera, K, sc.intrinsics);
  const RigidTransform f_from_g = invert(front), q_from_g = invert(sc.ground_from_camera);
  for (const Vec3& X : {Vec3(6, 3, 0), Vec3(8, 5, 1), Vec3(5, 2, 0.5)}) {
    const Vec3 p = K.K() * f_from_g.apply(X);
    const Vec3 q = sc.intrinsics.K() * q_from_g.apply(X);
    EXPECT_NEAR(q.dot(F * p) / (q.norm() * p.norm()), 0.0, 1e-12);
  }
}

TEST(ResidualError, Errors) {
  const CameraIntrinsics K = testing::test_camera();
  const RigidTransform T;
  const std::vector<CrossMatch> one(1);
  EXPECT_EQ(code_of([&] { metric_residual_error(one, T, T, K, std::nullopt); }),
            ErrorCode::NoSecondCamera);
  EXPECT_EQ(code_of([&] { metric_residual_error({}, T, T, K, K); }), ErrorCode::EmptyMatches);
}

// ---------------------------------------------------------------------------

ScenarioTruth flat_truth() {
  ScenarioTruth t;
  t.nominal_extrinsic = ScenarioConfig::default_extrinsic();
  return t;
}

TEST(CompareToTruth, ExactReportsGiveZero) {
  const ScenarioTruth truth = flat_truth();
  const std::vector<ReportedXi> reports{{1.0, xi_from_extrinsic(truth.nominal_extrinsic)},
                                        {2.0, xi_from_extrinsic(truth.nominal_extrinsic)}};
  const auto c = compare_to_truth(reports, truth);
  EXPECT_EQ(c.events, 2);
  EXPECT_EQ(c.delta_roll_deg, 0.0);
  EXPECT_EQ(c.delta_pitch_deg, 0.0);
  EXPECT_EQ(c.delta_yaw_deg, 0.0);
  EXPECT_EQ(c.delta_height_cm, 0.0);
}

TEST(CompareToTruth, ConstantRollBias) {
  const ScenarioTruth truth = flat_truth();
  Vec6 xi = xi_from_extrinsic(truth.nominal_extrinsic);
  xi(0) += deg(0.2);
  const std::vector<ReportedXi> reports{{0.5, xi}, {3.0, xi}, {7.0, xi}};
  const auto c = compare_to_truth(reports, truth);
  EXPECT_NEAR(c.delta_roll_deg, 0.2, 1e-12);
  EXPECT_NEAR(c.delta_pitch_deg, 0.0, 1e-12);
  EXPECT_NEAR(c.delta_yaw_deg, 0.0, 1e-12);
  EXPECT_NEAR(c.delta_height_cm, 0.0, 1e-12);
}

TEST(CompareToTruth, UsesTruthActiveAtReportTime) {
  ScenarioTruth truth = flat_truth();
  truth.schedule = {{10.0, 10.0, Vec3::Zero(), 0.08}};
  const Vec6 xi = xi_from_extrinsic(truth.nominal_extrinsic);
  // before the ramp exact, at the ramp midpoint 4 cm off
  const std::vector<ReportedXi> before{{5.0, xi}};
  const std::vector<ReportedXi> mid{{15.0, xi}};
  EXPECT_NEAR(compare_to_truth(before, truth).delta_height_cm, 0.0, 1e-12);
  EXPECT_NEAR(compare_to_truth(mid, truth).delta_height_cm, 4.0, 1e-10);
}

TEST(CompareToTruthProperty, MatchesIndependentRecomputation) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0.0, 1.0);
  ScenarioTruth truth = flat_truth();
  truth.schedule = {{4.0, 0.0, Vec3(0, deg(1.0), 0), 0.0}};
  std::vector<ReportedXi> reports;
  for (int i = 0; i < 40; ++i) {
    const double t = 0.2 * i;
    Vec6 xi = xi_from_extrinsic(apply_extrinsic_schedule(truth, t));
    for (int j = 0; j < 6; ++j) xi(j) += (j < 3 ? deg(0.1) : 0.01) * n(rng);
    reports.push_back({t, xi});
  }
  double r = 0, p = 0, y = 0, h = 0;
  for (const auto& rep : reports) {
    const Vec6 t = xi_from_extrinsic(apply_extrinsic_schedule(truth, rep.timestamp));
    r += std::abs(rep.xi(0) - t(0));
    p += std::abs(rep.xi(1) - t(1));
    y += std::abs(rep.xi(2) - t(2));
    h += std::abs(rep.xi(5) - t(5));
  }
  const auto c = compare_to_truth(reports, truth);
  const double k = 180.0 / M_PI / 40.0;
  EXPECT_NEAR(c.delta_roll_deg, r * k, 1e-12);
  EXPECT_NEAR(c.delta_pitch_deg, p * k, 1e-12);
  EXPECT_NEAR(c.delta_yaw_deg, y * k, 1e-12);
  EXPECT_NEAR(c.delta_height_cm, h * 100.0 / 40.0, 1e-12);
}

TEST(CompareToTruth, EmptyStream) {
  EXPECT_EQ(compare_to_truth({}, flat_truth()).events, 0);
}

// ---------------------------------------------------------------------------

TEST(Histogram, BinsAndOverflow) {
  const std::vector<double> v{0.0, 0.05, 0.1, 0.15, 0.35, 7.0, -1.0,
                              std::numeric_limits<double>::quiet_NaN()};
  const Histogram h = make_histogram(v, 0.1, 4);
  EXPECT_EQ(h.counts, (std::vector<long>{3, 2, 0, 2}));
  EXPECT_EQ(h.total, 7);
}

TEST(HistogramProperty, CountsIntegrateToSamples) {
  std::mt19937_64 rng(4);
  std::exponential_distribution<double> e(2.0);
  for (int bins : {1, 5, 30}) {
    std::vector<double> v(500);
    for (auto& x : v) x = e(rng);
    const Histogram h = make_histogram(v, 0.05, bins);
    EXPECT_EQ(std::accumulate(h.counts.begin(), h.counts.end(), 0L), h.total);
    EXPECT_EQ(h.total, 500);
  }
  EXPECT_EQ(code_of([] { make_histogram({}, 0.0, 3); }), ErrorCode::InvalidConfig);
  EXPECT_EQ(code_of([] { make_histogram({}, 0.1, 0); }), ErrorCode::InvalidConfig);
}

}  // namespace
}  // namespace gcalib
