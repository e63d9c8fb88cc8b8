#pragma once

#include "gcalib/geom.hpp"
#include "gcalib/ground.hpp"
#include "gcalib/optimizer.hpp"
#include "gcalib/simulator.hpp"

#include <optional>
#include <span>
#include <vector>

namespace gcalib {

/// Mean transfer residual norm over one pair's fine set.
double metric_transfer_error(std::span<const FeatureMatch> matches, const Mat3& H);

/// Mean symmetric squared point-to-epipolar-line distance between the front camera and a
/// second camera, both given as ground_from_camera extrinsics.
double metric_residual_error(std::span<const CrossMatch> matches,
                             const RigidTransform& front_extrinsic,
                             const RigidTransform& second_extrinsic,
                             const CameraIntrinsics& front_intrinsics,
                             const std::optional<CameraIntrinsics>& second_intrinsics);

/// F with q^T F p = 0 for front pixel p and second-camera pixel q.
Mat3 cross_camera_fundamental(const RigidTransform& front_extrinsic,
                              const RigidTransform& second_extrinsic,
                              const CameraIntrinsics& front_intrinsics,
                              const CameraIntrinsics& second_intrinsics);

struct ReportedXi {
  double timestamp = 0.0;
  Vec6 xi = Vec6::Zero();
};

struct TruthComparison {
  double delta_roll_deg = 0.0;
  double delta_pitch_deg = 0.0;
  double delta_yaw_deg = 0.0;
  double delta_height_cm = 0.0;
  int events = 0;
};

/// Mean absolute per-axis differences against the truth active at each report time.
TruthComparison compare_to_truth(std::span<const ReportedXi> reports, const ScenarioTruth& truth);

struct Histogram {
  double bin_width = 0.1;
  std::vector<long> counts;  // last bin collects everything >= (bins - 1) * bin_width
  long total = 0;

  friend bool operator==(const Histogram&, const Histogram&) = default;
};

Histogram make_histogram(std::span<const double> values, double bin_width, int bins);

}  // namespace gcalib
