#include "gcalib/kernels.hpp"
#include "gcalib/simulator.hpp"

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

namespace {

using namespace gcalib;

// Window of `pairs` forward-driving pairs with `per_pair` noisy road matches each.
struct Window {
  CameraIntrinsics K = ScenarioConfig::default_intrinsics();
  RigidTransform g_from_c = ScenarioConfig::default_extrinsic();
  std::vector<Mat3> rotations;
  std::vector<Vec3> translations;
  std::vector<kernels::PairFeatures> features;
  std::vector<PixelPoint> first_pixels;
  RelativeMotion first_motion{Mat3::Identity(), Vec3::Zero(), MotionFrame::Camera};

  Window(int pairs, int per_pair) {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> ux(4.0, 25.0), uy(-6.0, 6.0);
    std::normal_distribution<double> n(0.0, 0.5);
    const RigidTransform c_from_g = invert(g_from_c);
    for (int k = 0; k < pairs; ++k) {
      const RigidTransform step = invert(RigidTransform{Mat3::Identity(), Vec3(0.8 + 0.01 * k, 0, 0)});
      const RigidTransform m = compose(c_from_g, compose(step, g_from_c));
      kernels::PairFeatures f;
      while (static_cast<int>(f.rays.size()) < per_pair) {
        const Vec3 Xc = c_from_g.apply(Vec3(ux(rng), uy(rng), 0.0));
        const Vec3 Xc1 = m.apply(Xc);
        if (Xc.z() < 0.5 || Xc1.z() < 0.5) continue;
        const PixelPoint a = project(Xc, K), b = project(Xc1, K);
        if (!K.contains(a.u, a.v) || !K.contains(b.u, b.v)) continue;
        f.rays.push_back(K.K_inv() * Vec3(a.u + n(rng), a.v + n(rng), 1.0));
        f.observed.push_back(Vec2(b.u + n(rng), b.v + n(rng)));
        if (k == 0) first_pixels.push_back(a);
      }
      rotations.push_back(m.rotation);
      translations.push_back(m.translation);
      features.push_back(std::move(f));
      if (k == 0) first_motion = {m.rotation, m.translation, MotionFrame::Camera};
    }
  }

  Vec3 normal() const { return g_from_c.rotation.row(2).transpose(); }

  kernels::HomographyProblem problem() const {
    kernels::HomographyProblem p;
    p.intrinsics = K;
    p.rotations = rotations;
    p.translations = translations;
    p.features = features;
    p.normal = normal();
    p.normal_basis = tangent_basis(p.normal);
    p.height = g_from_c.translation.z();
    p.sigma_px = 0.5;
    p.huber_delta_px = 1.345 * 0.5;
    return p;
  }
};

const Window& window(int per_pair) {
  static const Window w200(10, 200), w2000(10, 2000);
  return per_pair <= 200 ? w200 : w2000;
}

template <auto Fn>
void BM_Assemble(benchmark::State& state) {
  const auto p = window(static_cast<int>(state.range(0))).problem();
  for (auto _ : state) benchmark::DoNotOptimize(Fn(p));
  state.SetItemsProcessed(state.iterations() * 10 * state.range(0));
}

template <auto Fn>
void BM_Cost(benchmark::State& state) {
  const auto p = window(static_cast<int>(state.range(0))).problem();
  for (auto _ : state) benchmark::DoNotOptimize(Fn(p));
  state.SetItemsProcessed(state.iterations() * 10 * state.range(0));
}

template <auto Fn>
void BM_Predict(benchmark::State& state) {
  const Window& w = window(static_cast<int>(state.range(0)));
  for (auto _ : state)
    benchmark::DoNotOptimize(Fn(w.first_pixels, w.first_motion, w.normal(), w.g_from_c.translation.z(), w.K));
  state.SetItemsProcessed(state.iterations() * static_cast<long>(w.first_pixels.size()));
}

BENCHMARK(BM_Assemble<&kernels::serial::assemble>)->Name("assemble/serial")->Arg(200)->Arg(2000);
BENCHMARK(BM_Assemble<&kernels::omp::assemble>)->Name("assemble/omp")->Arg(200)->Arg(2000);
BENCHMARK(BM_Cost<&kernels::serial::cost>)->Name("cost/serial")->Arg(200)->Arg(2000);
BENCHMARK(BM_Cost<&kernels::omp::cost>)->Name("cost/omp")->Arg(200)->Arg(2000);
BENCHMARK(BM_Predict<&kernels::serial::predict_batch>)->Name("predict_batch/serial")->Arg(200)->Arg(2000);
BENCHMARK(BM_Predict<&kernels::omp::predict_batch>)->Name("predict_batch/omp")->Arg(200)->Arg(2000);

}  // namespace

BENCHMARK_MAIN();
