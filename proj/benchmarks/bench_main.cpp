#include <benchmark/benchmark.h>

#include <cmath>
#include <random>

#include "featsplat/gaussian_set.hpp"
#include "featsplat/metrics.hpp"
#include "featsplat/rasterizer.hpp"
#include "featsplat/trainer.hpp"

using namespace featsplat;

namespace {

CameraView camera(int size) {
  CameraView v;
  v.intrinsics.camera_id = 1;
  v.intrinsics.model = CameraModel::Pinhole;
  v.intrinsics.width = v.intrinsics.height = size;
  v.intrinsics.fx = v.intrinsics.fy = size;
  v.intrinsics.cx = v.intrinsics.cy = size / 2.0;
  v.pose.camera_id = 1;
  v.pose.image_id = 1;
  v.pose.image_name = "bench.png";
  return v;
}

// Gaussians scattered in front of the camera at depths 2..6.
GaussianSet scene(std::size_t n, int feature_dim) {
  std::mt19937_64 rng(42);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  GaussianSet s(n, feature_dim);
  for (std::size_t i = 0; i < n; ++i) {
    const double z = 2 + 4 * u(rng);
    s.position(i) = Eigen::Vector3d((u(rng) - 0.5) * z, (u(rng) - 0.5) * z, z);
    s.log_scale(i).setConstant(std::log(0.02 + 0.08 * u(rng)));
    s.rotation(i) = Eigen::Vector4d(1, u(rng) - 0.5, u(rng) - 0.5, u(rng) - 0.5);
    s.opacity_logits[i] = logit(0.2 + 0.7 * u(rng));
    for (int c = 0; c < 3; ++c)
      s.sh(i, c, 0) = u(rng) - 0.5;
    for (auto &f : s.feature(i))
      f = u(rng) - 0.5;
  }
  return s;
}

Image noise_image(int size, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  Image img(size, size, 3);
  for (auto &v : img.data)
    v = u(rng);
  return img;
}

void BM_RenderForward(benchmark::State &state) {
  const auto set = scene(static_cast<std::size_t>(state.range(0)), 16);
  const auto cam = camera(128);
  for (auto _ : state)
    benchmark::DoNotOptimize(render<float>(set, cam));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_RenderForward)->Arg(1000)->Arg(10000)->Unit(benchmark::kMillisecond);

void BM_RenderBackward(benchmark::State &state) {
  const auto set = scene(static_cast<std::size_t>(state.range(0)), 16);
  const auto cam = camera(128);
  const auto out = render<float>(set, cam);
  RenderGrads<float> up;
  up.rgb.assign(out.rgb.size(), 1e-3f);
  up.feature.assign(out.feature.size(), 1e-3f);
  for (auto _ : state)
    benchmark::DoNotOptimize(render_backward<float>(set, cam, {}, up));
}
BENCHMARK(BM_RenderBackward)->Arg(1000)->Arg(10000)->Unit(benchmark::kMillisecond);

void BM_SsimWithGrad(benchmark::State &state) {
  const int size = static_cast<int>(state.range(0));
  const auto a = noise_image(size, 1), b = noise_image(size, 2);
  std::vector<double> grad;
  for (auto _ : state)
    benchmark::DoNotOptimize(metrics::ssim_with_grad(a, b, grad));
}
BENCHMARK(BM_SsimWithGrad)->Arg(64)->Arg(256)->Unit(benchmark::kMillisecond);

void BM_TrainStep(benchmark::State &state) {
  auto set = scene(static_cast<std::size_t>(state.range(0)), 16);
  TrainingView view{camera(64), noise_image(64, 3), FeatureMap(64, 64, 16)};
  TrainConfig cfg;
  auto opt = OptimizerState::for_set(set);
  int it = 0;
  for (auto _ : state)
    benchmark::DoNotOptimize(train_step(set, view, cfg, opt, it++, 5.0));
}
BENCHMARK(BM_TrainStep)->Arg(1000)->Arg(5000)->Unit(benchmark::kMillisecond);

} // namespace
BENCHMARK_MAIN();
