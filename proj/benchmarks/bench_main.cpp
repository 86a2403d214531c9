#include <benchmark/benchmark.h>

#include "tmaseg/evaluation.hpp"
#include "tmaseg/models.hpp"
#include "tmaseg/ops.hpp"
#include "tmaseg/random.hpp"
#include "tmaseg/tiling.hpp"

using namespace tmaseg;

namespace {

Tensor noise(const Shape& shape, std::uint64_t seed) {
  Rng rng(seed);
  Tensor t(shape);
  for (auto& v : t.data()) v = static_cast<Real>(rng.normal());
  return t;
}

// Args: spatial size, channels in = out.
void BM_Conv3x3Forward(benchmark::State& state) {
  const int s = static_cast<int>(state.range(0)), ch = static_cast<int>(state.range(1));
  const Tensor x = noise({4, s, s, ch}, 1), w = noise({3, 3, ch, ch}, 2);
  for (auto _ : state) {
    ad::Graph g;
    benchmark::DoNotOptimize(ad::conv2d(g.constant(x), g.constant(w), {}).value().data().data());
  }
  state.SetItemsProcessed(state.iterations() * 4LL * s * s * 9 * ch * ch);
}
BENCHMARK(BM_Conv3x3Forward)->Args({64, 16})->Args({32, 64})->Unit(benchmark::kMillisecond);

void BM_Conv3x3Backward(benchmark::State& state) {
  const int s = static_cast<int>(state.range(0)), ch = static_cast<int>(state.range(1));
  const Tensor x = noise({4, s, s, ch}, 1), w = noise({3, 3, ch, ch}, 2);
  for (auto _ : state) {
    ad::Graph g;
    ad::Var y = ad::conv2d(g.input(x), g.input(w), {});
    g.backward(ad::weighted_sum(y, Tensor(y.shape(), Real(1))));
    benchmark::DoNotOptimize(g.grad(y).data().data());
  }
}
BENCHMARK(BM_Conv3x3Backward)->Args({64, 16})->Args({32, 64})->Unit(benchmark::kMillisecond);

void BM_UnetCompactTrainStep(benchmark::State& state) {
  Network net = build_model(preset("unet-compact", 1));
  const Tensor x = noise({4, 64, 64, 3}, 3);
  const Tensor target({4, 64, 64, 1}, Real(1)), weight({4, 64, 64, 1}, Real(1));
  for (auto _ : state) {
    net.params().zero_grad();
    ad::Graph g;
    g.backward(ad::bce_loss(net.forward(g, g.constant(x), ad::Mode::Train), target, weight));
    ad::adam_step(net.params(), {});
  }
}
BENCHMARK(BM_UnetCompactTrainStep)->Unit(benchmark::kMillisecond);

void BM_PredictCore(benchmark::State& state) {
  const Network net = build_model(preset("unet-compact", 1));
  Rng rng(4);
  ImageRGB core(512, 512);
  for (auto& v : core.data()) v = static_cast<std::uint8_t>(rng.below(256));
  for (auto _ : state) benchmark::DoNotOptimize(predict_core(net, core, 256, 128).data().data());
}
BENCHMARK(BM_PredictCore)->Unit(benchmark::kMillisecond);

void BM_Stitch(benchmark::State& state) {
  const PatchGrid grid = plan_grid(1000, 1000, 512, 256);
  const std::vector<std::vector<float>> maps(grid.origins.size(), std::vector<float>(512 * 512, 0.25f));
  for (auto _ : state) benchmark::DoNotOptimize(stitch(grid, maps).data().data());
}
BENCHMARK(BM_Stitch)->Unit(benchmark::kMillisecond);

void BM_ThresholdSweep(benchmark::State& state) {
  Rng rng(5);
  std::vector<ScoreHistogram> cores;
  for (int c = 0; c < 8; ++c) {
    std::vector<float> p(512 * 512);
    BinaryTarget t;
    t.height = t.width = 512;
    for (auto& v : p) {
      v = static_cast<float>(rng.uniform());
      t.target.push_back(static_cast<std::int8_t>(rng.below(2)));
    }
    cores.push_back(score_histogram("c" + std::to_string(c), Heatmap(512, 512, p), t));
  }
  for (auto _ : state) benchmark::DoNotOptimize(sweep_threshold(cores).best_threshold);
}
BENCHMARK(BM_ThresholdSweep);

void BM_ScoreHistogram(benchmark::State& state) {
  Rng rng(6);
  std::vector<float> p(512 * 512);
  BinaryTarget t;
  t.height = t.width = 512;
  for (auto& v : p) {
    v = static_cast<float>(rng.uniform());
    t.target.push_back(static_cast<std::int8_t>(rng.below(3)) - 1);
  }
  const Heatmap h(512, 512, p);
  for (auto _ : state) benchmark::DoNotOptimize(score_histogram("c", h, t).cancer[0]);
}
BENCHMARK(BM_ScoreHistogram)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
