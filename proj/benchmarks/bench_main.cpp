#include <benchmark/benchmark.h>

#include <random>

#include "seffsal/metrics.hpp"
#include "seffsal/trainer.hpp"

using namespace seffsal;

namespace {

Tensor noise(const Shape& s, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Tensor t(s);
  for (auto& v : t.values()) v = u(rng);
  return t;
}

NetConfig micro() {
  NetConfig c;
  c.backbone.stage_channels = {16, 32, 64, 128};
  c.input_size = 128;
  return c;
}

void BM_Conv3x3(benchmark::State& state) {
  const int c = static_cast<int>(state.range(0));
  const int hw = static_cast<int>(state.range(1));
  const Var x(noise({2, c, hw, hw}, 1));
  const Var w(noise({c, c, 3, 3}, 2));
  NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(ops::conv2d(x, w, Var(), {1, 1, 1, 1}));
}
BENCHMARK(BM_Conv3x3)->Args({16, 88})->Args({64, 22})->Unit(benchmark::kMillisecond);

void BM_SeffForward(benchmark::State& state) {
  const int c = static_cast<int>(state.range(0));
  const int hw = static_cast<int>(state.range(1));
  SeffBlock block({c, 4}, 1);
  const Var f1(noise({2, c, hw, hw}, 3)), f2(noise({2, c, hw, hw}, 4));
  const Var g(noise({2, 4, hw, hw}, 5));
  NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(block.fuse(f1, f2, g, Mode::eval));
}
BENCHMARK(BM_SeffForward)->Args({32, 44})->Args({64, 11})->Unit(benchmark::kMillisecond);

void BM_SeffBackward(benchmark::State& state) {
  const int c = static_cast<int>(state.range(0));
  const int hw = static_cast<int>(state.range(1));
  SeffBlock block({c, 4}, 1);
  const Var f1(noise({2, c, hw, hw}, 3), true), f2(noise({2, c, hw, hw}, 4), true);
  const Var g(noise({2, 4, hw, hw}, 5));
  for (auto _ : state) backward(ops::sum(block.fuse(f1, f2, g, Mode::train)));
}
BENCHMARK(BM_SeffBackward)->Args({32, 44})->Unit(benchmark::kMillisecond);

void BM_TrainStep(benchmark::State& state) {
  const SynthSet set = synth_generate(1, 2, {128, 128});
  const NetConfig cfg = micro();
  MsNet net(cfg, 1);
  Adam adam(net.named_parameters());
  const Batch batch = collate(set.samples, {0, 1}, cfg.variant, cfg.input_size);
  for (auto _ : state) {
    adam.zero_grad();
    backward(total_loss(net.forward(batch.inputs, Mode::train).bundle, batch.gt).total);
    adam.step(1e-4);
  }
}
BENCHMARK(BM_TrainStep)->Unit(benchmark::kMillisecond);

void BM_Predict(benchmark::State& state) {
  const SynthSet set = synth_generate(1, 1, {128, 128});
  const MsNet net(micro(), 1);
  for (auto _ : state) {
    benchmark::DoNotOptimize(predict(net, set.samples[0].rgb, set.samples[0].depth));
  }
}
BENCHMARK(BM_Predict)->Unit(benchmark::kMillisecond);

void BM_ImageMetrics(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  const metrics::GrayMap pred = metrics::GrayMap::from_tensor(noise({1, 1, n, n}, 6));
  Tensor g({1, 1, n, n});
  for (int y = n / 4; y < 3 * n / 4; ++y)
    for (int x = n / 3; x < 2 * n / 3; ++x) g.at(0, 0, y, x) = 1.0;
  const metrics::GrayMap gt = metrics::GrayMap::from_tensor(g);
  for (auto _ : state) benchmark::DoNotOptimize(metrics::evaluate_image("b", pred, gt));
}
BENCHMARK(BM_ImageMetrics)->Arg(352)->Unit(benchmark::kMillisecond);

}  // namespace
