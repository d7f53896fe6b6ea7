#include <benchmark/benchmark.h>

#include "asc/attention.hpp"
#include "asc/models.hpp"
#include "asc/nn.hpp"
#include "asc/ops.hpp"
#include "asc/random.hpp"

using namespace asc;

namespace {

Tensor randn(Shape shape, Rng& rng, bool requires_grad = false) {
  Tensor t = Tensor::zeros(std::move(shape), requires_grad);
  rng.fill_normal(t.mutable_data(), 0.0, 1.0);
  return t;
}

AscParams asc_params(std::int64_t c, bool p4, Rng& rng) {
  const Shape w = p4 ? Shape{c, c, 4, 1, 1} : Shape{c, c};
  AscParams p;
  p.heads = 8;
  p.wq = randn(w, rng, true);
  p.wk = randn(w, rng, true);
  p.wv = randn(w, rng, true);
  p.wo = randn(w, rng, true);
  p.aq = {randn(p4 ? Shape{c, 4} : Shape{c}, rng, true), randn({c}, rng, true)};
  const Shape window = p4 ? Shape{c, 4, 5, 5} : Shape{c, 5, 5};
  p.ak = {randn(window, rng, true), randn({c, 5, 5}, rng, true)};
  p.av = {randn(window, rng, true), randn({c, 5, 5}, rng, true)};
  return p;
}

void BM_Conv3x3(benchmark::State& state) {
  Rng rng(1);
  const auto c = state.range(0);
  const Tensor f = randn({8, c, 32, 32}, rng);
  const ConvFilter filter{randn({c, c, 3, 3}, rng), {}, 1, Padding::Zero};
  for (auto _ : state) benchmark::DoNotOptimize(conv2d(f, filter));
}
BENCHMARK(BM_Conv3x3)->Arg(16)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_GroupConv3x3(benchmark::State& state) {
  Rng rng(2);
  const auto c = state.range(0);
  const Tensor f = randn({8, c, 4, 32, 32}, rng);
  const GroupConvFilter filter{randn({c, c, 4, 3, 3}, rng), {}, 1, Padding::Zero};
  for (auto _ : state) benchmark::DoNotOptimize(group_conv(f, filter));
}
BENCHMARK(BM_GroupConv3x3)->Arg(8)->Arg(32)->Unit(benchmark::kMillisecond);

void BM_AscForward(benchmark::State& state) {
  Rng rng(3);
  const Tensor f = randn({8, 16, 32, 32}, rng);
  const AscParams p = asc_params(16, false, rng);
  for (auto _ : state) benchmark::DoNotOptimize(asc_forward(f, p, 5, Padding::Zero));
}
BENCHMARK(BM_AscForward)->Unit(benchmark::kMillisecond);

void BM_AscForwardBackward(benchmark::State& state) {
  Rng rng(4);
  const Tensor f = randn({8, 16, 32, 32}, rng, true);
  const AscParams p = asc_params(16, false, rng);
  for (auto _ : state) backward(sum_all(asc_forward(f, p, 5, Padding::Zero)));
}
BENCHMARK(BM_AscForwardBackward)->Unit(benchmark::kMillisecond);

void BM_P4AscForward(benchmark::State& state) {
  Rng rng(5);
  const Tensor f = randn({8, 8, 4, 32, 32}, rng);
  const AscParams p = asc_params(8, true, rng);
  for (auto _ : state) benchmark::DoNotOptimize(p4_asc_forward(f, p, 5, Padding::Zero));
}
BENCHMARK(BM_P4AscForward)->Unit(benchmark::kMillisecond);

void BM_P4AscForwardBackward(benchmark::State& state) {
  Rng rng(6);
  const Tensor f = randn({8, 8, 4, 32, 32}, rng, true);
  const AscParams p = asc_params(8, true, rng);
  for (auto _ : state) backward(sum_all(p4_asc_forward(f, p, 5, Padding::Zero)));
}
BENCHMARK(BM_P4AscForwardBackward)->Unit(benchmark::kMillisecond);

void BM_TrainStep(benchmark::State& state, const char* variant) {
  Model model = build_model({variant, 10, 0, 7});
  Rng rng(7);
  const Tensor images = randn({16, 3, 32, 32}, rng);
  const std::vector<int> labels(16, 3);
  for (auto _ : state) {
    const Tensor loss = cross_entropy(model.forward(images, Mode::Train), labels);
    backward(loss);
    for (const auto& p : model.parameters()) Tensor(p.tensor).zero_grad();
  }
  state.SetItemsProcessed(state.iterations() * 16);
}
BENCHMARK_CAPTURE(BM_TrainStep, resnet29, "resnet29")->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(BM_TrainStep, resnet29_asc, "resnet29_asc")->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(BM_TrainStep, p4resnet29, "p4resnet29")->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(BM_TrainStep, p4resnet29_asc, "p4resnet29_asc")->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
