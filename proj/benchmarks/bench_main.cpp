#include <benchmark/benchmark.h>

#include "mtnet/metrics.hpp"
#include "mtnet/networks.hpp"
#include "mtnet/optimizer.hpp"

using namespace mtnet;

namespace {

void BM_Conv3dForward(benchmark::State& state) {
  std::mt19937_64 rng(1);
  auto x = randn<float>({1, 8, 32, 32, 16}, rng);
  auto w = randn<float>({16, 8, 3, 3, 3}, rng, 0.1f, true);
  auto b = zeros<float>({16}, true);
  for (auto _ : state) {
    auto y = conv3d(x, w, b, {1, 1, 1}, {1, 1, 1});
    benchmark::DoNotOptimize(y->data.data());
  }
}
BENCHMARK(BM_Conv3dForward)->Unit(benchmark::kMillisecond);

void BM_Conv3dBackward(benchmark::State& state) {
  std::mt19937_64 rng(1);
  auto x = randn<float>({1, 8, 32, 32, 16}, rng, 1.f, true);
  auto w = randn<float>({16, 8, 3, 3, 3}, rng, 0.1f, true);
  auto b = zeros<float>({16}, true);
  for (auto _ : state) {
    auto loss = mean_all(conv3d(x, w, b, {1, 1, 1}, {1, 1, 1}));
    backward(loss);
    benchmark::DoNotOptimize(w->grad.data());
  }
}
BENCHMARK(BM_Conv3dBackward)->Unit(benchmark::kMillisecond);

void BM_NAdamStep(benchmark::State& state) {
  std::mt19937_64 rng(1);
  NamedParams<float> params;
  for (int i = 0; i < 8; ++i) {
    auto p = randn<float>({64, 64}, rng, 0.1f, true);
    p->ensure_grad();
    for (auto& g : p->grad) g = 1e-3f;
    params.emplace_back("p" + std::to_string(i), p);
  }
  NAdam<float> opt(params);
  for (auto _ : state) {
    opt.step(params);
    benchmark::DoNotOptimize(params[0].second->data.data());
  }
}
BENCHMARK(BM_NAdamStep)->Unit(benchmark::kMicrosecond);

void BM_SsimGlobal(benchmark::State& state) {
  std::mt19937_64 rng(1);
  std::vector<float> x(32 * 32 * 16), y(x.size());
  std::uniform_real_distribution<float> d(0.f, 50.f);
  for (std::size_t i = 0; i < x.size(); ++i) {
    x[i] = d(rng);
    y[i] = x[i] + d(rng) * 0.05f;
  }
  for (auto _ : state) {
    double s = metrics::ssim_global<float>(x, y, 50.0);
    benchmark::DoNotOptimize(s);
  }
}
BENCHMARK(BM_SsimGlobal)->Unit(benchmark::kMicrosecond);

}  // namespace

BENCHMARK_MAIN();
