#include <random>

#include <benchmark/benchmark.h>

#include "autoseg/kernels.hpp"
#include "autoseg/metrics.hpp"
#include "autoseg/network.hpp"
#include "autoseg/reference_kernels.hpp"

using namespace autoseg;

namespace {

Tensorf random_tensor(Shape s, uint64_t seed) {
  Tensorf t(std::move(s));
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> n(0.0f, 1.0f);
  for (auto& v : t.span()) v = n(rng);
  return t;
}

void BM_ConvForward(benchmark::State& state) {
  const int64_t c = state.range(0), n = state.range(1);
  const Tensorf x = random_tensor({1, c, n, n, n}, 1);
  const Tensorf w = random_tensor({c, c, 3, 3, 3}, 2);
  Tensorf y;
  for (auto _ : state) {
    kernels::conv3d_forward<float>(x, w, nullptr, {}, y);
    benchmark::DoNotOptimize(y.data());
  }
  state.SetItemsProcessed(state.iterations() * c * c * 27 * n * n * n);
}

void BM_ConvForwardReference(benchmark::State& state) {
  const int64_t c = state.range(0), n = state.range(1);
  const Tensorf x = random_tensor({1, c, n, n, n}, 1);
  const Tensorf w = random_tensor({c, c, 3, 3, 3}, 2);
  Tensorf y;
  for (auto _ : state) {
    reference::conv3d_forward<float>(x, w, nullptr, {}, y);
    benchmark::DoNotOptimize(y.data());
  }
  state.SetItemsProcessed(state.iterations() * c * c * 27 * n * n * n);
}

void BM_ConvBackward(benchmark::State& state) {
  const int64_t c = state.range(0), n = state.range(1);
  const Tensorf x = random_tensor({1, c, n, n, n}, 1);
  const Tensorf w = random_tensor({c, c, 3, 3, 3}, 2);
  const Tensorf dy = random_tensor({1, c, n, n, n}, 3);
  Tensorf dx, dw(w.shape());
  for (auto _ : state) {
    kernels::conv3d_backward<float>(x, w, dy, {}, &dx, dw, nullptr);
    benchmark::DoNotOptimize(dx.data());
  }
}

void BM_ConvBackwardReference(benchmark::State& state) {
  const int64_t c = state.range(0), n = state.range(1);
  const Tensorf x = random_tensor({1, c, n, n, n}, 1);
  const Tensorf w = random_tensor({c, c, 3, 3, 3}, 2);
  const Tensorf dy = random_tensor({1, c, n, n, n}, 3);
  Tensorf dx, dw(w.shape());
  for (auto _ : state) {
    reference::conv3d_backward<float>(x, w, dy, {}, &dx, dw, nullptr);
    benchmark::DoNotOptimize(dx.data());
  }
}

void BM_Upsample(benchmark::State& state) {
  const int64_t n = state.range(0);
  const Tensorf x = random_tensor({1, 16, n, n, n}, 4);
  Tensorf y;
  for (auto _ : state) {
    kernels::upsample2x_forward(x, y);
    benchmark::DoNotOptimize(y.data());
  }
}

void BM_UpsampleReference(benchmark::State& state) {
  const int64_t n = state.range(0);
  const Tensorf x = random_tensor({1, 16, n, n, n}, 4);
  Tensorf y;
  for (auto _ : state) {
    reference::upsample2x_forward(x, y);
    benchmark::DoNotOptimize(y.data());
  }
}

Mask random_blob(int64_t n, uint64_t seed) {
  Mask m({n, n, n}, 0);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.3, 0.7);
  const double cz = u(rng) * n, cy = u(rng) * n, cx = u(rng) * n, r = 0.25 * n;
  for (int64_t z = 0; z < n; ++z)
    for (int64_t y = 0; y < n; ++y)
      for (int64_t x = 0; x < n; ++x)
        m[(z * n + y) * n + x] = (z - cz) * (z - cz) + (y - cy) * (y - cy) + (x - cx) * (x - cx) < r * r;
  return m;
}

void BM_Hd95(benchmark::State& state) {
  const int64_t n = state.range(0);
  const Mask a = random_blob(n, 5), b = random_blob(n, 6);
  for (auto _ : state) benchmark::DoNotOptimize(hd95(a, b, {1.0, 1.0, 1.0}).value);
}

void BM_SegResNetTrainStep(benchmark::State& state) {
  NetworkSpec spec;
  SegResNet net(spec, 0);
  const Tensorf x = random_tensor({1, 4, 32, 32, 32}, 7);
  for (auto _ : state) {
    net.zero_grad();
    NetworkOutput out = net.forward(x, true);
    net.backward(out.logits);
    benchmark::DoNotOptimize(out.logits.front().data());
  }
}

}  // namespace

BENCHMARK(BM_ConvForward)->Args({8, 32})->Args({32, 8})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ConvForwardReference)->Args({8, 32})->Args({32, 8})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ConvBackward)->Args({8, 32})->Args({32, 8})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ConvBackwardReference)->Args({8, 32})->Args({32, 8})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Upsample)->Arg(16)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_UpsampleReference)->Arg(16)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Hd95)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_SegResNetTrainStep)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
