// Serial reference kernels against their OpenMP counterparts.

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "maskmod/kernels.hpp"

namespace {

using namespace maskmod::kernels;

std::vector<double> random_values(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

ConvGeometry desk_conv(std::size_t batch) {
  ConvGeometry g;
  g.batch = batch;
  g.in_channels = 8;
  g.in_h = g.in_w = 12;
  g.out_channels = 16;
  g.kernel_h = g.kernel_w = 3;
  g.padding = 1;
  return g;
}

template <bool Parallel>
void BM_ConvForward(benchmark::State& state) {
  const auto g = desk_conv(static_cast<std::size_t>(state.range(0)));
  const auto x = random_values(g.input_size(), 1);
  const auto w = random_values(g.weight_size(), 2);
  std::vector<double> y(g.output_size());
  for (auto _ : state) {
    if constexpr (Parallel) {
      parallel::conv2d_forward(g, x, w, y);
    } else {
      serial::conv2d_forward(g, x, w, y);
    }
    benchmark::DoNotOptimize(y.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(g.output_size()));
}

template <bool Parallel>
void BM_ConvBackwardWeight(benchmark::State& state) {
  const auto g = desk_conv(static_cast<std::size_t>(state.range(0)));
  const auto x = random_values(g.input_size(), 3);
  const auto gy = random_values(g.output_size(), 4);
  std::vector<double> gw(g.weight_size());
  for (auto _ : state) {
    if constexpr (Parallel) {
      parallel::conv2d_backward_weight(g, gy, x, gw);
    } else {
      serial::conv2d_backward_weight(g, gy, x, gw);
    }
    benchmark::DoNotOptimize(gw.data());
  }
}

template <bool Parallel>
void BM_Dense(benchmark::State& state) {
  const std::size_t batch = static_cast<std::size_t>(state.range(0)), in = 256, out = 128;
  const auto x = random_values(batch * in, 5);
  const auto w = random_values(out * in, 6);
  const auto b = random_values(out, 7);
  std::vector<double> y(batch * out);
  for (auto _ : state) {
    if constexpr (Parallel) {
      parallel::dense_forward(batch, in, out, x, w, b, y);
    } else {
      serial::dense_forward(batch, in, out, x, w, b, y);
    }
    benchmark::DoNotOptimize(y.data());
  }
}

template <bool Parallel>
void BM_Transform(benchmark::State& state) {
  const std::size_t out_channels = 64, n = static_cast<std::size_t>(state.range(0));
  const auto w = random_values(n, 8);
  std::vector<double> m(n);
  for (std::size_t i = 0; i < n; ++i) m[i] = (i % 3) ? 1.0 : 0.0;
  const std::vector<double> k1(out_channels, 0.01);
  const TransformCoefficients k{1.0, k1, 0.02, 0.5};
  std::vector<double> y(n);
  for (auto _ : state) {
    if constexpr (Parallel) {
      parallel::transform_weights(w, m, k, out_channels, y);
    } else {
      serial::transform_weights(w, m, k, out_channels, y);
    }
    benchmark::DoNotOptimize(y.data());
  }
  state.SetBytesProcessed(state.iterations() * static_cast<std::int64_t>(n * 3 * sizeof(double)));
}

}  // namespace

BENCHMARK(BM_ConvForward<false>)->Arg(8)->Arg(32);
BENCHMARK(BM_ConvForward<true>)->Arg(8)->Arg(32);
BENCHMARK(BM_ConvBackwardWeight<false>)->Arg(32);
BENCHMARK(BM_ConvBackwardWeight<true>)->Arg(32);
BENCHMARK(BM_Dense<false>)->Arg(32)->Arg(128);
BENCHMARK(BM_Dense<true>)->Arg(32)->Arg(128);
BENCHMARK(BM_Transform<false>)->Arg(1 << 12)->Arg(1 << 16);
BENCHMARK(BM_Transform<true>)->Arg(1 << 12)->Arg(1 << 16);

BENCHMARK_MAIN();
