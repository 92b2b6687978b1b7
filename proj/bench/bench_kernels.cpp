// Parallel kernels against their serial reference at desk-scale shapes.
// Run with OMP_NUM_THREADS to vary the thread count; results are identical
// either way, only the timing moves.

#include <benchmark/benchmark.h>

#include <random>

#include "cuti/feature_stats.hpp"
#include "cuti/kernels.hpp"

namespace {

using cuti::Tensor;

Tensor filled(std::vector<int> shape, std::uint64_t seed) {
  Tensor t(std::move(shape));
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (double& v : t.values()) v = u(rng);
  return t;
}

// Args: batch, in channels, out channels, spatial size.
void conv_args(benchmark::internal::Benchmark* b) {
  b->Args({32, 3, 16, 32})->Args({32, 16, 32, 16})->Args({32, 32, 64, 8});
}

template <bool Parallel>
void BM_ConvForward(benchmark::State& state) {
  const int n = state.range(0), c = state.range(1), o = state.range(2), s = state.range(3);
  const Tensor x = filled({n, c, s, s}, 1), w = filled({o, c, 3, 3}, 2), b = filled({o}, 3);
  Tensor y;
  for (auto _ : state) {
    if constexpr (Parallel) cuti::kernels::conv3x3_forward(x, w, b, y);
    else cuti::kernels::reference::conv3x3_forward(x, w, b, y);
    benchmark::DoNotOptimize(y.data());
  }
  state.SetItemsProcessed(state.iterations() * std::int64_t(n) * o * s * s * c * 9);
}

template <bool Parallel>
void BM_ConvBackwardInput(benchmark::State& state) {
  const int n = state.range(0), c = state.range(1), o = state.range(2), s = state.range(3);
  const Tensor dy = filled({n, o, s, s}, 1), w = filled({o, c, 3, 3}, 2);
  Tensor dx({n, c, s, s});
  for (auto _ : state) {
    if constexpr (Parallel) cuti::kernels::conv3x3_backward_input(dy, w, dx);
    else cuti::kernels::reference::conv3x3_backward_input(dy, w, dx);
    benchmark::DoNotOptimize(dx.data());
  }
}

template <bool Parallel>
void BM_ConvBackwardParams(benchmark::State& state) {
  const int n = state.range(0), c = state.range(1), o = state.range(2), s = state.range(3);
  const Tensor x = filled({n, c, s, s}, 1), dy = filled({n, o, s, s}, 2);
  Tensor dw({o, c, 3, 3}), db({o});
  for (auto _ : state) {
    if constexpr (Parallel) cuti::kernels::conv3x3_backward_params(x, dy, dw, db);
    else cuti::kernels::reference::conv3x3_backward_params(x, dy, dw, db);
    benchmark::DoNotOptimize(dw.data());
  }
}

template <bool Parallel>
void BM_Linear(benchmark::State& state) {
  const int n = state.range(0), in = state.range(1), out = state.range(2);
  const Tensor x = filled({n, in}, 1), w = filled({out, in}, 2), b = filled({out}, 3);
  Tensor y;
  for (auto _ : state) {
    if constexpr (Parallel) cuti::kernels::linear_forward(x, w, b, y);
    else cuti::kernels::reference::linear_forward(x, w, b, y);
    benchmark::DoNotOptimize(y.data());
  }
}

template <bool Parallel>
void BM_StyleStats(benchmark::State& state) {
  const Tensor f = filled({32, static_cast<int>(state.range(0)), 16, 16}, 1);
  for (auto _ : state) {
    auto s = Parallel ? cuti::compute_style_stats(f) : cuti::reference::compute_style_stats(f);
    benchmark::DoNotOptimize(s.mean.data());
  }
}

}  // namespace

BENCHMARK(BM_ConvForward<true>)->Apply(conv_args)->Name("conv_forward/parallel");
BENCHMARK(BM_ConvForward<false>)->Apply(conv_args)->Name("conv_forward/reference");
BENCHMARK(BM_ConvBackwardInput<true>)->Apply(conv_args)->Name("conv_backward_input/parallel");
BENCHMARK(BM_ConvBackwardInput<false>)->Apply(conv_args)->Name("conv_backward_input/reference");
BENCHMARK(BM_ConvBackwardParams<true>)->Apply(conv_args)->Name("conv_backward_params/parallel");
BENCHMARK(BM_ConvBackwardParams<false>)->Apply(conv_args)->Name("conv_backward_params/reference");
BENCHMARK(BM_Linear<true>)->Args({256, 512, 128})->Name("linear_forward/parallel");
BENCHMARK(BM_Linear<false>)->Args({256, 512, 128})->Name("linear_forward/reference");
BENCHMARK(BM_StyleStats<true>)->Arg(16)->Arg(64)->Name("style_stats/parallel");
BENCHMARK(BM_StyleStats<false>)->Arg(16)->Arg(64)->Name("style_stats/reference");

BENCHMARK_MAIN();
