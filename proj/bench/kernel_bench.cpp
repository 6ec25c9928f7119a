// Serial reference kernels against the OpenMP/GEMM kernels, on layer shapes
// from the 64x64 toy model, plus one full training step.

#include <benchmark/benchmark.h>

#include "elegant/kernels.hpp"
#include "elegant/rng.hpp"
#include "elegant/training.hpp"

using namespace elegant;

namespace {

Tensor random_tensor(Shape shape, std::uint64_t seed) {
  Tensor t(std::move(shape));
  Rng rng(seed);
  for (auto& v : t.span()) v = static_cast<real>(rng.normal());
  return t;
}

// (batch, in channels, out channels, input side)
void layer_args(benchmark::internal::Benchmark* b) {
  b->Args({16, 3, 16, 64})->Args({16, 32, 64, 16})->Args({16, 128, 64, 4});
}

template <bool Ref>
void BM_conv2d(benchmark::State& st) {
  const int n = st.range(0), ci = st.range(1), co = st.range(2), s = st.range(3);
  const Tensor x = random_tensor({n, ci, s, s}, 1), w = random_tensor({co, ci, 4, 4}, 2), b({co});
  for (auto _ : st) {
    Tensor y = Ref ? kernels::ref::conv2d(x, w, b, {}) : kernels::conv2d(x, w, b, {});
    benchmark::DoNotOptimize(y.data());
  }
  st.SetItemsProcessed(st.iterations() * int64_t(n) * co * ci * 16 * (s / 2) * (s / 2));
}

template <bool Ref>
void BM_conv2d_backward(benchmark::State& st) {
  const int n = st.range(0), ci = st.range(1), co = st.range(2), s = st.range(3);
  const Tensor x = random_tensor({n, ci, s, s}, 1), w = random_tensor({co, ci, 4, 4}, 2);
  const Tensor dy = random_tensor({n, co, s / 2, s / 2}, 3);
  Tensor dx, dw({co, ci, 4, 4}), db({co});
  for (auto _ : st) {
    if (Ref)
      kernels::ref::conv2d_backward(x, w, dy, {}, &dx, dw, db);
    else
      kernels::conv2d_backward(x, w, dy, {}, &dx, dw, db);
    benchmark::DoNotOptimize(dx.data());
  }
}

template <bool Ref>
void BM_conv_transpose2d(benchmark::State& st) {
  const int n = st.range(0), co = st.range(1), ci = st.range(2), s = st.range(3) / 2;
  const Tensor x = random_tensor({n, ci, s, s}, 1), w = random_tensor({ci, co, 4, 4}, 2), b({co});
  for (auto _ : st) {
    Tensor y = Ref ? kernels::ref::conv_transpose2d(x, w, b, {}) : kernels::conv_transpose2d(x, w, b, {});
    benchmark::DoNotOptimize(y.data());
  }
}

template <bool Ref>
void BM_l2_normalize(benchmark::State& st) {
  const int n = st.range(0), c = st.range(2), s = st.range(3) / 2;
  const Tensor x = random_tensor({n, c, s, s}, 1), alpha({c}, real(1)), beta({c});
  for (auto _ : st) {
    Tensor y = Ref ? kernels::ref::l2_normalize(x, alpha, beta, real(1e-8))
                   : kernels::l2_normalize(x, alpha, beta, real(1e-8));
    benchmark::DoNotOptimize(y.data());
  }
}

void BM_train_step_toy(benchmark::State& st) {
  ModelConfig mc{2, 64, 4, 16, 0.2, 64};
  TrainConfig tc;
  tc.batch_size = static_cast<int>(st.range(0));
  TrainState state = TrainState::fresh(mc, tc);
  Batch a{random_tensor({tc.batch_size, 3, 64, 64}, 4), {}}, b{random_tensor({tc.batch_size, 3, 64, 64}, 5), {}};
  for (auto& v : a.images.span()) v = std::clamp(v, real(-1), real(1));
  for (auto& v : b.images.span()) v = std::clamp(v, real(-1), real(1));
  a.labels.assign(tc.batch_size, AttributeLabelVector{{1, 0}});
  b.labels.assign(tc.batch_size, AttributeLabelVector{{0, 0}});
  for (auto _ : st) benchmark::DoNotOptimize(train_step(a, b, 0, state, tc));
}

}  // namespace

BENCHMARK(BM_conv2d<true>)->Name("conv2d/serial_ref")->Apply(layer_args)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_conv2d<false>)->Name("conv2d/omp_gemm")->Apply(layer_args)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_conv2d_backward<true>)->Name("conv2d_backward/serial_ref")->Apply(layer_args)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_conv2d_backward<false>)->Name("conv2d_backward/omp_gemm")->Apply(layer_args)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_conv_transpose2d<true>)->Name("conv_transpose2d/serial_ref")->Apply(layer_args)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_conv_transpose2d<false>)->Name("conv_transpose2d/omp_gemm")->Apply(layer_args)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_l2_normalize<true>)->Name("l2_normalize/serial_ref")->Apply(layer_args)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_l2_normalize<false>)->Name("l2_normalize/omp")->Apply(layer_args)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_train_step_toy)->Arg(16)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
