// Parallel kernels against their serial references. The parallel variants take
// the thread count as the last benchmark argument (0 = OpenMP default).

#include <benchmark/benchmark.h>
#include <omp.h>

#include <cstdint>
#include <random>
#include <vector>

#include "deskmvs/kernels/kernels.hpp"

namespace k = deskmvs::kernels;

namespace {

std::vector<double> random_vec(std::size_t n, double lo = -1.0, double hi = 1.0, unsigned seed = 1) {
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) x = dist(gen);
  return v;
}

void use_threads(const benchmark::State& state, int arg) {
  const auto t = static_cast<int>(state.range(arg));
  k::set_num_threads(t > 0 ? t : omp_get_max_threads());
}

// ---- gemm ---------------------------------------------------------------------

template <bool Parallel>
void BM_Gemm(benchmark::State& state) {
  const std::int64_t n = state.range(0);
  if constexpr (Parallel) use_threads(state, 1);
  const auto a = random_vec(n * n, -1, 1, 1), b = random_vec(n * n, -1, 1, 2);
  std::vector<double> c(n * n);
  for (auto _ : state) {
    if constexpr (Parallel) {
      k::gemm(false, false, n, n, n, 1.0, a.data(), b.data(), 0.0, c.data());
    } else {
      k::reference::gemm(false, false, n, n, n, 1.0, a.data(), b.data(), 0.0, c.data());
    }
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * 2 * n * n * n);
}

// ---- softmax attention ------------------------------------------------------------

template <bool Parallel>
void BM_Attention(benchmark::State& state) {
  const std::int64_t n = state.range(0), heads = 4, dh = 16;
  if constexpr (Parallel) use_threads(state, 1);
  const auto q = random_vec(heads * n * dh, -1, 1, 1), kk = random_vec(heads * n * dh, -1, 1, 2),
             v = random_vec(heads * n * dh, -1, 1, 3);
  std::vector<double> out(heads * n * dh), lse(heads * n);
  for (auto _ : state) {
    if constexpr (Parallel) {
      k::attention_forward(q.data(), kk.data(), v.data(), out.data(), lse.data(), heads, n, n, dh, 0.25);
    } else {
      k::reference::attention_forward(q.data(), kk.data(), v.data(), out.data(), heads, n, n, dh, 0.25);
    }
    benchmark::DoNotOptimize(out.data());
  }
}

// ---- linear attention against its quadratic form --------------------------------------

template <bool Parallel>
void BM_LinearAttention(benchmark::State& state) {
  const std::int64_t n = state.range(0), heads = 4, dh = 16;
  if constexpr (Parallel) use_threads(state, 1);
  const auto q = random_vec(heads * n * dh, -1, 1, 1), kk = random_vec(heads * n * dh, -1, 1, 2),
             v = random_vec(heads * n * dh, -1, 1, 3);
  std::vector<double> out(heads * n * dh);
  for (auto _ : state) {
    if constexpr (Parallel) {
      k::linear_attention_forward(q.data(), kk.data(), v.data(), out.data(), heads, n, n, dh, 1e-6);
    } else {
      k::reference::linear_attention_quadratic(q.data(), kk.data(), v.data(), out.data(), heads, n, n, dh, 1e-6);
    }
    benchmark::DoNotOptimize(out.data());
  }
}

// ---- bilinear sampling ------------------------------------------------------------------

template <bool Parallel>
void BM_Bilinear(benchmark::State& state) {
  const std::int64_t s = state.range(0), c = 16;
  if constexpr (Parallel) use_threads(state, 1);
  const auto src = random_vec(c * s * s, -1, 1, 1);
  const auto coords = random_vec(2 * s * s, -1.0, static_cast<double>(s), 2);
  std::vector<double> out(c * s * s), mask(s * s);
  for (auto _ : state) {
    if constexpr (Parallel) {
      k::bilinear_forward(src.data(), coords.data(), out.data(), mask.data(), c, s, s, s, s);
    } else {
      k::reference::bilinear_forward(src.data(), coords.data(), out.data(), mask.data(), c, s, s, s, s);
    }
    benchmark::DoNotOptimize(out.data());
  }
}

// ---- group-wise correlation cost volume -----------------------------------------------------

template <bool Parallel>
void BM_CostVolume(benchmark::State& state) {
  const std::int64_t depth = state.range(0), c = 32, g = 8, h = 32, w = 48, views = 2;
  if constexpr (Parallel) use_threads(state, 1);
  const auto ref = random_vec(c * h * w, -1, 1, 1);
  const auto s0 = random_vec(c * h * w, -1, 1, 2), s1 = random_vec(c * h * w, -1, 1, 3);
  const auto c0 = random_vec(depth * 2 * h * w, -1.0, 48.0, 4), c1 = random_vec(depth * 2 * h * w, -1.0, 48.0, 5);
  const double* srcs[] = {s0.data(), s1.data()};
  const double* coords[] = {c0.data(), c1.data()};
  std::vector<double> scores(g * depth * h * w), valid(depth * h * w);
  for (auto _ : state) {
    if constexpr (Parallel) {
      k::cost_volume_forward(ref.data(), srcs, coords, views, scores.data(), valid.data(), c, g, depth, h, w);
    } else {
      k::reference::cost_volume_forward(ref.data(), srcs, coords, views, scores.data(), valid.data(), c, g, depth,
                                        h, w);
    }
    benchmark::DoNotOptimize(scores.data());
  }
}

}  // namespace

BENCHMARK(BM_Gemm<false>)->Name("gemm/reference")->Arg(64)->Arg(256);
BENCHMARK(BM_Gemm<true>)->Name("gemm/parallel")->Args({64, 1})->Args({256, 1})->Args({256, 0});
BENCHMARK(BM_Attention<false>)->Name("attention/reference")->Arg(256)->Arg(1024);
BENCHMARK(BM_Attention<true>)->Name("attention/parallel")->Args({256, 1})->Args({1024, 1})->Args({1024, 0});
BENCHMARK(BM_LinearAttention<false>)->Name("linear_attention/quadratic_reference")->Arg(256)->Arg(1024);
BENCHMARK(BM_LinearAttention<true>)->Name("linear_attention/parallel")->Args({256, 1})->Args({1024, 1})->Args({1024, 0});
BENCHMARK(BM_Bilinear<false>)->Name("bilinear/reference")->Arg(128);
BENCHMARK(BM_Bilinear<true>)->Name("bilinear/parallel")->Args({128, 1})->Args({128, 0});
BENCHMARK(BM_CostVolume<false>)->Name("cost_volume/reference")->Arg(16);
BENCHMARK(BM_CostVolume<true>)->Name("cost_volume/parallel")->Args({16, 1})->Args({16, 0});

BENCHMARK_MAIN();
