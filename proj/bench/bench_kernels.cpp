// Copyright 2026 The stdetr Authors.
// SPDX-License-Identifier: Apache-2.0

// Parallel kernels against their serial references at model-sized shapes.

#include <random>
#include <vector>

#include <benchmark/benchmark.h>

#include "stdetr/kernels.hpp"

namespace {

namespace k = stdetr::kernels;

std::vector<double> random_vector(std::size_t n, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> v(n);
  for (double& x : v) x = u(rng);
  return v;
}

template <auto Gemm>
void BM_Gemm(benchmark::State& state) {
  const auto m = static_cast<std::size_t>(state.range(0));
  const auto kk = static_cast<std::size_t>(state.range(1));
  const auto n = static_cast<std::size_t>(state.range(2));
  const auto a = random_vector(m * kk, 1), b = random_vector(kk * n, 2);
  std::vector<double> c(m * n);
  for (auto _ : state) {
    Gemm(a, b, c, m, kk, n, false);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(static_cast<int64_t>(state.iterations() * m * kk * n));
}

// (m, k, n): backbone conv1 (1024 px x 27 -> 32), encoder attention scores at
// T=4 (64 x 128 x 64), and a large square case.
void gemm_args(benchmark::internal::Benchmark* b) {
  b->Args({1024, 45, 32})->Args({64, 128, 64})->Args({256, 256, 256});
}

BENCHMARK(BM_Gemm<k::gemm_nn>)->Name("gemm_nn/parallel")->Apply(gemm_args);
BENCHMARK(BM_Gemm<k::serial::gemm_nn>)->Name("gemm_nn/serial")->Apply(gemm_args);
BENCHMARK(BM_Gemm<k::gemm_nt>)->Name("gemm_nt/parallel")->Apply(gemm_args);
BENCHMARK(BM_Gemm<k::serial::gemm_nt>)->Name("gemm_nt/serial")->Apply(gemm_args);
BENCHMARK(BM_Gemm<k::gemm_tn>)->Name("gemm_tn/parallel")->Apply(gemm_args);
BENCHMARK(BM_Gemm<k::serial::gemm_tn>)->Name("gemm_tn/serial")->Apply(gemm_args);

template <auto Im2col>
void BM_Im2col(benchmark::State& state) {
  const k::ConvGeometry g{64, 64, static_cast<std::size_t>(state.range(0))};
  const auto x = random_vector(g.height * g.width * g.channels, 3);
  std::vector<double> cols(g.out_height() * g.out_width() * g.patch());
  for (auto _ : state) {
    Im2col(x, cols, g);
    benchmark::DoNotOptimize(cols.data());
  }
}

BENCHMARK(BM_Im2col<k::im2col>)->Name("im2col/parallel")->Arg(5)->Arg(32);
BENCHMARK(BM_Im2col<k::serial::im2col>)->Name("im2col/serial")->Arg(5)->Arg(32);

template <auto Softmax>
void BM_Softmax(benchmark::State& state) {
  const auto rows = static_cast<std::size_t>(state.range(0));
  const auto cols = static_cast<std::size_t>(state.range(1));
  const auto x = random_vector(rows * cols, 4);
  std::vector<double> y(rows * cols);
  for (auto _ : state) {
    Softmax(x, y, rows, cols);
    benchmark::DoNotOptimize(y.data());
  }
}

BENCHMARK(BM_Softmax<k::softmax_rows>)->Name("softmax/parallel")->Args({64, 64})->Args({1024, 256});
BENCHMARK(BM_Softmax<k::serial::softmax_rows>)->Name("softmax/serial")->Args({64, 64})->Args({1024, 256});

}  // namespace

BENCHMARK_MAIN();
