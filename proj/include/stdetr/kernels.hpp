// Copyright 2026 The stdetr Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>

// Dense inner loops. The functions in stdetr::kernels split output rows
// across OpenMP threads; every output element is still reduced by a single
// thread in a fixed order, so results do not depend on the thread count.
// stdetr::kernels::serial holds straightforward reference versions used by
// the tests and the benchmark.

namespace stdetr::kernels {

// C(m x n) (+)= A(m x k) * B(k x n)
void gemm_nn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n, bool accumulate);
// C(m x n) (+)= A(m x k) * B(n x k)^T
void gemm_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n, bool accumulate);
// C(m x n) (+)= A(k x m)^T * B(k x n)
void gemm_tn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n, bool accumulate);

struct ConvGeometry {
  std::size_t height = 0, width = 0, channels = 0;
  std::size_t kernel = 3, stride = 2, pad = 1;

  std::size_t out_height() const { return (height + 2 * pad - kernel) / stride + 1; }
  std::size_t out_width() const { return (width + 2 * pad - kernel) / stride + 1; }
  std::size_t patch() const { return kernel * kernel * channels; }
};

// x is channel-last (height*width x channels); cols is (oh*ow x k*k*channels)
// with column index (ky*k + kx)*channels + c. Out-of-image taps read zero.
void im2col(std::span<const double> x, std::span<double> cols, const ConvGeometry& g);
// Adjoint of im2col: scatter-adds cols back into dx.
void col2im(std::span<const double> cols, std::span<double> dx, const ConvGeometry& g);

// Row-wise softmax with per-row max subtraction.
void softmax_rows(std::span<const double> x, std::span<double> y, std::size_t rows,
                  std::size_t cols);

namespace serial {

void gemm_nn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n, bool accumulate);
void gemm_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n, bool accumulate);
void gemm_tn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n, bool accumulate);
void im2col(std::span<const double> x, std::span<double> cols, const ConvGeometry& g);
void col2im(std::span<const double> cols, std::span<double> dx, const ConvGeometry& g);
void softmax_rows(std::span<const double> x, std::span<double> y, std::size_t rows,
                  std::size_t cols);

}  // namespace serial

/// Number of threads the parallel kernels will use outside a parallel region.
int max_threads();

}  // namespace stdetr::kernels
