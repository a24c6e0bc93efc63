// Copyright 2026 The stdetr Authors.
// SPDX-License-Identifier: Apache-2.0

#include "stdetr/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace stdetr::kernels {
namespace {

// Below this many multiply-adds thread start-up costs more than it saves.
constexpr std::size_t kParallelWork = 1 << 15;

using Index = std::ptrdiff_t;

void store_row(const std::vector<double>& row, double* dst, bool accumulate) {
  if (accumulate) {
    for (std::size_t j = 0; j < row.size(); ++j) dst[j] += row[j];
  } else {
    std::copy(row.begin(), row.end(), dst);
  }
}

}  // namespace

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

void gemm_nn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
  const bool par = m * k * n >= kParallelWork;
#pragma omp parallel if (par)
  {
    // Each dot product is formed from zero and only then added to C, so the
    // rounding matches the serial reference with or without accumulation.
    std::vector<double> row(n);
#pragma omp for schedule(static)
    for (Index i = 0; i < static_cast<Index>(m); ++i) {
      std::fill(row.begin(), row.end(), 0.0);
      const double* arow = a.data() + i * k;
      for (std::size_t p = 0; p < k; ++p) {
        const double av = arow[p];
        const double* brow = b.data() + p * n;
        for (std::size_t j = 0; j < n; ++j) row[j] += av * brow[j];
      }
      store_row(row, c.data() + i * n, accumulate);
    }
  }
}

void gemm_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
  const bool par = m * k * n >= kParallelWork;
#pragma omp parallel for schedule(static) if (par)
  for (Index i = 0; i < static_cast<Index>(m); ++i) {
    const double* arow = a.data() + i * k;
    double* crow = c.data() + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      const double* brow = b.data() + j * k;
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += arow[p] * brow[p];
      crow[j] = accumulate ? crow[j] + s : s;
    }
  }
}

void gemm_tn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
  const bool par = m * k * n >= kParallelWork;
#pragma omp parallel if (par)
  {
    std::vector<double> row(n);
#pragma omp for schedule(static)
    for (Index i = 0; i < static_cast<Index>(m); ++i) {
      std::fill(row.begin(), row.end(), 0.0);
      for (std::size_t p = 0; p < k; ++p) {
        const double av = a[p * m + i];
        const double* brow = b.data() + p * n;
        for (std::size_t j = 0; j < n; ++j) row[j] += av * brow[j];
      }
      store_row(row, c.data() + i * n, accumulate);
    }
  }
}

void im2col(std::span<const double> x, std::span<double> cols, const ConvGeometry& g) {
  const std::size_t oh = g.out_height(), ow = g.out_width(), patch = g.patch();
  const bool par = oh * ow * patch >= kParallelWork;
#pragma omp parallel for schedule(static) if (par)
  for (Index o = 0; o < static_cast<Index>(oh * ow); ++o) {
    const std::size_t oy = o / ow, ox = o % ow;
    double* dst = cols.data() + o * patch;
    for (std::size_t ky = 0; ky < g.kernel; ++ky) {
      const Index iy = static_cast<Index>(oy * g.stride + ky) - static_cast<Index>(g.pad);
      for (std::size_t kx = 0; kx < g.kernel; ++kx) {
        const Index ix = static_cast<Index>(ox * g.stride + kx) - static_cast<Index>(g.pad);
        double* tap = dst + (ky * g.kernel + kx) * g.channels;
        if (iy < 0 || ix < 0 || iy >= static_cast<Index>(g.height) ||
            ix >= static_cast<Index>(g.width)) {
          std::fill(tap, tap + g.channels, 0.0);
        } else {
          const double* src = x.data() + (iy * g.width + ix) * g.channels;
          std::copy(src, src + g.channels, tap);
        }
      }
    }
  }
}

void col2im(std::span<const double> cols, std::span<double> dx, const ConvGeometry& g) {
  const std::size_t oh = g.out_height(), ow = g.out_width(), patch = g.patch();
  // Channels never alias each other, so they split cleanly across threads.
  const bool par = oh * ow * patch >= kParallelWork && g.channels > 1;
#pragma omp parallel for schedule(static) if (par)
  for (Index c = 0; c < static_cast<Index>(g.channels); ++c) {
    for (std::size_t o = 0; o < oh * ow; ++o) {
      const std::size_t oy = o / ow, ox = o % ow;
      const double* src = cols.data() + o * patch;
      for (std::size_t ky = 0; ky < g.kernel; ++ky) {
        const Index iy = static_cast<Index>(oy * g.stride + ky) - static_cast<Index>(g.pad);
        if (iy < 0 || iy >= static_cast<Index>(g.height)) continue;
        for (std::size_t kx = 0; kx < g.kernel; ++kx) {
          const Index ix = static_cast<Index>(ox * g.stride + kx) - static_cast<Index>(g.pad);
          if (ix < 0 || ix >= static_cast<Index>(g.width)) continue;
          dx[(iy * g.width + ix) * g.channels + c] += src[(ky * g.kernel + kx) * g.channels + c];
        }
      }
    }
  }
}

void softmax_rows(std::span<const double> x, std::span<double> y, std::size_t rows,
                  std::size_t cols) {
  const bool par = rows * cols >= kParallelWork;
#pragma omp parallel for schedule(static) if (par)
  for (Index r = 0; r < static_cast<Index>(rows); ++r) {
    const double* in = x.data() + r * cols;
    double* out = y.data() + r * cols;
    const double mx = *std::max_element(in, in + cols);
    double z = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      out[j] = std::exp(in[j] - mx);
      z += out[j];
    }
    for (std::size_t j = 0; j < cols; ++j) out[j] /= z;
  }
}

namespace serial {

void gemm_nn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[p * n + j];
      c[i * n + j] = accumulate ? c[i * n + j] + s : s;
    }
}

void gemm_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[j * k + p];
      c[i * n + j] = accumulate ? c[i * n + j] + s : s;
    }
}

void gemm_tn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += a[p * m + i] * b[p * n + j];
      c[i * n + j] = accumulate ? c[i * n + j] + s : s;
    }
}

void im2col(std::span<const double> x, std::span<double> cols, const ConvGeometry& g) {
  const std::size_t ow = g.out_width(), patch = g.patch();
  for (std::size_t oy = 0; oy < g.out_height(); ++oy)
    for (std::size_t ox = 0; ox < ow; ++ox)
      for (std::size_t ky = 0; ky < g.kernel; ++ky)
        for (std::size_t kx = 0; kx < g.kernel; ++kx)
          for (std::size_t c = 0; c < g.channels; ++c) {
            const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
            const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
            const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<long>(g.height) &&
                                ix < static_cast<long>(g.width);
            cols[(oy * ow + ox) * patch + (ky * g.kernel + kx) * g.channels + c] =
                inside ? x[(iy * g.width + ix) * g.channels + c] : 0.0;
          }
}

void col2im(std::span<const double> cols, std::span<double> dx, const ConvGeometry& g) {
  const std::size_t ow = g.out_width(), patch = g.patch();
  for (std::size_t oy = 0; oy < g.out_height(); ++oy)
    for (std::size_t ox = 0; ox < ow; ++ox)
      for (std::size_t ky = 0; ky < g.kernel; ++ky)
        for (std::size_t kx = 0; kx < g.kernel; ++kx) {
          const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
          const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
          if (iy < 0 || ix < 0 || iy >= static_cast<long>(g.height) ||
              ix >= static_cast<long>(g.width))
            continue;
          for (std::size_t c = 0; c < g.channels; ++c)
            dx[(iy * g.width + ix) * g.channels + c] +=
                cols[(oy * ow + ox) * patch + (ky * g.kernel + kx) * g.channels + c];
        }
}

void softmax_rows(std::span<const double> x, std::span<double> y, std::size_t rows,
                  std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) {
    double mx = x[r * cols];
    for (std::size_t j = 1; j < cols; ++j) mx = std::max(mx, x[r * cols + j]);
    double z = 0.0;
    for (std::size_t j = 0; j < cols; ++j) z += std::exp(x[r * cols + j] - mx);
    for (std::size_t j = 0; j < cols; ++j) y[r * cols + j] = std::exp(x[r * cols + j] - mx) / z;
  }
}

}  // namespace serial
}  // namespace stdetr::kernels
