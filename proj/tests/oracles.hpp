// Copyright 2026 The stdetr Authors.
// SPDX-License-Identifier: Apache-2.0

// Independent reference computations for the tests. Everything here is
// written with plain loops over std::vector so it shares no code with the
// library under test.

#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <vector>

#include "stdetr/tensor.hpp"

namespace oracle {

using Matrix = std::vector<std::vector<double>>;

inline Matrix to_matrix(const stdetr::Tensor& t) {
  Matrix m(t.rows(), std::vector<double>(t.cols()));
  for (std::size_t i = 0; i < t.rows(); ++i)
    for (std::size_t j = 0; j < t.cols(); ++j) m[i][j] = t(i, j);
  return m;
}

inline stdetr::Tensor to_tensor(const Matrix& m) {
  stdetr::Tensor t = stdetr::Tensor::matrix(m.size(), m.empty() ? 0 : m[0].size());
  for (std::size_t i = 0; i < m.size(); ++i)
    for (std::size_t j = 0; j < m[i].size(); ++j) t(i, j) = m[i][j];
  return t;
}

inline stdetr::Tensor random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng,
                                    double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  stdetr::Tensor t = stdetr::Tensor::matrix(r, c);
  for (double& v : t.values()) v = u(rng);
  return t;
}

inline Matrix matmul(const Matrix& a, const Matrix& b) {
  Matrix c(a.size(), std::vector<double>(b[0].size(), 0.0));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b[0].size(); ++j)
      for (std::size_t k = 0; k < b.size(); ++k) c[i][j] += a[i][k] * b[k][j];
  return c;
}

inline Matrix transpose(const Matrix& a) {
  Matrix t(a[0].size(), std::vector<double>(a.size()));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < a[0].size(); ++j) t[j][i] = a[i][j];
  return t;
}

// Textbook softmax without max subtraction; fine for the small inputs used.
inline Matrix softmax_rows(const Matrix& a) {
  Matrix s = a;
  for (auto& row : s) {
    double z = 0.0;
    for (double& v : row) z += (v = std::exp(v));
    for (double& v : row) v /= z;
  }
  return s;
}

struct Attention {
  Matrix out, weights;
};

inline Attention attention(const Matrix& q, const Matrix& k, const Matrix& v) {
  Matrix scores(q.size(), std::vector<double>(k.size()));
  const double scale = 1.0 / std::sqrt(static_cast<double>(q[0].size()));
  for (std::size_t i = 0; i < q.size(); ++i)
    for (std::size_t j = 0; j < k.size(); ++j) {
      double s = 0.0;
      for (std::size_t c = 0; c < q[0].size(); ++c) s += q[i][c] * k[j][c];
      scores[i][j] = s * scale;
    }
  Attention a;
  a.weights = softmax_rows(scores);
  a.out = matmul(a.weights, v);
  return a;
}

inline Matrix layer_norm(const Matrix& x, double eps = 1e-5) {
  Matrix y = x;
  for (auto& row : y) {
    const double n = static_cast<double>(row.size());
    double mean = 0.0, var = 0.0;
    for (double v : row) mean += v;
    mean /= n;
    for (double v : row) var += (v - mean) * (v - mean);
    var /= n;
    for (double& v : row) v = (v - mean) / std::sqrt(var + eps);
  }
  return y;
}

// Minimum total cost over all injections of rows into columns (rows <= cols).
inline double brute_force_assignment(const Matrix& cost) {
  const std::size_t n = cost.size();
  if (n == 0) return 0.0;
  const std::size_t m = cost[0].size();
  std::vector<std::size_t> cols(m);
  std::iota(cols.begin(), cols.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  // Enumerate ordered n-subsets via permutations of all columns, visiting each
  // distinct prefix once.
  do {
    double c = 0.0;
    for (std::size_t i = 0; i < n; ++i) c += cost[i][cols[i]];
    best = std::min(best, c);
    std::reverse(cols.begin() + static_cast<std::ptrdiff_t>(n), cols.end());
  } while (std::next_permutation(cols.begin(), cols.end()));
  return best;
}

struct Corners {
  double x0, y0, x1, y1;
};

inline double area(const Corners& c) { return (c.x1 - c.x0) * (c.y1 - c.y0); }

inline double intersection(const Corners& a, const Corners& b) {
  const double w = std::min(a.x1, b.x1) - std::max(a.x0, b.x0);
  const double h = std::min(a.y1, b.y1) - std::max(a.y0, b.y0);
  return w > 0 && h > 0 ? w * h : 0.0;
}

inline double iou(const Corners& a, const Corners& b) {
  const double i = intersection(a, b);
  return i / (area(a) + area(b) - i);
}

inline double giou(const Corners& a, const Corners& b) {
  const double i = intersection(a, b);
  const double u = area(a) + area(b) - i;
  const Corners e{std::min(a.x0, b.x0), std::min(a.y0, b.y0), std::max(a.x1, b.x1),
                  std::max(a.y1, b.y1)};
  return i / u - (area(e) - u) / area(e);
}

// All-point PR curve read at 101 recall levels, from a list of TP/FP flags
// already sorted by descending score.
inline double interpolated_ap(const std::vector<bool>& tp_sorted, std::size_t num_gt) {
  std::vector<double> precision, recall;
  double tp = 0, fp = 0;
  for (bool t : tp_sorted) {
    (t ? tp : fp) += 1;
    precision.push_back(tp / (tp + fp));
    recall.push_back(tp / static_cast<double>(num_gt));
  }
  double sum = 0.0;
  for (int k = 0; k <= 100; ++k) {
    const double r = k / 100.0;
    double p = 0.0;
    for (std::size_t i = 0; i < recall.size(); ++i)
      if (recall[i] >= r) p = std::max(p, precision[i]);
    sum += p;
  }
  return sum / 101.0;
}

}  // namespace oracle
