// Copyright 2026 The stdetr Authors.
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include <doctest.h>

#include "oracles.hpp"
#include "stdetr/autodiff.hpp"
#include "stdetr/error.hpp"
#include "stdetr/kernels.hpp"
#include "stdetr/nn.hpp"
#include "stdetr/tensor.hpp"

using namespace stdetr;

namespace {

Errc error_code(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected stdetr::Error");
  return Errc::kIo;
}

// Reduces a matrix to a scalar with fixed random rank-one weights, so every
// entry of the op output reaches the loss with a distinct coefficient pair.
Var weighted_sum(Tape& t, Var x, std::uint64_t seed) {
  std::mt19937_64 rng(seed * 7919 + 17);
  Var u = t.constant(oracle::random_matrix(1, x.rows(), rng, 0.5, 1.5));
  Var v = t.constant(oracle::random_matrix(x.cols(), 1, rng, 0.5, 1.5));
  return sum(matmul(matmul(u, x), v));
}

// Entries bounded away from zero, so relu / |.| kinks are never crossed.
Tensor away_from_zero(std::size_t r, std::size_t c, std::mt19937_64& rng) {
  Tensor t = oracle::random_matrix(r, c, rng, 0.2, 1.5);
  std::bernoulli_distribution sign(0.5);
  for (double& v : t.values())
    if (sign(rng)) v = -v;
  return t;
}

}  // namespace

TEST_CASE("tensor construction and shape contracts") {
  const Tensor t({2, 3}, 1.5);
  CHECK(t.size() == 6);
  CHECK(t.rows() == 2);
  CHECK(t.cols() == 3);
  CHECK(t(1, 2) == 1.5);
  CHECK(error_code([] { Tensor({2, 0}); }) == Errc::kShapeMismatch);
  CHECK(error_code([] { Tensor({2, 2}, std::vector<double>(3)); }) == Errc::kShapeMismatch);
  CHECK(error_code([] { Tensor({2, 2}).reshaped({3}); }) == Errc::kShapeMismatch);
  CHECK(shape_string({4, 5}) == "[4x5]");
}

TEST_CASE("reshape there and back is the identity on data") {
  std::mt19937_64 rng(3);
  const Tensor x = oracle::random_matrix(4, 6, rng);
  Tape tape;
  Var v = tape.constant(x);
  Var back = reshape(reshape(v, {3, 8}), {4, 6});
  CHECK(back.value() == x);
}

TEST_CASE("matmul examples") {
  Tape tape;
  Var a = tape.constant(Tensor::from_rows({{1, 2}, {3, 4}}));
  Var eye = tape.constant(Tensor::from_rows({{1, 0}, {0, 1}}));
  CHECK(matmul(a, eye).value() == a.value());
  Var b = tape.constant(Tensor::from_rows({{5}, {6}}));
  CHECK(matmul(a, b).value() == Tensor::from_rows({{17}, {39}}));
  Var c = tape.constant(Tensor::matrix(2, 3, 1.0));
  CHECK(error_code([&] { matmul(c, c); }) == Errc::kShapeMismatch);
}

TEST_CASE("softmax_rows examples") {
  Tape tape;
  const Tensor y = softmax_rows(tape.constant(Tensor::from_rows(
                                    {{0, 0}, {0, std::log(3.0)}, {1000, 1000}})))
                       .value();
  CHECK(y(0, 0) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(y(0, 1) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(y(1, 0) == doctest::Approx(0.25).epsilon(1e-15));
  CHECK(y(1, 1) == doctest::Approx(0.75).epsilon(1e-15));
  CHECK(y(2, 0) == 0.5);
  CHECK(y(2, 1) == 0.5);
  Tensor bad = Tensor::matrix(1, 2);
  bad[1] = std::nan("");
  CHECK(error_code([&] { softmax_rows(tape.constant(bad)); }) == Errc::kNonFinite);
}

TEST_CASE("softmax rows are stochastic for random inputs") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    Tape tape;
    const Tensor y = softmax_rows(tape.constant(oracle::random_matrix(5, 7, rng, -30, 30))).value();
    for (std::size_t i = 0; i < 5; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < 7; ++j) {
        CHECK(y(i, j) >= 0.0);
        CHECK(y(i, j) <= 1.0);
        s += y(i, j);
      }
      CHECK(std::abs(s - 1.0) < 1e-9);
    }
  }
}

TEST_CASE("backward: product rule, fan-out, disconnected leaves") {
  {
    Tape tape;
    Var x = tape.variable(Tensor::scalar(2.0));
    Var y = tape.variable(Tensor::scalar(3.0));
    tape.backward(matmul(x, y));
    CHECK(tape.grad(x).item() == 3.0);
    CHECK(tape.grad(y).item() == 2.0);
  }
  {
    Tape tape;
    Var v = tape.variable(Tensor::from_rows({{0.3, -1.2, 2.0}}));
    tape.backward(sum(softmax_rows(v)));
    const Tensor g = tape.grad(v);
    for (double gi : g.values()) CHECK(std::abs(gi) < 1e-15);
  }
  {
    // d/dx [g(x) + h(x)] equals the separate adjoints summed.
    std::mt19937_64 rng(5);
    const Tensor x0 = oracle::random_matrix(3, 4, rng);
    auto g = [](Tape& t, Var x) { return weighted_sum(t, sigmoid(x), 1); };
    auto h = [](Tape& t, Var x) { return weighted_sum(t, softmax_rows(x), 2); };
    Tape t1, t2, t3;
    Var a = t1.variable(x0);
    t1.backward(g(t1, a));
    Var b = t2.variable(x0);
    t2.backward(h(t2, b));
    Var c = t3.variable(x0);
    t3.backward(add(g(t3, c), h(t3, c)));
    for (std::size_t i = 0; i < x0.size(); ++i)
      CHECK(t3.grad(c)[i] == t1.grad(a)[i] + t2.grad(b)[i]);
  }
  {
    Tape tape;
    Var used = tape.variable(Tensor::scalar(1.0));
    Var unused = tape.variable(Tensor::matrix(2, 2, 4.0));
    tape.backward(scale(used, 2.0));
    CHECK(tape.grad(unused) == Tensor::matrix(2, 2, 0.0));
  }
  {
    Tape tape;
    Var m = tape.variable(Tensor::matrix(2, 2, 1.0));
    CHECK(error_code([&] { tape.backward(m); }) == Errc::kNotScalar);
  }
}

TEST_CASE("non-finite detection is opt-in") {
  Tape tape;
  tape.set_check_finite(true);
  Var x = tape.constant(Tensor::scalar(1e308));
  CHECK(error_code([&] { scale(x, 10.0); }) == Errc::kNonFinite);
}

TEST_CASE("grad_check contract") {
  std::mt19937_64 rng(1);
  const Tensor x = oracle::random_matrix(3, 3, rng);
  auto linear_f = [](Tape& t, Var v) { return weighted_sum(t, v, 9); };
  CHECK(grad_check(linear_f, x, 1e-4) <= 1e-10);
  CHECK(error_code([&] { grad_check(linear_f, x, 1.0); }) == Errc::kInvalidArgument);
  CHECK(error_code([&] { grad_check(linear_f, x, 1e-9); }) == Errc::kInvalidArgument);
  int calls = 0;
  auto drifting = [&calls](Tape& t, Var v) { return scale(sum(v), 1.0 + 1e-3 * ++calls); };
  CHECK(error_code([&] { grad_check(drifting, x, 1e-6); }) == Errc::kNonDeterministicFunction);
}

TEST_CASE("grad_check of a two-layer MLP loss") {
  std::mt19937_64 rng(2);
  const Tensor w1 = oracle::random_matrix(4, 6, rng);
  const Tensor w2 = oracle::random_matrix(6, 2, rng);
  const Tensor x = oracle::random_matrix(5, 4, rng);
  const std::vector<int> targets = {0, 1, 1, 0, 1};
  const std::vector<double> weights(5, 1.0);
  auto loss = [&](Tape& t, Var w) {
    Var h = sigmoid(matmul(t.constant(x), w));
    return cross_entropy_logits(matmul(h, t.constant(w2)), targets, weights);
  };
  CHECK(grad_check(loss, w1, 1e-6) < 1e-4);
}

// Every differentiable op, checked on 20 seeds with the prescribed oracle.
TEST_CASE("grad_check of every op over 20 seeds") {
  struct OpCase {
    std::string name;
    std::size_t rows, cols;
    std::function<Var(Tape&, Var, std::mt19937_64&)> apply;
    bool kinked = false;  // draw inputs away from zero
  };
  const std::vector<OpCase> cases = {
      {"matmul_left", 3, 4,
       [](Tape& t, Var x, auto& r) { return matmul(x, t.constant(oracle::random_matrix(4, 2, r))); }},
      {"matmul_right", 4, 2,
       [](Tape& t, Var x, auto& r) { return matmul(t.constant(oracle::random_matrix(3, 4, r)), x); }},
      {"add", 3, 3,
       [](Tape& t, Var x, auto& r) { return add(x, t.constant(oracle::random_matrix(3, 3, r))); }},
      {"sub", 3, 3,
       [](Tape& t, Var x, auto& r) { return sub(t.constant(oracle::random_matrix(3, 3, r)), x); }},
      {"scale", 2, 5, [](Tape&, Var x, auto&) { return scale(x, -1.7); }},
      {"relu", 4, 3, [](Tape&, Var x, auto&) { return relu(x); }, true},
      {"sigmoid", 4, 3, [](Tape&, Var x, auto&) { return sigmoid(x); }},
      {"softmax_rows", 3, 5, [](Tape&, Var x, auto&) { return softmax_rows(x); }},
      {"layer_norm_x", 3, 6,
       [](Tape& t, Var x, auto& r) {
         return layer_norm(x, t.constant(oracle::random_matrix(1, 6, r, 0.5, 1.5)),
                           t.constant(oracle::random_matrix(1, 6, r)));
       }},
      {"layer_norm_gain", 1, 6,
       [](Tape& t, Var g, auto& r) {
         return layer_norm(t.constant(oracle::random_matrix(3, 6, r)), g,
                           t.constant(oracle::random_matrix(1, 6, r)));
       }},
      {"layer_norm_bias", 1, 6,
       [](Tape& t, Var b, auto& r) {
         return layer_norm(t.constant(oracle::random_matrix(3, 6, r)),
                           t.constant(oracle::random_matrix(1, 6, r, 0.5, 1.5)), b);
       }},
      {"concat_rows", 2, 3,
       [](Tape& t, Var x, auto& r) {
         const Var parts[] = {t.constant(oracle::random_matrix(1, 3, r)), x, x};
         return concat(parts, 0);
       }},
      {"concat_cols", 3, 2,
       [](Tape& t, Var x, auto& r) {
         const Var parts[] = {x, t.constant(oracle::random_matrix(3, 1, r)), x};
         return concat(parts, 1);
       }},
      {"reshape", 4, 3, [](Tape&, Var x, auto&) { return reshape(x, {2, 6}); }},
      {"transpose", 2, 5, [](Tape&, Var x, auto&) { return transpose(x); }},
      {"slice_rows", 5, 3, [](Tape&, Var x, auto&) { return slice(x, 0, 1, 4); }},
      {"slice_cols", 3, 5, [](Tape&, Var x, auto&) { return slice(x, 1, 2, 5); }},
      {"gather_rows", 4, 3,
       [](Tape&, Var x, auto&) {
         const std::size_t rows[] = {3, 0, 3, 1};
         return gather_rows(x, rows);
       }},
      {"tile", 1, 4, [](Tape&, Var x, auto&) { return tile(x, 3); }},
      {"sum", 3, 4, [](Tape&, Var x, auto&) { return sum(x); }},
      {"cross_entropy_logits", 4, 3,
       [](Tape&, Var x, auto& r) {
         std::uniform_int_distribution<int> cls(0, 2);
         std::vector<int> targets(4);
         for (int& c : targets) c = cls(r);
         const Tensor w = oracle::random_matrix(1, 4, r, 0.1, 1.0);
         return cross_entropy_logits(x, targets, w.values());
       }},
      {"l1_distance", 3, 4,
       [](Tape& t, Var x, auto& r) {
         // Targets outside [-1, 1] keep every |x - target| on one side.
         Tensor other = oracle::random_matrix(3, 4, r, 2.0, 3.0);
         std::bernoulli_distribution sign(0.5);
         for (double& v : other.values())
           if (sign(r)) v = -v;
         return l1_distance(x, t.constant(other));
       }},
      {"generalized_iou", 3, 4,
       [](Tape& t, Var x, auto& r) {
         return generalized_iou(x, t.constant(oracle::random_matrix(3, 4, r, 0.3, 0.6)));
       }},
      {"im2col", 25, 2,
       [](Tape&, Var x, auto&) { return im2col(x, kernels::ConvGeometry{5, 5, 2}); }},
  };
  for (const OpCase& c : cases) {
    CAPTURE(c.name);
    double worst = 0.0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      CAPTURE(seed);
      std::mt19937_64 rng(seed);
      Tensor x = c.kinked ? away_from_zero(c.rows, c.cols, rng)
                          : oracle::random_matrix(c.rows, c.cols, rng);
      if (c.name == "generalized_iou") {
        // Valid (cx, cy, w, h) rows.
        std::uniform_real_distribution<double> centre(0.3, 0.7), extent(0.1, 0.5);
        for (std::size_t i = 0; i < x.rows(); ++i) {
          x(i, 0) = centre(rng);
          x(i, 1) = centre(rng);
          x(i, 2) = extent(rng);
          x(i, 3) = extent(rng);
        }
      }
      const std::uint64_t op_seed = seed + 1000;
      auto f = [&](Tape& t, Var v) {
        std::mt19937_64 op_rng(op_seed);  // same constants on every evaluation
        return weighted_sum(t, c.apply(t, v, op_rng), seed);
      };
      GradCheckStats stats;
      const double err = grad_check(f, x, 1e-4, &stats);
      CHECK(err < 1e-4);
      CHECK(stats.checked + stats.skipped == x.size());
      // Random GIoU pairs can land an edge within eps of a min/max switch;
      // every other case is drawn away from its kinks.
      if (c.name == "generalized_iou") {
        CHECK(stats.skipped <= 1);
      } else {
        CHECK(stats.skipped == 0);
      }
      worst = std::max(worst, err);
    }
    MESSAGE(c.name << " worst relative error " << worst);
  }
}

TEST_CASE("parameters shared across uses sum their gradients") {
  ParameterStore store;
  const ParamRef w = store.add("w", Tensor::from_rows({{2.0}}));
  Tape tape;
  Binder b(tape, store);
  Var x = tape.constant(Tensor::from_rows({{3.0}}));
  // loss = w*x + w*x*x with w bound twice through the binder.
  Var first = matmul(x, b(w));
  Var second = matmul(matmul(x, x), b(w));
  tape.backward(add(first, second));
  CHECK(store[w].grad.item() == 3.0 + 9.0);
}

TEST_CASE("grad_check_parameters reports probes that cross a kink") {
  ParameterStore store;
  const ParamRef w = store.add("w", Tensor::from_rows({{1e-7, 0.5, -0.5}}));
  auto loss = [&](Tape& t) {
    Binder b(t, store);
    return sum(relu(b(w)));
  };
  std::vector<Parameter*> params = store.pointers();
  GradCheckStats stats;
  const double err = grad_check_parameters(loss, params, 1e-6, 0, &stats);
  CHECK(stats.skipped == 1);
  CHECK(stats.checked == 2);
  CHECK(err < 1e-10);
}

TEST_CASE("Adam first step moves each coordinate by lr against the gradient sign") {
  ParameterStore store;
  const ParamRef w = store.add("w", Tensor::from_rows({{1.0, -2.0, 0.5}}));
  store[w].grad = Tensor::from_rows({{0.3, -0.01, 2.0}});
  Adam adam(AdamOptions{.clip_norm = 0.0});
  adam.step(store, 0.1);
  // m_hat = g and v_hat = g^2 after bias correction.
  const double expect[] = {1.0 - 0.1 * 0.3 / (0.3 + 1e-8), -2.0 + 0.1 * 0.01 / (0.01 + 1e-8),
                           0.5 - 0.1 * 2.0 / (2.0 + 1e-8)};
  for (std::size_t i = 0; i < 3; ++i) CHECK(store[w].value[i] == doctest::Approx(expect[i]).epsilon(1e-12));
  CHECK(store[w].grad == Tensor::matrix(1, 3, 0.0));
  store[w].grad[0] = std::nan("");
  CHECK(error_code([&] { adam.step(store, 0.1); }) == Errc::kNonFinite);
}

TEST_CASE("parallel kernels equal the serial references bitwise") {
  std::mt19937_64 rng(4);
  for (auto [m, k, n] : {std::array<std::size_t, 3>{1, 1, 1}, {7, 5, 3}, {300, 40, 120},
                         {64, 256, 64}}) {
    CAPTURE(m);
    const Tensor a = oracle::random_matrix(m, k, rng), b = oracle::random_matrix(k, n, rng);
    const Tensor bt = oracle::random_matrix(n, k, rng), at = oracle::random_matrix(k, m, rng);
    Tensor c1 = oracle::random_matrix(m, n, rng), c2 = c1;
    kernels::gemm_nn(a.data(), b.data(), c1.data(), m, k, n, true);
    kernels::serial::gemm_nn(a.data(), b.data(), c2.data(), m, k, n, true);
    CHECK(c1 == c2);
    kernels::gemm_nt(a.data(), bt.data(), c1.data(), m, k, n, false);
    kernels::serial::gemm_nt(a.data(), bt.data(), c2.data(), m, k, n, false);
    CHECK(c1 == c2);
    kernels::gemm_tn(at.data(), b.data(), c1.data(), m, k, n, false);
    kernels::serial::gemm_tn(at.data(), b.data(), c2.data(), m, k, n, false);
    CHECK(c1 == c2);
    // And against the plain triple loop.
    kernels::gemm_nn(a.data(), b.data(), c1.data(), m, k, n, false);
    const auto ref = oracle::matmul(oracle::to_matrix(a), oracle::to_matrix(b));
    CHECK(max_abs_diff(c1, oracle::to_tensor(ref)) < 1e-12);
  }
  const kernels::ConvGeometry g{33, 20, 3};
  const Tensor x = oracle::random_matrix(33 * 20, 3, rng);
  Tensor cols1 = Tensor::matrix(g.out_height() * g.out_width(), g.patch());
  Tensor cols2 = cols1;
  kernels::im2col(x.data(), cols1.data(), g);
  kernels::serial::im2col(x.data(), cols2.data(), g);
  CHECK(cols1 == cols2);
  Tensor dx1 = Tensor::matrix(33 * 20, 3), dx2 = dx1;
  kernels::col2im(cols1.data(), dx1.data(), g);
  kernels::serial::col2im(cols1.data(), dx2.data(), g);
  CHECK(dx1 == dx2);
  const Tensor s = oracle::random_matrix(200, 300, rng, -20, 20);
  Tensor y1 = s, y2 = s;
  kernels::softmax_rows(s.data(), y1.data(), 200, 300);
  kernels::serial::softmax_rows(s.data(), y2.data(), 200, 300);
  CHECK(y1 == y2);
}

TEST_CASE("col2im is the adjoint of im2col") {
  std::mt19937_64 rng(8);
  const kernels::ConvGeometry g{9, 6, 4};
  const Tensor x = oracle::random_matrix(g.height * g.width, g.channels, rng);
  const Tensor c = oracle::random_matrix(g.out_height() * g.out_width(), g.patch(), rng);
  Tensor cols = Tensor::matrix(c.rows(), c.cols());
  Tensor dx = Tensor::matrix(x.rows(), x.cols());
  kernels::im2col(x.data(), cols.data(), g);
  kernels::col2im(c.data(), dx.data(), g);
  const double lhs = std::inner_product(cols.values().begin(), cols.values().end(),
                                        c.values().begin(), 0.0);
  const double rhs = std::inner_product(x.values().begin(), x.values().end(),
                                        dx.values().begin(), 0.0);
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
}

TEST_CASE("im2col places taps by hand-computed coordinates") {
  // 4x4 single-channel ramp; output pixel (1,1) of a stride-2 pad-1 3x3
  // convolution reads input rows 1..3 and columns 1..3.
  const kernels::ConvGeometry g{4, 4, 1};
  Tensor x = Tensor::matrix(16, 1);
  for (std::size_t i = 0; i < 16; ++i) x[i] = static_cast<double>(i);
  Tensor cols = Tensor::matrix(4, 9);
  kernels::im2col(x.data(), cols.data(), g);
  const double expect[] = {5, 6, 7, 9, 10, 11, 13, 14, 15};
  for (std::size_t t = 0; t < 9; ++t) CHECK(cols(3, t) == expect[t]);
  // Output pixel (0,0) sees padding on its top row and left column.
  const double first[] = {0, 0, 0, 0, 0, 1, 0, 4, 5};
  for (std::size_t t = 0; t < 9; ++t) CHECK(cols(0, t) == first[t]);
}
