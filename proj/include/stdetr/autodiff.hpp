// Copyright 2026 The stdetr Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "stdetr/kernels.hpp"
#include "stdetr/tensor.hpp"

namespace stdetr {

/// A learnable tensor that outlives any single tape. Backward passes add
/// into `grad`; the optimizer consumes and clears it.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
};

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; only valid while the
/// tape it came from is alive and has not been cleared.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Ordered record of executed ops. backward() replays adjoints in reverse
/// creation order, touching each node at most once. One tape per thread;
/// parameters may be shared read-only between tapes as long as no two
/// backward passes write the same Parameter::grad concurrently.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  /// Leaf whose gradient is read back with grad().
  Var variable(Tensor value);
  /// Leaf bound to a Parameter; backward() adds d(loss)/d(value) into p.grad.
  Var parameter(Parameter& p);

  /// Seeds d(loss)/d(loss) = 1 and propagates. Leaves that the loss does not
  /// depend on keep a zero gradient; that is not an error.
  void backward(Var loss);

  /// Gradient of the last backward() w.r.t. v (zeros if v was unreached).
  Tensor grad(Var v) const;

  void clear();
  std::size_t size() const { return nodes_.size(); }

  /// When set, every recorded output is checked and NonFinite is thrown.
  void set_check_finite(bool on) { check_finite_ = on; }
  bool check_finite() const { return check_finite_; }

  /// Piecewise ops (relu masks, sign choices, min/max edges, matchings)
  /// fold their discrete choices into one running hash. Two forward passes
  /// with equal signatures evaluated the same smooth piece.
  void note_branch(std::uint64_t h) { branches_ = (branches_ ^ h) * 0x100000001b3ULL; }
  std::uint64_t branch_signature() const { return branches_; }

  // Op-authoring interface.
  Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn fn);
  Var record(Tensor value, std::span<const Var> inputs, BackwardFn fn);
  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  const Tensor& out_grad(std::size_t id) const { return nodes_[id].grad; }
  Tensor& grad_buffer(std::size_t id);

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    Parameter* param = nullptr;
    BackwardFn backward;
  };

  Var push(Node node);

  std::deque<Node> nodes_;  // stable addresses: Var::value() references stay valid
  bool check_finite_ = false;
  std::uint64_t branches_ = 0xcbf29ce484222325ULL;
};

// --- differentiable ops ----------------------------------------------------

Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var scale(Var a, double s);
Var relu(Var a);
Var sigmoid(Var a);
Var softmax_rows(Var a);
/// Row-wise normalization with learnable 1 x c gain and bias.
Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);
/// axis 0 stacks rows, axis 1 stacks columns (left to right).
Var concat(std::span<const Var> parts, std::size_t axis);
Var reshape(Var a, Shape shape);
Var transpose(Var a);
/// Half-open range [begin, end) along axis 0 or 1 of a matrix.
Var slice(Var a, std::size_t axis, std::size_t begin, std::size_t end);
Var gather_rows(Var a, std::span<const std::size_t> rows);
/// Repeats a 1 x c row `reps` times.
Var tile(Var row, std::size_t reps);
Var sum(Var a);
/// sum_i weights[i] * (-log softmax(logits_i)[targets[i]])
Var cross_entropy_logits(Var logits, std::span<const int> targets,
                         std::span<const double> weights);
/// sum |a - b|
Var l1_distance(Var a, Var b);
/// Row-wise generalized IoU of (cx, cy, w, h) boxes; k x 4 inputs, k x 1 output.
Var generalized_iou(Var a, Var b);
/// Patch extraction for convolution; x is (g.height*g.width) x g.channels.
Var im2col(Var x, const kernels::ConvGeometry& g);

// --- finite-difference oracle ------------------------------------------------

struct GradCheckStats {
  std::size_t checked = 0;
  /// Coordinates whose +-eps probes landed on a different smooth piece
  /// (branch signature changed), where central differences are meaningless.
  std::size_t skipped = 0;
};

/// Max relative error between backward() and central differences for a
/// scalar function of one tensor. Relative error uses the denominator
/// max(|analytic|, |numeric|, 1e-8). eps must lie in [1e-7, 1e-3].
double grad_check(const std::function<Var(Tape&, Var)>& f, const Tensor& x, double eps,
                  GradCheckStats* stats = nullptr);

enum class Difference {
  kCentral,     // (f(x+h) - f(x-h)) / 2h
  kRichardson,  // (4 D(h/2) - D(h)) / 3 from two central differences; O(h^4)
};

/// Same oracle over parameters. At most `max_entries` coordinates are probed
/// per parameter (spread evenly); 0 means all. Richardson extrapolation
/// allows a step large enough to resolve tiny gradients in double precision
/// without the h^2 truncation error of a plain central difference.
double grad_check_parameters(const std::function<Var(Tape&)>& loss,
                             std::span<Parameter* const> params, double eps,
                             std::size_t max_entries = 0, GradCheckStats* stats = nullptr,
                             Difference scheme = Difference::kCentral);

}  // namespace stdetr
