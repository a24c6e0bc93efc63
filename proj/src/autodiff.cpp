// Copyright 2026 The stdetr Authors.
// SPDX-License-Identifier: Apache-2.0

#include "stdetr/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "stdetr/error.hpp"

namespace stdetr {

const Tensor& Var::value() const { return tape_->value(id_); }

// --- Tape --------------------------------------------------------------------

Var Tape::push(Node node) {
  if (check_finite_ && !node.value.all_finite())
    fail(Errc::kNonFinite, "non-finite value recorded at tape node " +
                               std::to_string(nodes_.size()));
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Tensor value) { return push(Node{std::move(value), {}, false, nullptr, {}}); }

Var Tape::variable(Tensor value) { return push(Node{std::move(value), {}, true, nullptr, {}}); }

Var Tape::parameter(Parameter& p) { return push(Node{p.value, {}, true, &p, {}}); }

Var Tape::record(Tensor value, std::initializer_list<Var> inputs, BackwardFn fn) {
  return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()),
                std::move(fn));
}

Var Tape::record(Tensor value, std::span<const Var> inputs, BackwardFn fn) {
  bool needs = false;
  for (const Var& v : inputs) {
    if (&v.tape() != this) fail(Errc::kInvalidArgument, "op mixes vars from different tapes");
    needs = needs || nodes_[v.id()].requires_grad;
  }
  Node node{std::move(value), {}, needs, nullptr, {}};
  if (needs) node.backward = std::move(fn);
  return push(std::move(node));
}

Tensor& Tape::grad_buffer(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.empty()) n.grad = Tensor(n.value.shape(), 0.0);
  return n.grad;
}

void Tape::backward(Var loss) {
  if (&loss.tape() != this) fail(Errc::kInvalidArgument, "loss belongs to another tape");
  if (loss.value().size() != 1)
    fail(Errc::kNotScalar, "backward() needs a scalar, got " + shape_string(loss.shape()));
  for (auto& n : nodes_) n.grad = Tensor();
  grad_buffer(loss.id())[0] = 1.0;
  for (std::size_t id = loss.id() + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.requires_grad || n.grad.empty()) continue;
    if (n.backward) n.backward(*this, id);
    if (n.param != nullptr) {
      Parameter& p = *n.param;
      if (p.grad.shape() != p.value.shape()) p.grad = Tensor(p.value.shape(), 0.0);
      for (std::size_t i = 0; i < p.grad.size(); ++i) p.grad[i] += n.grad[i];
    }
  }
}

Tensor Tape::grad(Var v) const {
  const Node& n = nodes_[v.id()];
  return n.grad.empty() ? Tensor(n.value.shape(), 0.0) : n.grad;
}

void Tape::clear() {
  nodes_.clear();
  branches_ = Tape().branches_;
}

// --- ops -----------------------------------------------------------------------

namespace {

void require_matrix(const Var& a, const char* op) {
  if (a.value().rank() != 2)
    fail(Errc::kShapeMismatch, std::string(op) + " expects a matrix, got " +
                                   shape_string(a.shape()));
}

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape())
    fail(Errc::kShapeMismatch, std::string(op) + ": " + shape_string(a.shape()) + " vs " +
                                   shape_string(b.shape()));
}

void accumulate(Tensor& dst, const Tensor& src, double s = 1.0) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += s * src[i];
}

}  // namespace

Var matmul(Var a, Var b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k)
    fail(Errc::kShapeMismatch, "matmul inner dims: " + shape_string(a.shape()) + " x " +
                                   shape_string(b.shape()));
  Tensor out = Tensor::matrix(m, n);
  kernels::gemm_nn(a.value().data(), b.value().data(), out.data(), m, k, n, false);
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {a, b}, [ia, ib, m, k, n](Tape& t, std::size_t self) {
    const Tensor& g = t.out_grad(self);
    if (t.requires_grad(ia))
      kernels::gemm_nt(g.data(), t.value(ib).data(), t.grad_buffer(ia).data(), m, n, k, true);
    if (t.requires_grad(ib))
      kernels::gemm_tn(t.value(ia).data(), g.data(), t.grad_buffer(ib).data(), k, m, n, true);
  });
}

Var add(Var a, Var b) {
  require_same_shape(a, b, "add");
  Tensor out = a.value();
  accumulate(out, b.value());
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {a, b}, [ia, ib](Tape& t, std::size_t self) {
    const Tensor& g = t.out_grad(self);
    if (t.requires_grad(ia)) accumulate(t.grad_buffer(ia), g);
    if (t.requires_grad(ib)) accumulate(t.grad_buffer(ib), g);
  });
}

Var sub(Var a, Var b) {
  require_same_shape(a, b, "sub");
  Tensor out = a.value();
  accumulate(out, b.value(), -1.0);
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {a, b}, [ia, ib](Tape& t, std::size_t self) {
    const Tensor& g = t.out_grad(self);
    if (t.requires_grad(ia)) accumulate(t.grad_buffer(ia), g);
    if (t.requires_grad(ib)) accumulate(t.grad_buffer(ib), g, -1.0);
  });
}

Var scale(Var a, double s) {
  Tensor out = a.value();
  for (double& v : out.values()) v *= s;
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), {a}, [ia, s](Tape& t, std::size_t self) {
    accumulate(t.grad_buffer(ia), t.out_grad(self), s);
  });
}

Var relu(Var a) {
  Tensor out = a.value();
  std::uint64_t mask = 0;
  for (double& v : out.values()) {
    mask = (mask * 31) ^ static_cast<std::uint64_t>(v > 0.0);
    v = v > 0.0 ? v : 0.0;
  }
  a.tape().note_branch(mask);
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), {a}, [ia](Tape& t, std::size_t self) {
    const Tensor& g = t.out_grad(self);
    const Tensor& x = t.value(ia);
    Tensor& ga = t.grad_buffer(ia);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (x[i] > 0.0) ga[i] += g[i];
  });
}

Var sigmoid(Var a) {
  Tensor out = a.value();
  for (double& v : out.values()) v = 1.0 / (1.0 + std::exp(-v));
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), {a}, [ia](Tape& t, std::size_t self) {
    const Tensor& g = t.out_grad(self);
    const Tensor& y = t.value(self);
    Tensor& ga = t.grad_buffer(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i] * (1.0 - y[i]);
  });
}

Var softmax_rows(Var a) {
  require_matrix(a, "softmax_rows");
  if (!a.value().all_finite()) fail(Errc::kNonFinite, "softmax_rows input is not finite");
  const std::size_t r = a.rows(), c = a.cols();
  Tensor out = Tensor::matrix(r, c);
  kernels::softmax_rows(a.value().data(), out.data(), r, c);
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), {a}, [ia, r, c](Tape& t, std::size_t self) {
    const Tensor& g = t.out_grad(self);
    const Tensor& y = t.value(self);
    Tensor& ga = t.grad_buffer(ia);
    for (std::size_t i = 0; i < r; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < c; ++j) dot += g(i, j) * y(i, j);
      for (std::size_t j = 0; j < c; ++j) ga(i, j) += y(i, j) * (g(i, j) - dot);
    }
  });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  require_matrix(x, "layer_norm");
  const std::size_t r = x.rows(), c = x.cols();
  if (gain.shape() != Shape{1, c} || bias.shape() != Shape{1, c})
    fail(Errc::kShapeMismatch, "layer_norm gain/bias must be 1x" + std::to_string(c));
  Tensor out = Tensor::matrix(r, c);
  Tensor xhat = Tensor::matrix(r, c);
  std::vector<double> inv_std(r);
  const Tensor& xv = x.value();
  for (std::size_t i = 0; i < r; ++i) {
    double mean = 0.0;
    for (std::size_t j = 0; j < c; ++j) mean += xv(i, j);
    mean /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t j = 0; j < c; ++j) var += (xv(i, j) - mean) * (xv(i, j) - mean);
    var /= static_cast<double>(c);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < c; ++j) {
      xhat(i, j) = (xv(i, j) - mean) * inv_std[i];
      out(i, j) = gain.value()[j] * xhat(i, j) + bias.value()[j];
    }
  }
  const std::size_t ix = x.id(), ig = gain.id(), ib = bias.id();
  return x.tape().record(
      std::move(out), {x, gain, bias},
      [ix, ig, ib, r, c, xhat = std::move(xhat), inv_std = std::move(inv_std)](
          Tape& t, std::size_t self) {
        const Tensor& g = t.out_grad(self);
        if (t.requires_grad(ig)) {
          Tensor& gg = t.grad_buffer(ig);
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) gg[j] += g(i, j) * xhat(i, j);
        }
        if (t.requires_grad(ib)) {
          Tensor& gb = t.grad_buffer(ib);
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) gb[j] += g(i, j);
        }
        if (t.requires_grad(ix)) {
          const Tensor& gain_v = t.value(ig);
          Tensor& gx = t.grad_buffer(ix);
          std::vector<double> dxhat(c);
          for (std::size_t i = 0; i < r; ++i) {
            double mean_d = 0.0, mean_dx = 0.0;
            for (std::size_t j = 0; j < c; ++j) {
              dxhat[j] = g(i, j) * gain_v[j];
              mean_d += dxhat[j];
              mean_dx += dxhat[j] * xhat(i, j);
            }
            mean_d /= static_cast<double>(c);
            mean_dx /= static_cast<double>(c);
            for (std::size_t j = 0; j < c; ++j)
              gx(i, j) += inv_std[i] * (dxhat[j] - mean_d - xhat(i, j) * mean_dx);
          }
        }
      });
}

Var concat(std::span<const Var> parts, std::size_t axis) {
  if (parts.empty()) fail(Errc::kInvalidArgument, "concat of nothing");
  if (axis > 1) fail(Errc::kInvalidArgument, "concat axis must be 0 or 1");
  for (const Var& p : parts) require_matrix(p, "concat");
  const std::size_t other = axis == 0 ? parts[0].cols() : parts[0].rows();
  std::size_t total = 0;
  std::vector<std::size_t> ids, offsets;
  for (const Var& p : parts) {
    if ((axis == 0 ? p.cols() : p.rows()) != other)
      fail(Errc::kShapeMismatch, "concat: " + shape_string(parts[0].shape()) + " vs " +
                                     shape_string(p.shape()));
    ids.push_back(p.id());
    offsets.push_back(total);
    total += axis == 0 ? p.rows() : p.cols();
  }
  const std::size_t rows = axis == 0 ? total : other;
  const std::size_t cols = axis == 0 ? other : total;
  Tensor out = Tensor::matrix(rows, cols);
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& v = parts[k].value();
    for (std::size_t i = 0; i < v.rows(); ++i)
      for (std::size_t j = 0; j < v.cols(); ++j)
        (axis == 0 ? out(offsets[k] + i, j) : out(i, offsets[k] + j)) = v(i, j);
  }
  return parts[0].tape().record(
      std::move(out), parts,
      [ids = std::move(ids), offsets = std::move(offsets), axis](Tape& t, std::size_t self) {
        const Tensor& g = t.out_grad(self);
        for (std::size_t k = 0; k < ids.size(); ++k) {
          if (!t.requires_grad(ids[k])) continue;
          Tensor& gp = t.grad_buffer(ids[k]);
          for (std::size_t i = 0; i < gp.rows(); ++i)
            for (std::size_t j = 0; j < gp.cols(); ++j)
              gp(i, j) += axis == 0 ? g(offsets[k] + i, j) : g(i, offsets[k] + j);
        }
      });
}

Var reshape(Var a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), {a}, [ia](Tape& t, std::size_t self) {
    accumulate(t.grad_buffer(ia), t.out_grad(self));
  });
}

Var transpose(Var a) {
  require_matrix(a, "transpose");
  const std::size_t r = a.rows(), c = a.cols();
  Tensor out = Tensor::matrix(c, r);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out(j, i) = a.value()(i, j);
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), {a}, [ia, r, c](Tape& t, std::size_t self) {
    const Tensor& g = t.out_grad(self);
    Tensor& ga = t.grad_buffer(ia);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) ga(i, j) += g(j, i);
  });
}

Var slice(Var a, std::size_t axis, std::size_t begin, std::size_t end) {
  require_matrix(a, "slice");
  if (axis > 1) fail(Errc::kInvalidArgument, "slice axis must be 0 or 1");
  const std::size_t extent = axis == 0 ? a.rows() : a.cols();
  if (begin >= end || end > extent)
    fail(Errc::kShapeMismatch, "slice [" + std::to_string(begin) + "," + std::to_string(end) +
                                   ") out of " + shape_string(a.shape()));
  const std::size_t r = axis == 0 ? end - begin : a.rows();
  const std::size_t c = axis == 1 ? end - begin : a.cols();
  const std::size_t r0 = axis == 0 ? begin : 0, c0 = axis == 1 ? begin : 0;
  Tensor out = Tensor::matrix(r, c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out(i, j) = a.value()(r0 + i, c0 + j);
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), {a}, [ia, r, c, r0, c0](Tape& t, std::size_t self) {
    const Tensor& g = t.out_grad(self);
    Tensor& ga = t.grad_buffer(ia);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) ga(r0 + i, c0 + j) += g(i, j);
  });
}

Var gather_rows(Var a, std::span<const std::size_t> rows) {
  require_matrix(a, "gather_rows");
  if (rows.empty()) fail(Errc::kShapeMismatch, "gather_rows with no rows");
  const std::size_t c = a.cols();
  Tensor out = Tensor::matrix(rows.size(), c);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= a.rows()) fail(Errc::kShapeMismatch, "gather_rows index out of range");
    for (std::size_t j = 0; j < c; ++j) out(i, j) = a.value()(rows[i], j);
  }
  const std::size_t ia = a.id();
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return a.tape().record(std::move(out), {a}, [ia, c, idx = std::move(idx)](Tape& t,
                                                                            std::size_t self) {
    const Tensor& g = t.out_grad(self);
    Tensor& ga = t.grad_buffer(ia);
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t j = 0; j < c; ++j) ga(idx[i], j) += g(i, j);
  });
}

Var tile(Var row, std::size_t reps) {
  require_matrix(row, "tile");
  if (row.rows() != 1) fail(Errc::kShapeMismatch, "tile expects a single row");
  if (reps == 0) fail(Errc::kShapeMismatch, "tile with zero repetitions");
  const std::size_t c = row.cols();
  Tensor out = Tensor::matrix(reps, c);
  for (std::size_t i = 0; i < reps; ++i)
    std::copy(row.value().data().begin(), row.value().data().end(), out.data().begin() + i * c);
  const std::size_t ia = row.id();
  return row.tape().record(std::move(out), {row}, [ia, reps, c](Tape& t, std::size_t self) {
    const Tensor& g = t.out_grad(self);
    Tensor& ga = t.grad_buffer(ia);
    for (std::size_t i = 0; i < reps; ++i)
      for (std::size_t j = 0; j < c; ++j) ga[j] += g(i, j);
  });
}

Var sum(Var a) {
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  const std::size_t ia = a.id();
  return a.tape().record(Tensor::scalar(s), {a}, [ia](Tape& t, std::size_t self) {
    const double g = t.out_grad(self)[0];
    for (double& v : t.grad_buffer(ia).values()) v += g;
  });
}

Var cross_entropy_logits(Var logits, std::span<const int> targets,
                         std::span<const double> weights) {
  require_matrix(logits, "cross_entropy_logits");
  const std::size_t n = logits.rows(), c = logits.cols();
  if (targets.size() != n || weights.size() != n)
    fail(Errc::kShapeMismatch, "cross_entropy_logits: need one target and weight per row");
  Tensor probs = Tensor::matrix(n, c);
  kernels::softmax_rows(logits.value().data(), probs.data(), n, c);
  double loss = 0.0;
  const Tensor& z = logits.value();
  for (std::size_t i = 0; i < n; ++i) {
    if (targets[i] < 0 || static_cast<std::size_t>(targets[i]) >= c)
      fail(Errc::kInvalidArgument, "cross_entropy_logits target out of range");
    double mx = z(i, 0);
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, z(i, j));
    double lse = 0.0;
    for (std::size_t j = 0; j < c; ++j) lse += std::exp(z(i, j) - mx);
    lse = mx + std::log(lse);
    loss += weights[i] * (lse - z(i, static_cast<std::size_t>(targets[i])));
  }
  const std::size_t ia = logits.id();
  std::vector<int> tg(targets.begin(), targets.end());
  std::vector<double> w(weights.begin(), weights.end());
  return logits.tape().record(
      Tensor::scalar(loss), {logits},
      [ia, n, c, probs = std::move(probs), tg = std::move(tg), w = std::move(w)](
          Tape& t, std::size_t self) {
        const double g = t.out_grad(self)[0];
        Tensor& ga = t.grad_buffer(ia);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < c; ++j) {
            const double onehot = static_cast<int>(j) == tg[i] ? 1.0 : 0.0;
            ga(i, j) += g * w[i] * (probs(i, j) - onehot);
          }
      });
}

Var l1_distance(Var a, Var b) {
  require_same_shape(a, b, "l1_distance");
  double s = 0.0;
  std::uint64_t signs = 0;
  for (std::size_t i = 0; i < a.value().size(); ++i) {
    const double d = a.value()[i] - b.value()[i];
    signs = (signs * 31) ^ static_cast<std::uint64_t>((d > 0.0) + 2 * (d < 0.0));
    s += std::abs(d);
  }
  a.tape().note_branch(signs);
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(Tensor::scalar(s), {a, b}, [ia, ib](Tape& t, std::size_t self) {
    const double g = t.out_grad(self)[0];
    const Tensor& av = t.value(ia);
    const Tensor& bv = t.value(ib);
    for (std::size_t i = 0; i < av.size(); ++i) {
      const double d = av[i] - bv[i];
      const double sg = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
      if (t.requires_grad(ia)) t.grad_buffer(ia)[i] += g * sg;
      if (t.requires_grad(ib)) t.grad_buffer(ib)[i] -= g * sg;
    }
  });
}

namespace {

struct GiouParts {
  double value;
  // d value / d (cx, cy, w, h) of each box.
  double da[4];
  double db[4];
  std::uint64_t branches;  // which edges were chosen, for the tape signature
};

GiouParts giou_with_grad(const double* a, const double* b) {
  if (!(a[2] > 0.0 && a[3] > 0.0 && b[2] > 0.0 && b[3] > 0.0))
    fail(Errc::kDegenerateBox, "generalized_iou on a box with non-positive extent");
  GiouParts out{};
  double area[2] = {a[2] * a[3], b[2] * b[3]};
  double inter_len[2], enc_len[2];
  // Per-axis bookkeeping for the backward pass: which box supplies each edge.
  bool inter_pos[2], inter_lo_a[2], inter_hi_a[2], enc_lo_a[2], enc_hi_a[2];
  for (int ax = 0; ax < 2; ++ax) {
    const double alo = a[ax] - 0.5 * a[ax + 2], ahi = a[ax] + 0.5 * a[ax + 2];
    const double blo = b[ax] - 0.5 * b[ax + 2], bhi = b[ax] + 0.5 * b[ax + 2];
    inter_lo_a[ax] = alo >= blo;
    inter_hi_a[ax] = ahi <= bhi;
    const double lo = inter_lo_a[ax] ? alo : blo;
    const double hi = inter_hi_a[ax] ? ahi : bhi;
    inter_pos[ax] = hi > lo;
    inter_len[ax] = inter_pos[ax] ? hi - lo : 0.0;
    enc_lo_a[ax] = alo <= blo;
    enc_hi_a[ax] = ahi >= bhi;
    enc_len[ax] = (enc_hi_a[ax] ? ahi : bhi) - (enc_lo_a[ax] ? alo : blo);
  }
  const double inter = inter_len[0] * inter_len[1];
  const double uni = area[0] + area[1] - inter;
  const double enc = enc_len[0] * enc_len[1];
  out.value = inter / uni - 1.0 + uni / enc;
  out.branches = 0;
  for (int ax = 0; ax < 2; ++ax)
    out.branches = (out.branches << 5) | (inter_pos[ax] << 4) | (inter_lo_a[ax] << 3) |
                   (inter_hi_a[ax] << 2) | (enc_lo_a[ax] << 1) | enc_hi_a[ax];

  const double d_inter = 1.0 / uni + inter / (uni * uni) - 1.0 / enc;
  const double d_area = -inter / (uni * uni) + 1.0 / enc;
  const double d_enc = -uni / (enc * enc);

  for (int ax = 0; ax < 2; ++ax) {
    const int other = 1 - ax;
    // Edge gradients: lo = c - s/2, hi = c + s/2.
    const double d_inter_len = d_inter * inter_len[other];
    const double d_enc_len = d_enc * enc_len[other];
    double dlo_a = 0, dhi_a = 0, dlo_b = 0, dhi_b = 0;
    if (inter_pos[ax]) {
      (inter_hi_a[ax] ? dhi_a : dhi_b) += d_inter_len;
      (inter_lo_a[ax] ? dlo_a : dlo_b) -= d_inter_len;
    }
    (enc_hi_a[ax] ? dhi_a : dhi_b) += d_enc_len;
    (enc_lo_a[ax] ? dlo_a : dlo_b) -= d_enc_len;
    out.da[ax] += dlo_a + dhi_a;
    out.da[ax + 2] += 0.5 * (dhi_a - dlo_a);
    out.db[ax] += dlo_b + dhi_b;
    out.db[ax + 2] += 0.5 * (dhi_b - dlo_b);
  }
  // Area terms: area = w * h.
  out.da[2] += d_area * a[3];
  out.da[3] += d_area * a[2];
  out.db[2] += d_area * b[3];
  out.db[3] += d_area * b[2];
  return out;
}

}  // namespace

Var generalized_iou(Var a, Var b) {
  require_same_shape(a, b, "generalized_iou");
  if (a.value().rank() != 2 || a.cols() != 4)
    fail(Errc::kShapeMismatch, "generalized_iou expects k x 4 boxes");
  const std::size_t k = a.rows();
  Tensor out = Tensor::matrix(k, 1);
  Tensor da = Tensor::matrix(k, 4), db = Tensor::matrix(k, 4);
  for (std::size_t i = 0; i < k; ++i) {
    const GiouParts p =
        giou_with_grad(a.value().data().data() + 4 * i, b.value().data().data() + 4 * i);
    out[i] = p.value;
    a.tape().note_branch(p.branches);
    for (int j = 0; j < 4; ++j) {
      da(i, j) = p.da[j];
      db(i, j) = p.db[j];
    }
  }
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(
      std::move(out), {a, b},
      [ia, ib, k, da = std::move(da), db = std::move(db)](Tape& t, std::size_t self) {
        const Tensor& g = t.out_grad(self);
        for (std::size_t i = 0; i < k; ++i)
          for (std::size_t j = 0; j < 4; ++j) {
            if (t.requires_grad(ia)) t.grad_buffer(ia)(i, j) += g[i] * da(i, j);
            if (t.requires_grad(ib)) t.grad_buffer(ib)(i, j) += g[i] * db(i, j);
          }
      });
}

Var im2col(Var x, const kernels::ConvGeometry& g) {
  require_matrix(x, "im2col");
  if (x.rows() != g.height * g.width || x.cols() != g.channels)
    fail(Errc::kShapeMismatch, "im2col input " + shape_string(x.shape()) + " vs geometry " +
                                   std::to_string(g.height) + "x" + std::to_string(g.width) +
                                   "x" + std::to_string(g.channels));
  Tensor out = Tensor::matrix(g.out_height() * g.out_width(), g.patch());
  kernels::im2col(x.value().data(), out.data(), g);
  const std::size_t ia = x.id();
  return x.tape().record(std::move(out), {x}, [ia, g](Tape& t, std::size_t self) {
    kernels::col2im(t.out_grad(self).data(), t.grad_buffer(ia).data(), g);
  });
}

// --- grad_check ----------------------------------------------------------------

namespace {

void check_eps(double eps) {
  if (!(eps >= 1e-7 && eps <= 1e-3))
    fail(Errc::kInvalidArgument, "grad_check eps must lie in [1e-7, 1e-3]");
}

struct Probe {
  double value;
  std::uint64_t branches;
};

bool same(const Probe& a, const Probe& b) {
  return std::memcmp(&a.value, &b.value, sizeof a.value) == 0 && a.branches == b.branches;
}

double rel_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

}  // namespace

double grad_check(const std::function<Var(Tape&, Var)>& f, const Tensor& x, double eps,
                  GradCheckStats* stats) {
  check_eps(eps);
  auto eval = [&](const Tensor& at) {
    Tape tape;
    Var out = f(tape, tape.constant(at));
    if (out.value().size() != 1) fail(Errc::kNotScalar, "grad_check function is not scalar");
    return Probe{out.value()[0], tape.branch_signature()};
  };
  const Probe f0 = eval(x);
  const Probe f1 = eval(x);
  if (!same(f0, f1))
    fail(Errc::kNonDeterministicFunction, "two forward passes disagree");

  Tape tape;
  Var v = tape.variable(x);
  Var out = f(tape, v);
  tape.backward(out);
  const Tensor analytic = tape.grad(v);

  GradCheckStats local;
  double worst = 0.0;
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + eps;
    const Probe fp = eval(probe);
    probe[i] = x[i] - eps;
    const Probe fm = eval(probe);
    probe[i] = x[i];
    if (fp.branches != f0.branches || fm.branches != f0.branches) {
      ++local.skipped;
      continue;
    }
    ++local.checked;
    worst = std::max(worst, rel_error(analytic[i], (fp.value - fm.value) / (2.0 * eps)));
  }
  if (stats) *stats = local;
  return worst;
}

double grad_check_parameters(const std::function<Var(Tape&)>& loss,
                             std::span<Parameter* const> params, double eps,
                             std::size_t max_entries, GradCheckStats* stats,
                             Difference scheme) {
  check_eps(eps);
  auto eval = [&] {
    Tape tape;
    const double v = loss(tape).value().item();
    return Probe{v, tape.branch_signature()};
  };
  const Probe f0 = eval();
  const Probe f1 = eval();
  if (!same(f0, f1))
    fail(Errc::kNonDeterministicFunction, "two forward passes disagree");

  for (Parameter* p : params) p->grad = Tensor(p->value.shape(), 0.0);
  {
    Tape tape;
    tape.backward(loss(tape));
  }
  GradCheckStats local;
  double worst = 0.0;
  for (Parameter* p : params) {
    const std::size_t n = p->value.size();
    const std::size_t probes = max_entries == 0 ? n : std::min(n, max_entries);
    for (std::size_t k = 0; k < probes; ++k) {
      const std::size_t i = probes == n ? k : (k * n) / probes;
      const double orig = p->value[i];
      auto central = [&](double h, bool& kink) {
        p->value[i] = orig + h;
        const Probe fp = eval();
        p->value[i] = orig - h;
        const Probe fm = eval();
        p->value[i] = orig;
        kink = kink || fp.branches != f0.branches || fm.branches != f0.branches;
        return (fp.value - fm.value) / (2.0 * h);
      };
      bool kink = false;
      double numeric = central(eps, kink);
      if (scheme == Difference::kRichardson)
        numeric = (4.0 * central(0.5 * eps, kink) - numeric) / 3.0;
      if (kink) {
        ++local.skipped;
        continue;
      }
      ++local.checked;
      worst = std::max(worst, rel_error(p->grad[i], numeric));
    }
  }
  if (stats) *stats = local;
  return worst;
}

}  // namespace stdetr
