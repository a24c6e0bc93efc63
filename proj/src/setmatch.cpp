// Copyright 2026 The stdetr Authors.
// SPDX-License-Identifier: Apache-2.0

#include "stdetr/setmatch.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "stdetr/error.hpp"

namespace stdetr {
namespace {

using Matrix = std::vector<std::vector<double>>;

// Potentials-based shortest augmenting path; O(n^2 m) for n <= m.
// Returns row -> column.
std::vector<std::size_t> solve_assignment(const Matrix& a, std::size_t n, std::size_t m) {
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
  std::vector<std::size_t> p(m + 1, 0), way(m + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(m + 1, inf);
    std::vector<bool> used(m + 1, false);
    do {
      used[j0] = true;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = a[i0 - 1][j - 1] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= m; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<std::size_t> row_to_col(n, 0);
  for (std::size_t j = 1; j <= m; ++j)
    if (p[j] != 0) row_to_col[p[j] - 1] = j - 1;
  return row_to_col;
}

// Optimal cost of assigning rows [first, n) to the columns not yet taken.
double residual_optimum(const Matrix& a, std::size_t first, const std::vector<bool>& taken) {
  std::vector<std::size_t> free_cols;
  for (std::size_t j = 0; j < taken.size(); ++j)
    if (!taken[j]) free_cols.push_back(j);
  const std::size_t n = a.size() - first;
  if (n == 0) return 0.0;
  Matrix sub(n, std::vector<double>(free_cols.size()));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < free_cols.size(); ++j) sub[i][j] = a[first + i][free_cols[j]];
  const auto sol = solve_assignment(sub, n, free_cols.size());
  double c = 0.0;
  for (std::size_t i = 0; i < n; ++i) c += sub[i][sol[i]];
  return c;
}

}  // namespace

MatchAssignment hungarian(const std::vector<std::vector<double>>& cost, std::size_t cols) {
  const std::size_t n = cost.size(), m = cols;
  MatchAssignment out;
  if (n == 0) return out;
  if (n > m)
    fail(Errc::kInvalidArgument, "hungarian needs rows <= cols (" + std::to_string(n) + " > " +
                                     std::to_string(m) + ")");
  for (const auto& row : cost) {
    if (row.size() != m) fail(Errc::kShapeMismatch, "hungarian: ragged cost matrix");
    for (double c : row)
      if (!std::isfinite(c)) fail(Errc::kNonFinite, "hungarian: non-finite cost");
  }

  const auto sol = solve_assignment(cost, n, m);
  double optimum = 0.0;
  for (std::size_t i = 0; i < n; ++i) optimum += cost[i][sol[i]];

  // Lexicographic tie-break: fix rows in order to the smallest column that
  // still admits an optimal completion.
  double scale = 1.0;
  for (const auto& row : cost)
    for (double c : row) scale = std::max(scale, std::abs(c));
  const double tol = 1e-12 * scale * static_cast<double>(n);
  std::vector<bool> taken(m, false);
  double prefix = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t chosen = sol[i];
    for (std::size_t j = 0; j < m; ++j) {
      if (taken[j]) continue;
      if (j == sol[i] && std::all_of(out.pairs.begin(), out.pairs.end(),
                                     [&](const auto& pr) { return pr.second == sol[pr.first]; })) {
        chosen = j;
        break;
      }
      taken[j] = true;
      const double c = prefix + cost[i][j] + residual_optimum(cost, i + 1, taken);
      taken[j] = false;
      if (c <= optimum + tol) {
        chosen = j;
        break;
      }
    }
    taken[chosen] = true;
    prefix += cost[i][chosen];
    out.pairs.emplace_back(i, chosen);
  }
  out.total_cost = 0.0;
  for (const auto& [i, j] : out.pairs) out.total_cost += cost[i][j];
  return out;
}

MatchAssignment hungarian(const Tensor& cost) {
  if (cost.empty()) return {};
  if (cost.rank() != 2) fail(Errc::kShapeMismatch, "hungarian expects a matrix");
  Matrix a(cost.rows(), std::vector<double>(cost.cols()));
  for (std::size_t i = 0; i < cost.rows(); ++i)
    for (std::size_t j = 0; j < cost.cols(); ++j) a[i][j] = cost(i, j);
  return hungarian(a, cost.cols());
}

double giou(const Box& a, const Box& b) {
  if (!(a.w > 0 && a.h > 0 && b.w > 0 && b.h > 0))
    fail(Errc::kDegenerateBox, "giou on a box with non-positive extent");
  const double iw = std::max(0.0, std::min(a.x1(), b.x1()) - std::max(a.x0(), b.x0()));
  const double ih = std::max(0.0, std::min(a.y1(), b.y1()) - std::max(a.y0(), b.y0()));
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  const double enc = (std::max(a.x1(), b.x1()) - std::min(a.x0(), b.x0())) *
                     (std::max(a.y1(), b.y1()) - std::min(a.y0(), b.y0()));
  return inter / uni - (enc - uni) / enc;
}

Tensor match_cost(const DetectionSet& preds, const std::vector<GroundTruth>& gts,
                  const LossWeights& w) {
  const std::size_t nq = preds.slots();
  if (nq == 0) fail(Errc::kInvalidArgument, "match_cost needs at least one prediction slot");
  if (gts.empty()) return {};
  const std::size_t c = preds.logits.cols();
  Tensor probs = Tensor::matrix(nq, c);
  kernels::softmax_rows(preds.logits.data(), probs.data(), nq, c);
  Tensor cost = Tensor::matrix(gts.size(), nq);
  for (std::size_t i = 0; i < gts.size(); ++i) {
    const Box& g = gts[i].box;
    for (std::size_t j = 0; j < nq; ++j) {
      const Box p = preds.box(j);
      const double l1 = std::abs(g.cx - p.cx) + std::abs(g.cy - p.cy) + std::abs(g.w - p.w) +
                        std::abs(g.h - p.h);
      cost(i, j) = -w.cls * probs(j, static_cast<std::size_t>(gts[i].cls)) + w.l1 * l1 -
                   w.giou * giou(g, p);
    }
  }
  return cost;
}

MatchAssignment match(const DetectionSet& preds, const std::vector<GroundTruth>& gts,
                      const LossWeights& w) {
  if (gts.size() > preds.slots())
    fail(Errc::kTooManyObjects, std::to_string(gts.size()) + " objects but only " +
                                    std::to_string(preds.slots()) + " prediction slots");
  return hungarian(match_cost(preds, gts, w));
}

SetLoss set_loss(Var logits, Var boxes, const std::vector<GroundTruth>& gts,
                 const MatchAssignment& assignment, const LossWeights& w) {
  const std::size_t nq = logits.rows();
  if (boxes.shape() != Shape{nq, 4} || logits.cols() < 2)
    fail(Errc::kShapeMismatch, "set_loss: logits " + shape_string(logits.shape()) +
                                   " / boxes " + shape_string(boxes.shape()));
  if (assignment.pairs.size() != std::min(gts.size(), nq))
    fail(Errc::kInvalidAssignment, "assignment does not cover the ground truth");
  std::vector<bool> gt_seen(gts.size(), false), slot_seen(nq, false);
  for (const auto& [g, p] : assignment.pairs) {
    if (g >= gts.size() || p >= nq || gt_seen[g] || slot_seen[p])
      fail(Errc::kInvalidAssignment, "assignment is not an injection into the slots");
    gt_seen[g] = slot_seen[p] = true;
  }

  Tape& tape = logits.tape();
  const int no_object = static_cast<int>(logits.cols()) - 1;
  std::vector<int> targets(nq, no_object);
  std::vector<double> weights(nq, w.no_object);
  for (const auto& [g, p] : assignment.pairs) {
    targets[p] = gts[g].cls;
    weights[p] = w.cls;
  }
  const double inv = 1.0 / static_cast<double>(nq);
  SetLoss out;
  Var ce = cross_entropy_logits(logits, targets, weights);
  out.class_term = ce.value()[0] * inv;
  Var total = ce;

  if (!assignment.pairs.empty()) {
    const std::size_t k = assignment.pairs.size();
    std::vector<std::size_t> slots;
    Tensor target = Tensor::matrix(k, 4);
    for (std::size_t r = 0; r < k; ++r) {
      const auto& [g, p] = assignment.pairs[r];
      slots.push_back(p);
      const Box& b = gts[g].box;
      target(r, 0) = b.cx;
      target(r, 1) = b.cy;
      target(r, 2) = b.w;
      target(r, 3) = b.h;
    }
    Var pred = gather_rows(boxes, slots);
    Var tgt = tape.constant(std::move(target));
    Var l1 = scale(l1_distance(pred, tgt), w.l1);
    // giou * sum(1 - g) == giou * k - giou * sum(g)
    Var g = sum(generalized_iou(pred, tgt));
    Var giou_term = sub(tape.constant(Tensor::scalar(w.giou * static_cast<double>(k))),
                        scale(g, w.giou));
    out.l1_term = l1.value()[0] * inv;
    out.giou_term = giou_term.value()[0] * inv;
    total = add(add(total, l1), giou_term);
  }
  out.total = scale(total, inv);
  return out;
}

}  // namespace stdetr
