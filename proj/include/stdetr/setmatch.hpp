// Copyright 2026 The stdetr Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <utility>
#include <vector>

#include "stdetr/autodiff.hpp"

namespace stdetr {

/// Normalized (cx, cy, w, h) box.
struct Box {
  double cx = 0, cy = 0, w = 0, h = 0;

  double x0() const { return cx - 0.5 * w; }
  double y0() const { return cy - 0.5 * h; }
  double x1() const { return cx + 0.5 * w; }
  double y1() const { return cy + 0.5 * h; }
  double area() const { return w * h; }

  static Box from_corners(double x0, double y0, double x1, double y1) {
    return {0.5 * (x0 + x1), 0.5 * (y0 + y1), x1 - x0, y1 - y0};
  }
  bool operator==(const Box&) const = default;
};

/// Class 0 is "moving"; with C = 1 real class the no-object logit sits at index 1.
inline constexpr int kMovingClass = 0;
inline constexpr int kNoObjectClass = 1;
inline constexpr std::size_t kNumLogits = 2;

struct GroundTruth {
  int cls = kMovingClass;
  Box box;
  bool operator==(const GroundTruth&) const = default;
};

/// Plain-value predictions for one output step: boxes Nq x 4 (cx, cy, w, h)
/// and logits Nq x (C + 1).
struct DetectionSet {
  Tensor boxes;
  Tensor logits;

  std::size_t slots() const { return boxes.rows(); }
  Box box(std::size_t i) const { return {boxes(i, 0), boxes(i, 1), boxes(i, 2), boxes(i, 3)}; }
};

struct MatchAssignment {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;  // (gt, prediction), gt ascending
  double total_cost = 0.0;
};

/// Minimum-cost injective assignment of rows to columns (rows <= cols).
/// Among optimal assignments the lexicographically smallest pair list wins.
/// An empty matrix (zero rows) yields an empty assignment with cost 0.
MatchAssignment hungarian(const Tensor& cost);
MatchAssignment hungarian(const std::vector<std::vector<double>>& cost, std::size_t cols);

/// IoU - (enclosing - union) / enclosing. Throws DegenerateBox for w or h <= 0.
double giou(const Box& a, const Box& b);

struct LossWeights {
  double cls = 1.0;
  double l1 = 5.0;
  double giou = 2.0;
  double no_object = 0.1;
};

/// #gt x Nq matching cost:
///   -cls * p_j(c_i) + l1 * |b_i - b_j|_1 - giou * giou(b_i, b_j).
/// With no ground truth the result is an empty (0-row) matrix, returned as
/// a default-constructed Tensor.
Tensor match_cost(const DetectionSet& preds, const std::vector<GroundTruth>& gts,
                  const LossWeights& w = {});

/// Cost matrix + Hungarian. Throws TooManyObjects when #gt > Nq.
MatchAssignment match(const DetectionSet& preds, const std::vector<GroundTruth>& gts,
                      const LossWeights& w = {});

struct SetLoss {
  Var total;
  // Already divided by the slot count, so total == class + l1 + giou.
  double class_term = 0.0;
  double l1_term = 0.0;
  double giou_term = 0.0;
};

/// Bipartite loss averaged over the Nq slots:
///   matched:   CE(gt class) + l1 * |b - b^|_1 + giou * (1 - giou(b, b^))
///   unmatched: no_object * CE(no-object)
/// The assignment is a constant; gradients flow through logits and boxes.
SetLoss set_loss(Var logits, Var boxes, const std::vector<GroundTruth>& gts,
                 const MatchAssignment& assignment, const LossWeights& w = {});

}  // namespace stdetr
