// Copyright 2026 The stdetr Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "stdetr/setmatch.hpp"

namespace stdetr {

/// Intersection over union; throws DegenerateBox for non-positive extents.
double iou(const Box& a, const Box& b);

struct ScoredBox {
  Box box;
  double score = 0.0;
};

/// One evaluated image: detections and the ground truth they are judged against.
struct EvalImage {
  std::vector<ScoredBox> detections;
  std::vector<Box> ground_truth;
};

/// COCO-style AP at one IoU threshold, pooled over images. Per image,
/// detections are visited by descending score (ties keep insertion order) and
/// each claims the best-overlapping unclaimed ground truth with IoU >=
/// threshold. The pooled precision/recall curve is made monotone and read at
/// 101 recall points. Returns nullopt when there is no ground truth at all.
std::optional<double> average_precision(std::span<const EvalImage> images, double iou_threshold);
std::optional<double> average_precision(std::span<const ScoredBox> dets, std::span<const Box> gts,
                                        double iou_threshold);

struct ThresholdStats {
  double iou_threshold = 0.0;
  double ap = 0.0;
  std::size_t tp = 0, fp = 0, fn = 0;
};

struct EvalReport {
  double map_total = 0.0;  // mean AP over IoU 0.50:0.05:0.95
  double ap50 = 0.0;
  double ap75 = 0.0;
  std::vector<ThresholdStats> table;
  std::size_t images = 0;
  std::size_t ground_truths = 0;
  std::size_t detections = 0;

  nlohmann::json to_json() const;
  static EvalReport from_json(const nlohmann::json& j);
};

/// Keeps slots whose "moving" probability is at least the no-object
/// probability; score = that probability.
std::vector<ScoredBox> score_detections(const DetectionSet& preds);

/// Evaluates the "moving" class over matched lists of outputs and labels.
/// Throws CountMismatch when the lists differ in length.
EvalReport evaluate(std::span<const DetectionSet> outputs,
                    std::span<const std::vector<GroundTruth>> labels);
EvalReport evaluate_images(std::span<const EvalImage> images);

/// Grid used to lay one attention row out as an image: (H, W) for spatial
/// maps, (T, Nq) for query-trace maps.
struct AttentionLayout {
  std::size_t rows = 0;
  std::size_t cols = 0;
};

/// Writes one binary PGM per query row of a row-stochastic map, min-max
/// normalized to 0..255 (constant rows become mid-gray 128). Files are named
/// <prefix>_q<row>.pgm inside `dir`; the paths are returned in row order.
std::vector<std::filesystem::path> dump_attention(const Tensor& weights, AttentionLayout layout,
                                                  const std::filesystem::path& dir,
                                                  const std::string& prefix);

/// Reads a binary 8-bit PGM back as a rows x cols tensor of gray levels.
Tensor read_pgm(const std::filesystem::path& path);

}  // namespace stdetr
