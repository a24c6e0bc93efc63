// Copyright 2026 The stdetr Authors.
// SPDX-License-Identifier: Apache-2.0

#include "stdetr/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "stdetr/error.hpp"

namespace stdetr {

double iou(const Box& a, const Box& b) {
  if (!(a.w > 0 && a.h > 0 && b.w > 0 && b.h > 0))
    fail(Errc::kDegenerateBox, "iou on a box with non-positive extent");
  const double iw = std::max(0.0, std::min(a.x1(), b.x1()) - std::max(a.x0(), b.x0()));
  const double ih = std::max(0.0, std::min(a.y1(), b.y1()) - std::max(a.y0(), b.y0()));
  const double inter = iw * ih;
  return inter / (a.area() + b.area() - inter);
}

namespace {

struct Outcome {
  double score;
  bool tp;
};

struct Pooled {
  std::vector<Outcome> outcomes;  // in pooled rank order
  std::size_t gts = 0;
};

Pooled match_images(std::span<const EvalImage> images, double thr) {
  Pooled p;
  for (const EvalImage& img : images) {
    p.gts += img.ground_truth.size();
    std::vector<std::size_t> order(img.detections.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return img.detections[a].score > img.detections[b].score;
    });
    std::vector<bool> claimed(img.ground_truth.size(), false);
    for (std::size_t k : order) {
      const ScoredBox& d = img.detections[k];
      double best = -1.0;
      std::ptrdiff_t best_g = -1;
      for (std::size_t g = 0; g < img.ground_truth.size(); ++g) {
        if (claimed[g]) continue;
        const double v = iou(d.box, img.ground_truth[g]);
        if (v >= thr && v > best) {
          best = v;
          best_g = static_cast<std::ptrdiff_t>(g);
        }
      }
      if (best_g >= 0) claimed[static_cast<std::size_t>(best_g)] = true;
      p.outcomes.push_back({d.score, best_g >= 0});
    }
  }
  // Outcomes were appended image by image in score order; a stable sort keeps
  // ties in (image, rank) order.
  std::stable_sort(p.outcomes.begin(), p.outcomes.end(),
                   [](const Outcome& a, const Outcome& b) { return a.score > b.score; });
  return p;
}

double interpolated_ap(const Pooled& p) {
  const std::size_t n = p.outcomes.size();
  std::vector<double> recall(n), precision(n);
  double tp = 0, fp = 0;
  for (std::size_t i = 0; i < n; ++i) {
    (p.outcomes[i].tp ? tp : fp) += 1.0;
    recall[i] = tp / static_cast<double>(p.gts);
    precision[i] = tp / (tp + fp);
  }
  for (std::size_t i = n; i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);
  double sum = 0.0;
  for (int k = 0; k <= 100; ++k) {
    const double r = k / 100.0;
    const auto it = std::lower_bound(recall.begin(), recall.end(), r);
    if (it != recall.end()) sum += precision[static_cast<std::size_t>(it - recall.begin())];
  }
  return sum / 101.0;
}

}  // namespace

std::optional<double> average_precision(std::span<const EvalImage> images, double iou_threshold) {
  const Pooled p = match_images(images, iou_threshold);
  if (p.gts == 0) return std::nullopt;
  return interpolated_ap(p);
}

std::optional<double> average_precision(std::span<const ScoredBox> dets, std::span<const Box> gts,
                                        double iou_threshold) {
  const EvalImage img{{dets.begin(), dets.end()}, {gts.begin(), gts.end()}};
  return average_precision(std::span<const EvalImage>(&img, 1), iou_threshold);
}

std::vector<ScoredBox> score_detections(const DetectionSet& preds) {
  std::vector<ScoredBox> out;
  const std::size_t c = preds.logits.cols();
  Tensor probs = Tensor::matrix(preds.slots(), c);
  kernels::softmax_rows(preds.logits.data(), probs.data(), preds.slots(), c);
  for (std::size_t i = 0; i < preds.slots(); ++i) {
    const double p_obj = probs(i, kMovingClass);
    if (probs(i, c - 1) > p_obj) continue;
    out.push_back({preds.box(i), p_obj});
  }
  return out;
}

EvalReport evaluate_images(std::span<const EvalImage> images) {
  EvalReport r;
  r.images = images.size();
  for (const EvalImage& img : images) {
    r.ground_truths += img.ground_truth.size();
    r.detections += img.detections.size();
  }
  double total = 0.0;
  for (int k = 0; k < 10; ++k) {
    const double thr = (50.0 + 5.0 * k) / 100.0;  // exact decimals: 0.5, 0.55, ..., 0.95
    const Pooled p = match_images(images, thr);
    ThresholdStats s;
    s.iou_threshold = thr;
    s.ap = p.gts == 0 ? 0.0 : interpolated_ap(p);
    for (const Outcome& o : p.outcomes) (o.tp ? s.tp : s.fp) += 1;
    s.fn = p.gts - s.tp;
    total += s.ap;
    r.table.push_back(s);
  }
  r.map_total = total / 10.0;
  r.ap50 = r.table[0].ap;
  r.ap75 = r.table[5].ap;
  return r;
}

EvalReport evaluate(std::span<const DetectionSet> outputs,
                    std::span<const std::vector<GroundTruth>> labels) {
  if (outputs.size() != labels.size())
    fail(Errc::kCountMismatch, std::to_string(outputs.size()) + " outputs for " +
                                   std::to_string(labels.size()) + " labelled images");
  std::vector<EvalImage> images;
  for (std::size_t i = 0; i < outputs.size(); ++i) {
    EvalImage img;
    img.detections = score_detections(outputs[i]);
    for (const GroundTruth& g : labels[i])
      if (g.cls == kMovingClass) img.ground_truth.push_back(g.box);
    images.push_back(std::move(img));
  }
  return evaluate_images(images);
}

nlohmann::json EvalReport::to_json() const {
  nlohmann::json table_json = nlohmann::json::array();
  for (const auto& s : table)
    table_json.push_back(
        {{"iou", s.iou_threshold}, {"ap", s.ap}, {"tp", s.tp}, {"fp", s.fp}, {"fn", s.fn}});
  return {{"map_total", map_total}, {"ap50", ap50},       {"ap75", ap75},
          {"thresholds", table_json}, {"images", images}, {"ground_truths", ground_truths},
          {"detections", detections}};
}

EvalReport EvalReport::from_json(const nlohmann::json& j) {
  EvalReport r;
  r.map_total = j.at("map_total").get<double>();
  r.ap50 = j.at("ap50").get<double>();
  r.ap75 = j.at("ap75").get<double>();
  for (const auto& s : j.at("thresholds"))
    r.table.push_back({s.at("iou").get<double>(), s.at("ap").get<double>(),
                       s.at("tp").get<std::size_t>(), s.at("fp").get<std::size_t>(),
                       s.at("fn").get<std::size_t>()});
  r.images = j.at("images").get<std::size_t>();
  r.ground_truths = j.at("ground_truths").get<std::size_t>();
  r.detections = j.at("detections").get<std::size_t>();
  return r;
}

std::vector<std::filesystem::path> dump_attention(const Tensor& weights, AttentionLayout layout,
                                                  const std::filesystem::path& dir,
                                                  const std::string& prefix) {
  if (weights.rank() != 2) fail(Errc::kBadLayout, "attention map must be a matrix");
  if (layout.rows * layout.cols != weights.cols() || layout.rows == 0)
    fail(Errc::kBadLayout, "layout " + std::to_string(layout.rows) + "x" +
                               std::to_string(layout.cols) + " does not cover " +
                               std::to_string(weights.cols()) + " keys");
  for (std::size_t i = 0; i < weights.rows(); ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < weights.cols(); ++j) {
      if (weights(i, j) < -1e-12) fail(Errc::kNotRowStochastic, "negative attention weight");
      s += weights(i, j);
    }
    if (std::abs(s - 1.0) > 1e-6)
      fail(Errc::kNotRowStochastic, "row " + std::to_string(i) + " sums to " + std::to_string(s));
  }
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> paths;
  for (std::size_t i = 0; i < weights.rows(); ++i) {
    double lo = weights(i, 0), hi = weights(i, 0);
    for (std::size_t j = 0; j < weights.cols(); ++j) {
      lo = std::min(lo, weights(i, j));
      hi = std::max(hi, weights(i, j));
    }
    std::string pixels(weights.cols(), '\0');
    for (std::size_t j = 0; j < weights.cols(); ++j) {
      const double level = hi > lo ? std::round(255.0 * (weights(i, j) - lo) / (hi - lo)) : 128.0;
      pixels[j] = static_cast<char>(static_cast<unsigned char>(level));
    }
    const auto path = dir / (prefix + "_q" + std::to_string(i) + ".pgm");
    std::ofstream f(path, std::ios::binary);
    if (!f) fail(Errc::kIo, "cannot write " + path.string());
    f << "P5\n" << layout.cols << " " << layout.rows << "\n255\n";
    f.write(pixels.data(), static_cast<std::streamsize>(pixels.size()));
    paths.push_back(path);
  }
  return paths;
}

Tensor read_pgm(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) fail(Errc::kIo, "cannot open " + path.string());
  std::string magic;
  std::size_t w = 0, h = 0, maxval = 0;
  f >> magic >> w >> h >> maxval;
  if (magic != "P5" || maxval != 255 || w == 0 || h == 0)
    fail(Errc::kIo, path.string() + " is not an 8-bit binary PGM");
  f.get();
  std::string pixels(w * h, '\0');
  f.read(pixels.data(), static_cast<std::streamsize>(pixels.size()));
  if (static_cast<std::size_t>(f.gcount()) != pixels.size())
    fail(Errc::kTruncatedFile, path.string() + " is truncated");
  Tensor out = Tensor::matrix(h, w);
  for (std::size_t i = 0; i < pixels.size(); ++i)
    out[i] = static_cast<unsigned char>(pixels[i]);
  return out;
}

}  // namespace stdetr
