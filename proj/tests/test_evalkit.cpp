// Copyright 2026 The stdetr Authors.
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>
#include <vector>

#include <doctest.h>

#include "oracles.hpp"
#include "stdetr/error.hpp"
#include "stdetr/evalkit.hpp"

using namespace stdetr;

namespace {

template <class F>
void expect_code(Errc code, F&& f) {
  try {
    f();
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == code);
  }
}

// Slot with moving-class probability p (p = 0 marks a no-object slot).
void set_slot(DetectionSet& d, std::size_t j, const Box& b, double p) {
  d.boxes(j, 0) = b.cx;
  d.boxes(j, 1) = b.cy;
  d.boxes(j, 2) = b.w;
  d.boxes(j, 3) = b.h;
  d.logits(j, 0) = p > 0 ? std::log(p / (1.0 - p)) : -2.0;
  d.logits(j, 1) = p > 0 ? 0.0 : 2.0;
}

// Every slot prefers no-object.
DetectionSet empty_set(std::size_t nq) {
  DetectionSet d{Tensor::matrix(nq, 4, 0.5), Tensor::matrix(nq, 2)};
  for (std::size_t j = 0; j < nq; ++j) d.logits(j, 1) = 2.0;
  return d;
}

std::filesystem::path scratch_dir(const char* name) {
  const auto dir = std::filesystem::temp_directory_path() / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("iou examples") {
  const Box a = Box::from_corners(0, 0, 1, 1);
  CHECK(iou(a, a) == 1.0);
  CHECK(iou(a, Box::from_corners(2, 2, 3, 3)) == 0.0);
  CHECK(iou(a, Box::from_corners(1, 0, 2, 1)) == 0.0);
  CHECK(iou(a, Box::from_corners(0.5, 0, 1.5, 1)) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  expect_code(Errc::kDegenerateBox, [&] { iou(a, Box{0.5, 0.5, 0.0, 1.0}); });
}

TEST_CASE("average_precision fixtures") {
  const Box g = Box::from_corners(0.1, 0.1, 0.3, 0.3);
  const std::vector<Box> gts = {g};
  const std::vector<ScoredBox> perfect = {{g, 0.7}};
  CHECK(average_precision(perfect, gts, 0.5).value() == 1.0);
  CHECK(average_precision(std::vector<ScoredBox>{}, gts, 0.5).value() == 0.0);
  // FP ranked above the TP: precision 1/2 at full recall.
  const std::vector<ScoredBox> ranked = {{Box::from_corners(0.6, 0.6, 0.8, 0.8), 0.9}, {g, 0.8}};
  CHECK(average_precision(ranked, gts, 0.5).value() == 0.5);
  CHECK_FALSE(average_precision(ranked, std::vector<Box>{}, 0.5).has_value());
}

TEST_CASE("average_precision matches the PR-curve oracle on random scenes") {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    // One image with far-apart ground truth, so greedy matching reduces to
    // "closest gt claimed once".
    std::vector<Box> gts;
    const std::size_t n = 1 + trial % 4;
    for (std::size_t k = 0; k < n; ++k) gts.push_back({0.125 + 0.25 * k, 0.5, 0.1, 0.1});
    std::vector<ScoredBox> dets;
    std::vector<std::pair<double, int>> truth;  // (score, gt index or -1)
    const std::size_t m = trial % 6;
    std::vector<bool> claimed(n, false);
    for (std::size_t k = 0; k < m; ++k) dets.push_back({}), dets.back().score = u(rng);
    std::vector<std::size_t> order(m);
    for (std::size_t k = 0; k < m; ++k) order[k] = k;
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return dets[a].score > dets[b].score; });
    std::vector<bool> tp_sorted;
    for (std::size_t r : order) {
      const std::size_t target = static_cast<std::size_t>(u(rng) * static_cast<double>(n + 1));
      if (target < n) {
        dets[r].box = gts[target];
        tp_sorted.push_back(!claimed[target]);
        claimed[target] = true;
      } else {
        dets[r].box = {0.5, 0.1, 0.05, 0.05};
        tp_sorted.push_back(false);
      }
    }
    CHECK(average_precision(dets, gts, 0.5).value() ==
          doctest::Approx(oracle::interpolated_ap(tp_sorted, n)).epsilon(1e-15));
  }
}

TEST_CASE("average_precision is invariant to monotone score maps and monotone in the threshold") {
  std::mt19937_64 rng(22);
  std::uniform_real_distribution<double> u(0.05, 0.95), s(0.05, 0.25);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<EvalImage> images(3);
    for (EvalImage& img : images) {
      for (int k = 0; k < 2; ++k) img.ground_truth.push_back({u(rng), u(rng), s(rng), s(rng)});
      for (int k = 0; k < 4; ++k) {
        const Box& near = img.ground_truth[static_cast<std::size_t>(k % 2)];
        img.detections.push_back({{near.cx + 0.05 * (u(rng) - 0.5), near.cy + 0.05 * (u(rng) - 0.5),
                                   near.w * (0.8 + 0.4 * u(rng)), near.h},
                                  u(rng)});
      }
    }
    std::vector<EvalImage> mapped = images;
    for (EvalImage& img : mapped)
      for (ScoredBox& d : img.detections) d.score = std::exp(3.0 * d.score) - 7.0;
    double prev = 2.0;
    for (int k = 0; k < 10; ++k) {
      const double thr = (50.0 + 5.0 * k) / 100.0;
      const double ap = average_precision(images, thr).value();
      CHECK(ap == average_precision(mapped, thr).value());
      CHECK(ap <= prev);
      prev = ap;
    }
  }
}

TEST_CASE("score_detections drops slots that prefer no-object") {
  DetectionSet d = empty_set(3);
  set_slot(d, 0, {0.3, 0.3, 0.1, 0.1}, 0.8);
  set_slot(d, 1, {0.6, 0.6, 0.1, 0.1}, 0.0);
  d.logits(2, 0) = d.logits(2, 1) = 1.5;
  const auto kept = score_detections(d);
  REQUIRE(kept.size() == 2);
  CHECK(kept[0].score == doctest::Approx(0.8).epsilon(1e-14));
  CHECK(kept[1].score == 0.5);
}

TEST_CASE("three-sequence fixture matches the hand-computed report") {
  const Box g1{0.25, 0.25, 0.2, 0.2}, g2{0.5, 0.5, 0.2, 0.2}, g3{0.8, 0.8, 0.1, 0.1};
  std::vector<DetectionSet> outputs(3, empty_set(2));
  set_slot(outputs[0], 0, g1, 0.9);                       // TP at every threshold
  set_slot(outputs[1], 0, {0.54, 0.5, 0.2, 0.2}, 0.8);   // IoU 2/3 with g2
  set_slot(outputs[1], 1, {0.1, 0.8, 0.1, 0.1}, 0.7);    // FP
  set_slot(outputs[2], 0, {0.5, 0.5, 0.3, 0.3}, 0.6);    // FP, no ground truth
  const std::vector<std::vector<GroundTruth>> labels = {
      {{kMovingClass, g1}}, {{kMovingClass, g2}, {kMovingClass, g3}}, {}};

  // Ranked TP, TP, FP, FP up to IoU 0.65: precision 1 until recall 2/3, so 67
  // of the 101 recall points. Above 0.65 only the first is a TP: 34 points.
  const EvalReport r = evaluate(outputs, labels);
  REQUIRE(r.table.size() == 10);
  double total = 0.0;
  for (int k = 0; k < 10; ++k) {
    const ThresholdStats& s = r.table[static_cast<std::size_t>(k)];
    const bool loose = k <= 3;
    const double ap = (loose ? 67.0 : 34.0) / 101.0;
    CHECK(s.iou_threshold == (50.0 + 5.0 * k) / 100.0);
    CHECK(s.ap == ap);
    CHECK(s.tp == (loose ? 2u : 1u));
    CHECK(s.fp == (loose ? 2u : 3u));
    CHECK(s.fn == (loose ? 1u : 2u));
    total += ap;
  }
  CHECK(r.ap50 == 67.0 / 101.0);
  CHECK(r.ap75 == 34.0 / 101.0);
  CHECK(r.map_total == total / 10.0);
  CHECK(r.map_total == doctest::Approx(472.0 / 1010.0).epsilon(1e-15));
  CHECK(r.images == 3);
  CHECK(r.ground_truths == 3);
  CHECK(r.detections == 4);

  // Sequence enumeration order does not matter.
  const std::vector<DetectionSet> rev_out(outputs.rbegin(), outputs.rend());
  const std::vector<std::vector<GroundTruth>> rev_lab(labels.rbegin(), labels.rend());
  CHECK(evaluate(rev_out, rev_lab).to_json() == r.to_json());
  CHECK(EvalReport::from_json(r.to_json()).to_json() == r.to_json());
}

TEST_CASE("perfect and empty detectors") {
  std::vector<DetectionSet> perfect, empty;
  std::vector<std::vector<GroundTruth>> labels;
  for (int i = 0; i < 10; ++i) {
    const Box b{0.1 + 0.07 * i, 0.5, 0.1, 0.12};
    labels.push_back({{kMovingClass, b}});
    DetectionSet d = empty_set(3);
    set_slot(d, 1, b, 0.9);
    perfect.push_back(d);
    empty.push_back(empty_set(3));
  }
  const EvalReport p = evaluate(perfect, labels);
  CHECK(p.map_total == 1.0);
  CHECK(p.ap50 == 1.0);
  const EvalReport e = evaluate(empty, labels);
  CHECK(e.map_total == 0.0);
  CHECK(e.detections == 0);
  labels.pop_back();
  expect_code(Errc::kCountMismatch, [&] { evaluate(perfect, labels); });
}

TEST_CASE("dump_attention writes normalized PGMs that read back exactly") {
  const auto dir = scratch_dir("stdetr_attention_test");
  {
    const Tensor w = Tensor::matrix(2, 12, 1.0 / 12.0);
    const auto paths = dump_attention(w, {3, 4}, dir, "uniform");
    REQUIRE(paths.size() == 2);
    for (const auto& p : paths) {
      const Tensor img = read_pgm(p);
      CHECK(img.shape() == Shape{3, 4});
      for (double v : img.values()) CHECK(v == 128.0);
    }
  }
  {
    Tensor w = Tensor::matrix(1, 6);
    w(0, 4) = 1.0;
    const Tensor img = read_pgm(dump_attention(w, {2, 3}, dir, "onehot")[0]);
    for (std::size_t k = 0; k < 6; ++k) CHECK(img[k] == (k == 4 ? 255.0 : 0.0));
  }
  {
    std::mt19937_64 rng(23);
    Tensor w = oracle::random_matrix(3, 8, rng, 0.0, 1.0);
    for (std::size_t i = 0; i < 3; ++i) {
      double s = 0;
      for (std::size_t j = 0; j < 8; ++j) s += w(i, j);
      for (std::size_t j = 0; j < 8; ++j) w(i, j) /= s;
    }
    const auto paths = dump_attention(w, {2, 4}, dir, "random");
    for (std::size_t i = 0; i < 3; ++i) {
      const Tensor img = read_pgm(paths[i]);
      double lo = 1, hi = 0;
      for (std::size_t j = 0; j < 8; ++j) lo = std::min(lo, w(i, j)), hi = std::max(hi, w(i, j));
      for (std::size_t j = 0; j < 8; ++j)
        CHECK(img[j] == std::round(255.0 * (w(i, j) - lo) / (hi - lo)));
    }
  }
  expect_code(Errc::kBadLayout, [&] { dump_attention(Tensor::matrix(1, 6, 1.0 / 6.0), {4, 2}, dir, "x"); });
  expect_code(Errc::kNotRowStochastic, [&] { dump_attention(Tensor::matrix(1, 4, 0.3), {2, 2}, dir, "x"); });
  std::filesystem::remove_all(dir);
}
