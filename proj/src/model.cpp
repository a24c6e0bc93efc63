// Copyright 2026 The stdetr Authors.
// SPDX-License-Identifier: Apache-2.0

#include "stdetr/model.hpp"

#include "stdetr/error.hpp"

namespace stdetr {

std::string_view to_string(Aggregation a) {
  return a == Aggregation::kEarly ? "early" : "late";
}

Aggregation parse_aggregation(std::string_view name) {
  if (name == "early") return Aggregation::kEarly;
  if (name == "late") return Aggregation::kLate;
  fail(Errc::kConfig, "aggregation must be 'early' or 'late', got '" + std::string(name) + "'");
}

void ModelConfig::validate() const {
  auto check = [](bool ok, const std::string& what) {
    if (!ok) fail(Errc::kConfig, "model config: " + what);
  };
  check(steps >= 1, "T must be >= 1");
  check(queries >= 1, "need at least one query");
  check(d_model >= 4 && d_model % 4 == 0, "d_model must be a positive multiple of 4");
  check(heads >= 1 && d_model % heads == 0, "heads must divide d_model");
  check(enc_layers >= 1 && dec_layers >= 1, "need at least one encoder and decoder layer");
  check(ff_mult >= 1, "ff_mult must be >= 1");
  check(image_height >= 8 && image_width >= 8, "image must be at least 8x8");
  check(!(seq2seq && aggregation == Aggregation::kEarly),
        "sequence-to-sequence prediction needs late aggregation");
}

namespace {

constexpr std::size_t kBackboneDepth = 3;

Tensor tile_columns(const Tensor& block, std::size_t times) {
  Tensor out = Tensor::matrix(block.rows(), block.cols() * times);
  for (std::size_t i = 0; i < block.rows(); ++i)
    for (std::size_t t = 0; t < times; ++t)
      for (std::size_t j = 0; j < block.cols(); ++j) out(i, t * block.cols() + j) = block(i, j);
  return out;
}

Tensor row_of(const Tensor& table, std::size_t r) {
  Tensor out = Tensor::matrix(1, table.cols());
  for (std::size_t j = 0; j < table.cols(); ++j) out[j] = table(r, j);
  return out;
}

}  // namespace

StDetr::StDetr(ModelConfig cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(seed);
  const std::size_t d = cfg_.d_model;
  const std::size_t width = cfg_.d_final();

  std::size_t c_in = input_channels(cfg_.input_mode);
  for (std::size_t i = 0; i < kBackboneDepth; ++i) {
    backbone_.convs.push_back(
        make_linear(store_, "backbone.conv" + std::to_string(i), 9 * c_in, d, rng));
    c_in = d;
  }
  for (std::size_t l = 0; l < cfg_.enc_layers; ++l)
    encoder_.push_back(make_encoder_layer(store_, "encoder." + std::to_string(l), width,
                                          cfg_.heads, cfg_.ff_mult * width, rng));
  for (std::size_t l = 0; l < cfg_.dec_layers; ++l)
    decoder_.push_back(make_decoder_layer(store_, "decoder." + std::to_string(l), width,
                                          cfg_.heads, cfg_.ff_mult * width, rng));
  queries_ = store_.add("queries", normal_init(cfg_.queries, width, 1.0, rng));
  if (cfg_.aggregation == Aggregation::kLate) {
    for (std::size_t l = 0; l < cfg_.dec_layers; ++l)
      temporal_decoder_.push_back(make_decoder_layer(
          store_, "temporal_decoder." + std::to_string(l), d, cfg_.heads, cfg_.ff_mult * d, rng));
    const std::size_t rows = cfg_.seq2seq ? cfg_.steps * cfg_.queries : cfg_.queries;
    temporal_queries_ = store_.add("temporal_queries", normal_init(rows, d, 1.0, rng));
  }
  head_.cls = make_linear(store_, "head.cls", width, kNumLogits, rng);
  head_.box.push_back(make_linear(store_, "head.box0", width, width, rng));
  head_.box.push_back(make_linear(store_, "head.box1", width, width, rng));
  head_.box.push_back(make_linear(store_, "head.box2", width, 4, rng));
}

Var StDetr::extract_spatial_features(Binder& b, const Tensor& frame) const {
  const std::size_t channels = input_channels(cfg_.input_mode);
  if (frame.rank() != 3 || frame.shape()[0] != channels)
    fail(Errc::kChannelMismatch, "backbone expects " + std::to_string(channels) +
                                     " channels for " + std::string(to_string(cfg_.input_mode)) +
                                     ", got " + shape_string(frame.shape()));
  kernels::ConvGeometry g{frame.shape()[1], frame.shape()[2], channels};
  // Channel-last layout: one row per pixel.
  const std::size_t plane = g.height * g.width;
  Tensor hwc = Tensor::matrix(plane, channels);
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t p = 0; p < plane; ++p) hwc(p, c) = frame[c * plane + p];
  Var x = b.tape().constant(std::move(hwc));
  for (std::size_t i = 0; i < backbone_.convs.size(); ++i) {
    x = linear(b, backbone_.convs[i], im2col(x, g));
    if (i + 1 < backbone_.convs.size()) x = relu(x);
    g = kernels::ConvGeometry{g.out_height(), g.out_width(), cfg_.d_model};
  }
  return x;
}

Var StDetr::prediction_heads(Binder& b, Var decoded, Var* boxes_out) const {
  Var logits = linear(b, head_.cls, decoded);
  Var h = relu(linear(b, head_.box[0], decoded));
  h = relu(linear(b, head_.box[1], h));
  *boxes_out = sigmoid(linear(b, head_.box[2], h));
  return logits;
}

Var early_aggregate(std::span<const Var> features, bool tpe) {
  if (features.empty()) fail(Errc::kInvalidArgument, "early_aggregate needs T >= 1 maps");
  const Shape shape = features[0].shape();
  for (const Var& f : features)
    if (f.shape() != shape)
      fail(Errc::kShapeMismatch, "early_aggregate: " + shape_string(f.shape()) + " vs " +
                                     shape_string(shape));
  if (!tpe) return features.size() == 1 ? features[0] : concat(features, 1);
  Tape& tape = features[0].tape();
  const Tensor table = temporal_positional_encoding(features.size(), shape[1]);
  std::vector<Var> steps;
  for (std::size_t t = 0; t < features.size(); ++t)
    steps.push_back(add(features[t], tile(tape.constant(row_of(table, t)), shape[0])));
  return steps.size() == 1 ? steps[0] : concat(steps, 1);
}

ModelOutput StDetr::forward(Tape& tape, std::span<const Tensor> inputs) {
  if (inputs.size() != cfg_.steps)
    fail(Errc::kShapeMismatch, "model window is " + std::to_string(cfg_.steps) + " frames, got " +
                                   std::to_string(inputs.size()));
  Binder b(tape, store_);
  return cfg_.aggregation == Aggregation::kEarly ? forward_early(b, inputs)
                                                 : forward_late(b, inputs);
}

ModelOutput StDetr::forward_early(Binder& b, std::span<const Tensor> inputs) {
  Tape& tape = b.tape();
  ModelOutput out;
  for (const Tensor& frame : inputs) out.trace.features.push_back(extract_spatial_features(b, frame));
  const std::size_t hw = out.trace.features[0].rows();
  if (hw != cfg_.grid_cells())
    fail(Errc::kShapeMismatch, "frame size does not match the configured image size");

  Var x = early_aggregate(out.trace.features, cfg_.tpe);
  const Tensor spe =
      spatial_positional_encoding(cfg_.grid_height(), cfg_.grid_width(), cfg_.d_model);
  Var pos = tape.constant(tile_columns(spe, cfg_.steps));
  for (const auto& layer : encoder_) x = encoder_layer(b, layer, x, pos);
  out.trace.memory = x;

  // Queries seed the decoder and are re-added as its positional term; a zero
  // start would leave the first self-attention without gradient.
  Var qpos = b(queries_);
  Var tgt = qpos;
  for (const auto& layer : decoder_) {
    DecoderOutput r = decoder_layer(b, layer, tgt, x, qpos, pos);
    tgt = r.out;
    out.trace.decoder_attention = std::move(r.cross_attention);
  }
  out.trace.decoded = tgt;
  out.logits = prediction_heads(b, tgt, &out.boxes);
  return out;
}

ModelOutput StDetr::forward_late(Binder& b, std::span<const Tensor> inputs) {
  Tape& tape = b.tape();
  ModelOutput out;
  const std::size_t d = cfg_.d_model;
  Var pos = tape.constant(
      spatial_positional_encoding(cfg_.grid_height(), cfg_.grid_width(), d));
  const Tensor tpe = temporal_positional_encoding(cfg_.steps, d);
  Var qpos = b(queries_);

  std::vector<Var> traces;
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    Var f = extract_spatial_features(b, inputs[t]);
    out.trace.features.push_back(f);
    if (f.rows() != cfg_.grid_cells())
      fail(Errc::kShapeMismatch, "frame size does not match the configured image size");
    Var e = f;
    for (const auto& layer : encoder_) e = encoder_layer(b, layer, e, pos);
    out.trace.memory = e;
    Var q = qpos;
    Tensor attn;
    for (const auto& layer : decoder_) {
      DecoderOutput r = decoder_layer(b, layer, q, e, qpos, pos);
      q = r.out;
      attn = std::move(r.cross_attention);
    }
    out.trace.step_queries.push_back(q);
    out.trace.spatial_attention.push_back(std::move(attn));
    traces.push_back(cfg_.tpe ? add(q, tile(tape.constant(row_of(tpe, t)), cfg_.queries)) : q);
  }

  // Query traces: T*Nq x d, step 0 on top.
  Var memory = traces.size() == 1 ? traces[0] : concat(traces, 0);
  Var tq = b(temporal_queries_);
  Var tgt = tq;
  Var mpos = tape.constant(Tensor::matrix(memory.rows(), d));
  for (const auto& layer : temporal_decoder_) {
    DecoderOutput r = decoder_layer(b, layer, tgt, memory, tq, mpos);
    tgt = r.out;
    out.trace.decoder_attention = std::move(r.cross_attention);
  }
  out.trace.decoded = tgt;
  out.logits = prediction_heads(b, tgt, &out.boxes);
  return out;
}

std::vector<DetectionSet> StDetr::detections(const ModelOutput& out) const {
  std::vector<DetectionSet> sets;
  const std::size_t nq = cfg_.queries;
  const Tensor& boxes = out.boxes.value();
  const Tensor& logits = out.logits.value();
  for (std::size_t s = 0; s < boxes.rows() / nq; ++s) {
    DetectionSet d{Tensor::matrix(nq, 4), Tensor::matrix(nq, logits.cols())};
    for (std::size_t i = 0; i < nq; ++i) {
      for (std::size_t j = 0; j < 4; ++j) d.boxes(i, j) = boxes(s * nq + i, j);
      for (std::size_t j = 0; j < logits.cols(); ++j) d.logits(i, j) = logits(s * nq + i, j);
    }
    sets.push_back(std::move(d));
  }
  return sets;
}

std::vector<Tensor> model_inputs(const FrameSequence& seq, const ModelConfig& cfg) {
  if (cfg.steps > seq.steps)
    fail(Errc::kShapeMismatch, "window of " + std::to_string(cfg.steps) +
                                   " frames exceeds sequence length " + std::to_string(seq.steps));
  std::vector<Tensor> inputs;
  for (std::size_t t = seq.steps - cfg.steps; t < seq.steps; ++t)
    inputs.push_back(render_input(seq, cfg.input_mode, t));
  return inputs;
}

std::vector<std::vector<GroundTruth>> model_targets(const FrameSequence& seq,
                                                    const ModelConfig& cfg) {
  if (cfg.steps > seq.steps)
    fail(Errc::kShapeMismatch, "window exceeds sequence length");
  if (cfg.seq2seq && seq.moving_boxes.size() != seq.steps)
    fail(Errc::kMissingPerStepLabels, "sequence lacks per-step labels");
  std::vector<std::vector<GroundTruth>> out;
  if (cfg.seq2seq) {
    for (std::size_t t = seq.steps - cfg.steps; t < seq.steps; ++t)
      out.push_back(seq.ground_truth(t));
  } else {
    out.push_back(seq.ground_truth(seq.steps - 1));
  }
  return out;
}

}  // namespace stdetr
