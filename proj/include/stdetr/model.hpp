// Copyright 2026 The stdetr Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "stdetr/attention.hpp"
#include "stdetr/setmatch.hpp"
#include "stdetr/synthdata.hpp"

namespace stdetr {

enum class Aggregation { kEarly, kLate };

std::string_view to_string(Aggregation a);
Aggregation parse_aggregation(std::string_view name);

struct ModelConfig {
  std::size_t steps = 2;  // temporal window T
  std::size_t queries = 8;
  std::size_t d_model = 32;
  std::size_t heads = 4;
  std::size_t enc_layers = 2;
  std::size_t dec_layers = 2;
  std::size_t ff_mult = 4;
  Aggregation aggregation = Aggregation::kEarly;
  bool seq2seq = false;
  bool tpe = true;
  InputMode input_mode = InputMode::kRgbOf;
  std::size_t image_height = 64;
  std::size_t image_width = 64;

  // Three stride-2 convolutions.
  std::size_t grid_height() const { return (image_height + 7) / 8; }
  std::size_t grid_width() const { return (image_width + 7) / 8; }
  std::size_t grid_cells() const { return grid_height() * grid_width(); }
  /// Width of the decoded query features: T*d for early, d for late.
  std::size_t d_final() const {
    return aggregation == Aggregation::kEarly ? steps * d_model : d_model;
  }
  /// Number of detection sets per forward: T in seq2seq mode, otherwise 1.
  std::size_t output_steps() const { return seq2seq ? steps : 1; }

  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

struct BackboneParams {
  std::vector<LinearParams> convs;  // (9 * c_in) x c_out each
};

struct HeadParams {
  LinearParams cls;
  std::vector<LinearParams> box;  // three layers, relu between
};

/// Intermediates kept for tests and attention dumps.
struct ForwardTrace {
  std::vector<Var> features;      // per step, HW x d (backbone output)
  Var memory;                     // early: E (HW x Td); late: last step's encoder output
  Var decoded;                    // query features fed to the heads
  std::vector<Var> step_queries;  // late: spatial decoder output per step (before TPE)
  /// Last cross-attention map of the final decoder: early Nq x HW, late
  /// Nq x T*Nq, seq2seq T*Nq x T*Nq.
  Tensor decoder_attention;
  /// Late path: last spatial-decoder cross-attention (Nq x HW) per step.
  std::vector<Tensor> spatial_attention;
};

struct ModelOutput {
  Var logits;  // (output_steps * Nq) x 2
  Var boxes;   // (output_steps * Nq) x 4, in (0, 1)
  ForwardTrace trace;
};

/// Spatio-temporal detection transformer with early (feature-trace) or late
/// (query-trace) temporal aggregation.
class StDetr {
 public:
  StDetr(ModelConfig cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  ParameterStore& params() { return store_; }
  const ParameterStore& params() const { return store_; }

  /// `inputs` holds T rendered frames (C x H x W), oldest first.
  ModelOutput forward(Tape& tape, std::span<const Tensor> inputs);

  /// Conv backbone for one frame; output HW x d, rows in raster order.
  Var extract_spatial_features(Binder& b, const Tensor& frame) const;
  Var prediction_heads(Binder& b, Var decoded, Var* boxes_out) const;

  /// Splits an output into one DetectionSet per output step.
  std::vector<DetectionSet> detections(const ModelOutput& out) const;

 private:
  ModelOutput forward_early(Binder& b, std::span<const Tensor> inputs);
  ModelOutput forward_late(Binder& b, std::span<const Tensor> inputs);

  ModelConfig cfg_;
  ParameterStore store_;
  BackboneParams backbone_;
  std::vector<EncoderLayerParams> encoder_;
  std::vector<DecoderLayerParams> decoder_;
  std::vector<DecoderLayerParams> temporal_decoder_;
  ParamRef queries_ = 0;
  ParamRef temporal_queries_ = 0;
  HeadParams head_;
};

/// Concatenates per-step HW x d maps along the feature axis (step 0 leftmost),
/// first adding TPE row t to every row of step t when `tpe` is set.
Var early_aggregate(std::span<const Var> features, bool tpe);

/// The last `cfg.steps` frames of a sequence rendered for the model.
std::vector<Tensor> model_inputs(const FrameSequence& seq, const ModelConfig& cfg);
/// Labels per output step (only the last frame unless seq2seq).
std::vector<std::vector<GroundTruth>> model_targets(const FrameSequence& seq,
                                                    const ModelConfig& cfg);

}  // namespace stdetr
