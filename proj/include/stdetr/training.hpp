// Copyright 2026 The stdetr Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "stdetr/evalkit.hpp"
#include "stdetr/model.hpp"

namespace stdetr {

struct TrainOptions {
  std::size_t epochs = 40;
  double lr = 1e-4;
  std::size_t lr_halving = 100;  // epochs between halvings
  std::size_t batch = 4;         // sequences per update
  double clip_norm = 0.1;
  std::uint64_t seed = 0;        // model init and shuffling
  /// Each sampled sequence gets a random flip/transpose (dihedral_transform).
  bool augment = false;
  bool operator==(const TrainOptions&) const = default;
};

struct LossTerms {
  double total = 0.0;
  double class_term = 0.0;
  double l1_term = 0.0;
  double giou_term = 0.0;
};

struct StepLog {
  std::size_t step = 0;
  std::size_t epoch = 0;
  double lr = 0.0;
  LossTerms loss;

  nlohmann::json to_json() const;
};

/// Builds the bipartite loss of one sequence on `tape`, averaged over the
/// output steps. Matching runs on the detached predictions.
Var sequence_loss(StDetr& model, Tape& tape, const FrameSequence& seq, LossTerms* terms = nullptr);

class Trainer {
 public:
  Trainer(StDetr& model, TrainOptions opts);

  /// One optimizer update from the mean loss over `batch`.
  StepLog step(std::span<const FrameSequence* const> batch, std::size_t epoch);
  double lr_at(std::size_t epoch) const;
  std::size_t steps() const { return steps_; }

 private:
  StDetr& model_;
  TrainOptions opts_;
  Adam adam_;
  std::size_t steps_ = 0;
};

/// Full training loop; `on_step` sees every update in order.
void train(StDetr& model, const Dataset& data, const TrainOptions& opts,
           const std::function<void(const StepLog&)>& on_step = {});

/// One DetectionSet per output step.
std::vector<DetectionSet> predict(StDetr& model, const FrameSequence& seq);

struct Predictions {
  std::vector<DetectionSet> outputs;
  std::vector<std::vector<GroundTruth>> labels;
};

/// Runs the model over every sequence (in parallel, read-only parameters) and
/// pairs each output step with its labels, in sequence order.
Predictions predict_dataset(StDetr& model, const Dataset& data);
EvalReport evaluate_model(StDetr& model, const Dataset& data);

/// Small configuration for finite-difference checks of the whole model:
/// T = 2, a 4 x 4 feature grid (32 x 32 images), Nq = 3.
ModelConfig grad_check_config(Aggregation aggregation, bool seq2seq = false);
/// Max relative error between the analytic and central-difference gradients
/// of the training loss on one synthetic sequence, over every parameter
/// (at most `max_entries` coordinates each; 0 means all).
double model_grad_check(const ModelConfig& cfg, std::uint64_t seed, double eps = 1e-3,
                        std::size_t max_entries = 0, GradCheckStats* stats = nullptr);

}  // namespace stdetr
