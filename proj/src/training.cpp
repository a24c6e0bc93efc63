// Copyright 2026 The stdetr Authors.
// SPDX-License-Identifier: Apache-2.0

#include "stdetr/training.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <numeric>

#include "stdetr/error.hpp"

namespace stdetr {

nlohmann::json StepLog::to_json() const {
  return {{"step", step},
          {"epoch", epoch},
          {"lr", lr},
          {"loss", loss.total},
          {"class", loss.class_term},
          {"l1", loss.l1_term},
          {"giou", loss.giou_term}};
}

Var sequence_loss(StDetr& model, Tape& tape, const FrameSequence& seq, LossTerms* terms) {
  const ModelConfig& cfg = model.config();
  const auto inputs = model_inputs(seq, cfg);
  const auto targets = model_targets(seq, cfg);
  ModelOutput out = model.forward(tape, inputs);
  const std::vector<DetectionSet> sets = model.detections(out);
  const std::size_t nq = cfg.queries;
  std::vector<Var> losses;
  LossTerms acc;
  for (std::size_t s = 0; s < sets.size(); ++s) {
    const MatchAssignment m = match(sets[s], targets[s]);
    for (const auto& [row, col] : m.pairs) tape.note_branch((row << 32) ^ col);
    Var logits = sets.size() == 1 ? out.logits : slice(out.logits, 0, s * nq, (s + 1) * nq);
    Var boxes = sets.size() == 1 ? out.boxes : slice(out.boxes, 0, s * nq, (s + 1) * nq);
    SetLoss l = set_loss(logits, boxes, targets[s], m);
    losses.push_back(l.total);
    acc.class_term += l.class_term;
    acc.l1_term += l.l1_term;
    acc.giou_term += l.giou_term;
  }
  Var total = losses[0];
  for (std::size_t s = 1; s < losses.size(); ++s) total = add(total, losses[s]);
  const double inv = 1.0 / static_cast<double>(losses.size());
  if (losses.size() > 1) total = scale(total, inv);
  if (terms) {
    terms->total = total.value()[0];
    terms->class_term = acc.class_term * inv;
    terms->l1_term = acc.l1_term * inv;
    terms->giou_term = acc.giou_term * inv;
  }
  return total;
}

Trainer::Trainer(StDetr& model, TrainOptions opts)
    : model_(model), opts_(opts), adam_(AdamOptions{.clip_norm = opts.clip_norm}) {}

double Trainer::lr_at(std::size_t epoch) const {
  if (opts_.lr_halving == 0) return opts_.lr;
  return opts_.lr * std::pow(0.5, static_cast<double>(epoch / opts_.lr_halving));
}

StepLog Trainer::step(std::span<const FrameSequence* const> batch, std::size_t epoch) {
  if (batch.empty()) fail(Errc::kInvalidArgument, "empty batch");
  StepLog log;
  log.epoch = epoch;
  log.lr = lr_at(epoch);
  model_.params().zero_grad();
  Tape tape;
  for (const FrameSequence* seq : batch) {
    tape.clear();
    LossTerms t;
    tape.backward(sequence_loss(model_, tape, *seq, &t));
    log.loss.total += t.total;
    log.loss.class_term += t.class_term;
    log.loss.l1_term += t.l1_term;
    log.loss.giou_term += t.giou_term;
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  log.loss.total *= inv;
  log.loss.class_term *= inv;
  log.loss.l1_term *= inv;
  log.loss.giou_term *= inv;
  adam_.step(model_.params(), log.lr, inv);
  log.step = ++steps_;
  return log;
}

void train(StDetr& model, const Dataset& data, const TrainOptions& opts,
           const std::function<void(const StepLog&)>& on_step) {
  if (data.sequences.empty() && opts.epochs > 0)
    fail(Errc::kInvalidArgument, "training set is empty");
  Trainer trainer(model, opts);
  std::vector<std::size_t> order(data.sequences.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(opts.seed ^ 0x9e3779b97f4a7c15ULL);
  const std::size_t batch = std::max<std::size_t>(1, opts.batch);
  const bool square = model.config().image_height == model.config().image_width;
  std::uniform_int_distribution<unsigned> pick(0, square ? 7u : 3u);
  std::vector<FrameSequence> augmented;
  for (std::size_t epoch = 0; epoch < opts.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t i = 0; i < order.size(); i += batch) {
      std::vector<const FrameSequence*> b;
      augmented.clear();
      augmented.reserve(batch);
      for (std::size_t k = i; k < std::min(order.size(), i + batch); ++k) {
        const FrameSequence& seq = data.sequences[order[k]];
        if (!opts.augment) {
          b.push_back(&seq);
          continue;
        }
        augmented.push_back(dihedral_transform(seq, pick(rng)));
        b.push_back(&augmented.back());
      }
      const StepLog log = trainer.step(b, epoch);
      if (on_step) on_step(log);
    }
  }
}

std::vector<DetectionSet> predict(StDetr& model, const FrameSequence& seq) {
  Tape tape;
  return model.detections(model.forward(tape, model_inputs(seq, model.config())));
}

Predictions predict_dataset(StDetr& model, const Dataset& data) {
  const std::size_t n = data.sequences.size();
  std::vector<std::vector<DetectionSet>> per_seq(n);
  std::exception_ptr error;
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i) {
    try {
      per_seq[i] = predict(model, data.sequences[i]);
    } catch (...) {
#pragma omp critical(stdetr_predict_error)
      if (!error) error = std::current_exception();
    }
  }
  if (error) std::rethrow_exception(error);
  Predictions p;
  for (std::size_t i = 0; i < n; ++i) {
    auto labels = model_targets(data.sequences[i], model.config());
    for (std::size_t s = 0; s < per_seq[i].size(); ++s) {
      p.outputs.push_back(std::move(per_seq[i][s]));
      p.labels.push_back(std::move(labels[s]));
    }
  }
  return p;
}

EvalReport evaluate_model(StDetr& model, const Dataset& data) {
  const Predictions p = predict_dataset(model, data);
  return evaluate(p.outputs, p.labels);
}

ModelConfig grad_check_config(Aggregation aggregation, bool seq2seq) {
  ModelConfig cfg;
  cfg.steps = 2;
  cfg.queries = 3;
  cfg.d_model = 8;
  cfg.heads = 2;
  cfg.enc_layers = 1;
  cfg.dec_layers = 1;
  cfg.ff_mult = 2;
  cfg.aggregation = aggregation;
  cfg.seq2seq = seq2seq;
  cfg.image_height = 32;
  cfg.image_width = 32;
  return cfg;
}

double model_grad_check(const ModelConfig& cfg, std::uint64_t seed, double eps,
                        std::size_t max_entries, GradCheckStats* stats) {
  DatasetSpec spec;
  spec.num_sequences = 1;
  spec.height = cfg.image_height;
  spec.width = cfg.image_width;
  spec.moving = {1, 2};
  spec.statics = {0, 1};
  spec.size = {5, 9};
  spec.seed = seed;
  const FrameSequence seq = generate_sequence(spec, 0);
  StDetr model(cfg, seed);
  std::vector<Parameter*> params = model.params().pointers();
  return grad_check_parameters([&](Tape& tape) { return sequence_loss(model, tape, seq); }, params,
                               eps, max_entries, stats,
                               Difference::kRichardson);
}

}  // namespace stdetr
