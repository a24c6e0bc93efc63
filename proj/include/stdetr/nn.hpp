// Copyright 2026 The stdetr Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "stdetr/autodiff.hpp"

namespace stdetr {

using Rng = std::mt19937_64;
using ParamRef = std::size_t;

/// Named parameters in registration order. References are indices, so a
/// copied store (and any layer structs that point into it) stays valid.
class ParameterStore {
 public:
  ParamRef add(std::string name, Tensor init);

  Parameter& operator[](ParamRef r) { return params_.at(r); }
  const Parameter& operator[](ParamRef r) const { return params_.at(r); }
  Parameter* find(const std::string& name);
  const Parameter* find(const std::string& name) const;

  std::size_t size() const { return params_.size(); }
  std::size_t scalar_count() const;
  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  void zero_grad();
  std::vector<Parameter*> pointers();

 private:
  std::vector<Parameter> params_;
  std::map<std::string, ParamRef> index_;
};

/// Binds store parameters onto a tape at most once per forward pass, so a
/// weight shared across time steps is a single leaf whose gradient sums
/// over every use.
class Binder {
 public:
  Binder(Tape& tape, ParameterStore& store)
      : tape_(tape), store_(store), bound_(store.size()) {}

  Var operator()(ParamRef r);
  Tape& tape() { return tape_; }

 private:
  Tape& tape_;
  ParameterStore& store_;
  std::vector<std::optional<Var>> bound_;
};

// Initializers.
Tensor xavier_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng);
Tensor normal_init(std::size_t rows, std::size_t cols, double stddev, Rng& rng);

struct LinearParams {
  ParamRef weight = 0;  // in x out
  ParamRef bias = 0;    // 1 x out
};

LinearParams make_linear(ParameterStore& store, const std::string& name, std::size_t in,
                         std::size_t out, Rng& rng);
/// x * W + tile(b)
Var linear(Binder& b, const LinearParams& p, Var x);

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  /// Global gradient-norm clip; <= 0 disables.
  double clip_norm = 0.1;
};

class Adam {
 public:
  explicit Adam(AdamOptions opts = {}) : opts_(opts) {}

  /// Applies one update from the accumulated grads, then zeroes them.
  /// `grad_scale` multiplies every gradient first (e.g. 1/batch).
  void step(ParameterStore& store, double lr, double grad_scale = 1.0);
  std::int64_t steps() const { return t_; }

 private:
  AdamOptions opts_;
  std::int64_t t_ = 0;
  std::vector<Tensor> m_, v_;
};

}  // namespace stdetr
