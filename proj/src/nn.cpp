// Copyright 2026 The stdetr Authors.
// SPDX-License-Identifier: Apache-2.0

#include "stdetr/nn.hpp"

#include <cmath>

#include "stdetr/error.hpp"

namespace stdetr {

ParamRef ParameterStore::add(std::string name, Tensor init) {
  if (index_.count(name)) fail(Errc::kInvalidArgument, "duplicate parameter " + name);
  const ParamRef r = params_.size();
  index_.emplace(name, r);
  Tensor grad(init.shape(), 0.0);
  params_.push_back(Parameter{std::move(name), std::move(init), std::move(grad)});
  return r;
}

Parameter* ParameterStore::find(const std::string& name) {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : &params_[it->second];
}

const Parameter* ParameterStore::find(const std::string& name) const {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : &params_[it->second];
}

std::size_t ParameterStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& p : params_) p.grad.fill(0.0);
}

std::vector<Parameter*> ParameterStore::pointers() {
  std::vector<Parameter*> out;
  for (auto& p : params_) out.push_back(&p);
  return out;
}

Var Binder::operator()(ParamRef r) {
  auto& slot = bound_.at(r);
  if (!slot) slot = tape_.parameter(store_[r]);
  return *slot;
}

Tensor xavier_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  Tensor w = Tensor::matrix(fan_in, fan_out);
  for (double& v : w.values()) v = dist(rng);
  return w;
}

Tensor normal_init(std::size_t rows, std::size_t cols, double stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Tensor w = Tensor::matrix(rows, cols);
  for (double& v : w.values()) v = dist(rng);
  return w;
}

LinearParams make_linear(ParameterStore& store, const std::string& name, std::size_t in,
                         std::size_t out, Rng& rng) {
  LinearParams p;
  p.weight = store.add(name + ".w", xavier_uniform(in, out, rng));
  p.bias = store.add(name + ".b", Tensor::matrix(1, out));
  return p;
}

Var linear(Binder& b, const LinearParams& p, Var x) {
  return add(matmul(x, b(p.weight)), tile(b(p.bias), x.rows()));
}

void Adam::step(ParameterStore& store, double lr, double grad_scale) {
  if (m_.size() != store.size()) {
    m_.clear();
    v_.clear();
    for (const auto& p : store) {
      m_.emplace_back(p.value.shape(), 0.0);
      v_.emplace_back(p.value.shape(), 0.0);
    }
  }
  double norm2 = 0.0;
  for (const auto& p : store)
    for (double g : p.grad.values()) norm2 += g * g * grad_scale * grad_scale;
  if (!std::isfinite(norm2)) fail(Errc::kNonFinite, "non-finite gradient");
  double clip = 1.0;
  const double norm = std::sqrt(norm2);
  if (opts_.clip_norm > 0.0 && norm > opts_.clip_norm) clip = opts_.clip_norm / norm;

  ++t_;
  const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_));
  std::size_t k = 0;
  for (auto& p : store) {
    Tensor& m = m_[k];
    Tensor& v = v_[k];
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = p.grad[i] * grad_scale * clip;
      m[i] = opts_.beta1 * m[i] + (1.0 - opts_.beta1) * g;
      v[i] = opts_.beta2 * v[i] + (1.0 - opts_.beta2) * g * g;
      p.value[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + opts_.eps);
    }
    p.grad.fill(0.0);
    ++k;
  }
}

}  // namespace stdetr
