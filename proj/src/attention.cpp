// Copyright 2026 The stdetr Authors.
// SPDX-License-Identifier: Apache-2.0

#include "stdetr/attention.hpp"

#include <cmath>

#include "stdetr/error.hpp"

namespace stdetr {

AttentionResult attention_core(Var q, Var k, Var v) {
  if (q.cols() != k.cols())
    fail(Errc::kShapeMismatch, "attention: Q " + shape_string(q.shape()) + " vs K " +
                                   shape_string(k.shape()));
  if (k.rows() != v.rows())
    fail(Errc::kShapeMismatch, "attention: K " + shape_string(k.shape()) + " vs V " +
                                   shape_string(v.shape()));
  const double s = 1.0 / std::sqrt(static_cast<double>(q.cols()));
  Var w = softmax_rows(scale(matmul(q, transpose(k)), s));
  return {matmul(w, v), w};
}

MhaParams make_mha(ParameterStore& store, const std::string& name, std::size_t d_model,
                   std::size_t heads, Rng& rng) {
  if (heads == 0 || d_model % heads != 0)
    fail(Errc::kDimNotDivisible, name + ": d_model " + std::to_string(d_model) +
                                     " not divisible by " + std::to_string(heads) + " heads");
  MhaParams p;
  p.d_model = d_model;
  p.heads = heads;
  const std::size_t dh = d_model / heads;
  for (std::size_t h = 0; h < heads; ++h) {
    const std::string hn = name + ".h" + std::to_string(h);
    p.wq.push_back(store.add(hn + ".wq", xavier_uniform(d_model, dh, rng)));
    p.wk.push_back(store.add(hn + ".wk", xavier_uniform(d_model, dh, rng)));
    p.wv.push_back(store.add(hn + ".wv", xavier_uniform(d_model, dh, rng)));
  }
  p.wo = store.add(name + ".wo", xavier_uniform(d_model, d_model, rng));
  return p;
}

MhaResult multi_head_attention(Binder& b, const MhaParams& p, Var q_in, Var k_in, Var v_in) {
  for (const Var* x : {&q_in, &k_in, &v_in})
    if (x->cols() != p.d_model)
      fail(Errc::kShapeMismatch, "multi_head_attention input " + shape_string(x->shape()) +
                                     " vs d_model " + std::to_string(p.d_model));
  if (k_in.rows() != v_in.rows())
    fail(Errc::kShapeMismatch, "multi_head_attention: key/value row counts differ");

  std::vector<Var> heads;
  Tensor mean_w = Tensor::matrix(q_in.rows(), k_in.rows());
  for (std::size_t h = 0; h < p.heads; ++h) {
    AttentionResult r = attention_core(matmul(q_in, b(p.wq[h])), matmul(k_in, b(p.wk[h])),
                                       matmul(v_in, b(p.wv[h])));
    heads.push_back(r.out);
    const Tensor& w = r.weights.value();
    for (std::size_t i = 0; i < w.size(); ++i) mean_w[i] += w[i];
  }
  for (double& x : mean_w.values()) x /= static_cast<double>(p.heads);
  Var merged = heads.size() == 1 ? heads[0] : concat(heads, 1);
  return {matmul(merged, b(p.wo)), std::move(mean_w)};
}

NormParams make_norm(ParameterStore& store, const std::string& name, std::size_t d) {
  return {store.add(name + ".gain", Tensor::matrix(1, d, 1.0)),
          store.add(name + ".bias", Tensor::matrix(1, d, 0.0))};
}

namespace {

FeedForwardParams make_ffn(ParameterStore& store, const std::string& name, std::size_t d,
                           std::size_t d_ff, Rng& rng) {
  if (d_ff < d) fail(Errc::kInvalidArgument, "feed-forward width must be >= d_model");
  return {make_linear(store, name + ".expand", d, d_ff, rng),
          make_linear(store, name + ".contract", d_ff, d, rng)};
}

Var feed_forward(Binder& b, const FeedForwardParams& p, Var x) {
  return linear(b, p.contract, relu(linear(b, p.expand, x)));
}

Var norm(Binder& b, const NormParams& p, Var x) { return layer_norm(x, b(p.gain), b(p.bias)); }

}  // namespace

EncoderLayerParams make_encoder_layer(ParameterStore& store, const std::string& name,
                                      std::size_t d_model, std::size_t heads, std::size_t d_ff,
                                      Rng& rng) {
  EncoderLayerParams p;
  p.self_attn = make_mha(store, name + ".self_attn", d_model, heads, rng);
  p.ffn = make_ffn(store, name + ".ffn", d_model, d_ff, rng);
  p.norm1 = make_norm(store, name + ".norm1", d_model);
  p.norm2 = make_norm(store, name + ".norm2", d_model);
  return p;
}

DecoderLayerParams make_decoder_layer(ParameterStore& store, const std::string& name,
                                      std::size_t d_model, std::size_t heads, std::size_t d_ff,
                                      Rng& rng) {
  DecoderLayerParams p;
  p.self_attn = make_mha(store, name + ".self_attn", d_model, heads, rng);
  p.cross_attn = make_mha(store, name + ".cross_attn", d_model, heads, rng);
  p.ffn = make_ffn(store, name + ".ffn", d_model, d_ff, rng);
  p.norm1 = make_norm(store, name + ".norm1", d_model);
  p.norm2 = make_norm(store, name + ".norm2", d_model);
  p.norm3 = make_norm(store, name + ".norm3", d_model);
  return p;
}

Var encoder_layer(Binder& b, const EncoderLayerParams& p, Var x, Var pos) {
  if (x.shape() != pos.shape())
    fail(Errc::kShapeMismatch, "encoder_layer: positions " + shape_string(pos.shape()) +
                                   " vs input " + shape_string(x.shape()));
  Var qk = add(x, pos);
  x = norm(b, p.norm1, add(x, multi_head_attention(b, p.self_attn, qk, qk, x).out));
  return norm(b, p.norm2, add(x, feed_forward(b, p.ffn, x)));
}

DecoderOutput decoder_layer(Binder& b, const DecoderLayerParams& p, Var queries, Var memory,
                            Var qpos, Var mpos) {
  if (queries.shape() != qpos.shape() || memory.shape() != mpos.shape())
    fail(Errc::kShapeMismatch, "decoder_layer: positional tables must match their inputs");
  Var tgt = queries;
  Var q = add(tgt, qpos);
  tgt = norm(b, p.norm1, add(tgt, multi_head_attention(b, p.self_attn, q, q, tgt).out));
  MhaResult cross =
      multi_head_attention(b, p.cross_attn, add(tgt, qpos), add(memory, mpos), memory);
  tgt = norm(b, p.norm2, add(tgt, cross.out));
  tgt = norm(b, p.norm3, add(tgt, feed_forward(b, p.ffn, tgt)));
  return {tgt, std::move(cross.weights)};
}

Tensor spatial_positional_encoding(std::size_t height, std::size_t width, std::size_t d) {
  if (d == 0 || d % 4 != 0)
    fail(Errc::kDimNotDivisible, "spatial encoding width " + std::to_string(d) +
                                     " must be a positive multiple of 4");
  const std::size_t half = d / 2;
  Tensor pe = Tensor::matrix(height * width, d);
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x) {
      const std::size_t row = y * width + x;
      for (std::size_t i = 0; i < half / 2; ++i) {
        const double freq = std::pow(10000.0, static_cast<double>(2 * i) / static_cast<double>(half));
        pe(row, 2 * i) = std::sin(static_cast<double>(x) / freq);
        pe(row, 2 * i + 1) = std::cos(static_cast<double>(x) / freq);
        pe(row, half + 2 * i) = std::sin(static_cast<double>(y) / freq);
        pe(row, half + 2 * i + 1) = std::cos(static_cast<double>(y) / freq);
      }
    }
  return pe;
}

Tensor temporal_positional_encoding(std::size_t steps, std::size_t d) {
  if (d == 0 || d % 2 != 0)
    fail(Errc::kDimNotDivisible, "temporal encoding width " + std::to_string(d) + " must be even");
  if (steps == 0) fail(Errc::kInvalidArgument, "temporal encoding needs T >= 1");
  Tensor pe = Tensor::matrix(steps, d);
  for (std::size_t t = 0; t < steps; ++t)
    for (std::size_t i = 0; i < d / 2; ++i) {
      const double freq = std::pow(10000.0, static_cast<double>(2 * i) / static_cast<double>(d));
      pe(t, 2 * i) = std::sin(static_cast<double>(t) / freq);
      pe(t, 2 * i + 1) = std::cos(static_cast<double>(t) / freq);
    }
  return pe;
}

}  // namespace stdetr
