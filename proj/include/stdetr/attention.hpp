// Copyright 2026 The stdetr Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <vector>

#include "stdetr/nn.hpp"

namespace stdetr {

struct AttentionResult {
  Var out;      // a x e
  Var weights;  // a x b, row-stochastic
};

/// weights = softmax_rows(Q K^T / sqrt(d)); out = weights * V.
/// No projections: this is the bare attention map used everywhere else.
AttentionResult attention_core(Var q, Var k, Var v);

struct MhaParams {
  std::size_t d_model = 0;
  std::size_t heads = 0;
  std::vector<ParamRef> wq, wk, wv;  // one d_model x d_head matrix per head
  ParamRef wo = 0;                   // (heads * d_head) x d_model

  std::size_t d_head() const { return d_model / heads; }
};

MhaParams make_mha(ParameterStore& store, const std::string& name, std::size_t d_model,
                   std::size_t heads, Rng& rng);

struct MhaResult {
  Var out;
  Tensor weights;  // head-averaged attention map, kept for dumps
};

MhaResult multi_head_attention(Binder& b, const MhaParams& p, Var q_in, Var k_in, Var v_in);
inline MhaResult multi_head_attention(Binder& b, const MhaParams& p, Var q_in, Var kv_in) {
  return multi_head_attention(b, p, q_in, kv_in, kv_in);
}

struct NormParams {
  ParamRef gain = 0;
  ParamRef bias = 0;
};

struct FeedForwardParams {
  LinearParams expand;
  LinearParams contract;
};

struct EncoderLayerParams {
  MhaParams self_attn;
  FeedForwardParams ffn;
  NormParams norm1, norm2;
};

struct DecoderLayerParams {
  MhaParams self_attn;
  MhaParams cross_attn;
  FeedForwardParams ffn;
  NormParams norm1, norm2, norm3;
};

NormParams make_norm(ParameterStore& store, const std::string& name, std::size_t d);
EncoderLayerParams make_encoder_layer(ParameterStore& store, const std::string& name,
                                      std::size_t d_model, std::size_t heads, std::size_t d_ff,
                                      Rng& rng);
DecoderLayerParams make_decoder_layer(ParameterStore& store, const std::string& name,
                                      std::size_t d_model, std::size_t heads, std::size_t d_ff,
                                      Rng& rng);

/// Post-norm layer: x = LN(x + SA(x+pos, x+pos, x)); x = LN(x + FFN(x)).
Var encoder_layer(Binder& b, const EncoderLayerParams& p, Var x, Var pos);

struct DecoderOutput {
  Var out;
  Tensor cross_attention;  // q x n, head-averaged
};

/// tgt = LN(tgt + SA(tgt+qpos, tgt+qpos, tgt));
/// tgt = LN(tgt + CA(tgt+qpos, memory+mpos, memory));
/// tgt = LN(tgt + FFN(tgt)).
DecoderOutput decoder_layer(Binder& b, const DecoderLayerParams& p, Var queries, Var memory,
                            Var qpos, Var mpos);

/// HW x d table. Columns [0, d/2) encode the column index x, [d/2, d) the row
/// index y; within each half, column 2i is sin(p / 10000^(2i/(d/2))) and
/// 2i+1 the matching cosine. Row r corresponds to grid cell (r / W, r % W).
Tensor spatial_positional_encoding(std::size_t height, std::size_t width, std::size_t d);

/// T x d table: column 2i = sin(t / 10000^(2i/d)), column 2i+1 = cos(same).
Tensor temporal_positional_encoding(std::size_t steps, std::size_t d);

}  // namespace stdetr
