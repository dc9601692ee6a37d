#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "atx/model/params.hpp"
#include "atx/numerics/autodiff.hpp"

namespace atx::model {

struct AttentionResult {
  Var output;   // [n x d_k]
  Var weights;  // [n x n], rows sum to 1 over allowed keys
};

/// softmax(q k^T / sqrt(d_k), mask) v.
inline AttentionResult scaled_dot_attention(const Var& q, const Var& k, const Var& v, const Mask* mask = nullptr) {
  if (q.shape() != k.shape() || q.value().rows() != v.value().rows()) {
    throw ShapeError("scaled_dot_attention: q " + shape_str(q.shape()) + ", k " + shape_str(k.shape()) + ", v " +
                     shape_str(v.shape()));
  }
  const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(q.value().cols()));
  Var scores = scale(matmul(q, transpose(k)), inv_sqrt_dk);
  Var w = softmax_rows(scores, mask);
  return {matmul(w, v), w};
}

inline Var linear(const Var& x, const Var& w, const Var& b) { return add_bias(matmul(x, w), b); }

struct BlockOutput {
  Var tokens;                  // same shape as the input tokens
  std::vector<Tensor> weights;  // per head, [rows x rows]; inactive rows/columns are 0
};

/// Post-norm encoder block over the `active` rows of `tokens`:
///   h = LN(x + MHA(x)),  y = LN(h + FF(h)).
/// Inactive rows take no part (neither as queries nor keys) and come out as
/// zeros. `mask` is over the active rows, in the order given.
inline BlockOutput encoder_block(const Var& tokens, const std::vector<std::size_t>& active, const Mask* mask,
                                 const BlockIndex& b, std::span<const Var> p, const ModelConfig& c) {
  const std::size_t rows = tokens.value().rows();
  const std::size_t n = active.size();
  if (n == 0) throw NumericError("encoder block: no active tokens");
  const bool compact = n != rows;
  Var x = compact ? gather_rows(tokens, active) : tokens;

  Var q = matmul(x, p[b.wq]);
  Var k = matmul(x, p[b.wk]);
  Var v = matmul(x, p[b.wv]);
  const std::size_t dk = c.head_dim();
  std::vector<Var> heads;
  BlockOutput out;
  for (std::size_t h = 0; h < c.n_heads; ++h) {
    auto r = scaled_dot_attention(slice_cols(q, h * dk, dk), slice_cols(k, h * dk, dk), slice_cols(v, h * dk, dk),
                                  mask);
    heads.push_back(r.output);
    Tensor full({rows, rows});
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) full(active[i], active[j]) = r.weights.value()(i, j);
    out.weights.push_back(std::move(full));
  }
  Var attn = linear(c.n_heads == 1 ? heads.front() : concat_cols(heads), p[b.wo], p[b.bo]);
  Var h1 = layer_norm(add(x, attn), p[b.ln1_gain], p[b.ln1_bias], c.ln_eps);
  Var ff = linear(gelu(linear(h1, p[b.ff1_w], p[b.ff1_b])), p[b.ff2_w], p[b.ff2_b]);
  Var y = layer_norm(add(h1, ff), p[b.ln2_gain], p[b.ln2_bias], c.ln_eps);
  out.tokens = compact ? scatter_rows(y, active, rows) : y;
  return out;
}

inline std::vector<std::size_t> valid_slots(const Mask& valid) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < valid.size(); ++i)
    if (valid[i]) out.push_back(i);
  return out;
}

/// Attention among the three variate tokens of each aircraft only.
/// Tokens are ordered aircraft-major, axis-minor.
inline BlockOutput masked_variate_attention_layer(const Var& tokens, const Mask& valid, const BlockIndex& b,
                                                  std::span<const Var> p, const ModelConfig& c) {
  if (tokens.value().rows() != 3 * valid.size()) {
    throw ShapeError("variate attention: expected " + std::to_string(3 * valid.size()) + " tokens, got " +
                     shape_str(tokens.shape()));
  }
  std::vector<std::size_t> active;
  for (std::size_t i : valid_slots(valid))
    for (std::size_t a = 0; a < 3; ++a) active.push_back(3 * i + a);
  const std::size_t n = active.size();
  Mask block({n, n}, false);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) block.set(i, j, active[i] / 3 == active[j] / 3);
  return encoder_block(tokens, active, &block, b, p, c);
}

/// Attention among aircraft tokens. Every valid aircraft is a key for every
/// valid query, itself included; padded slots are excluded on both sides.
inline BlockOutput aircraft_attention_layer(const Var& tokens, const Mask& valid, const BlockIndex& b,
                                            std::span<const Var> p, const ModelConfig& c) {
  if (tokens.value().rows() != valid.size()) {
    throw ShapeError("aircraft attention: expected " + std::to_string(valid.size()) + " tokens, got " +
                     shape_str(tokens.shape()));
  }
  const auto active = valid_slots(valid);
  if (active.empty()) throw NumericError("aircraft attention: scene has no valid aircraft");
  return encoder_block(tokens, active, nullptr, b, p, c);
}

/// Mean of each aircraft's three variate tokens.
inline Var pool_aircraft(const Var& tokens) { return group_mean_rows(tokens, 3); }

}  // namespace atx::model
