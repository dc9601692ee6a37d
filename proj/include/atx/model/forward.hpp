#pragma once

#include <span>
#include <string>
#include <vector>

#include "atx/data/types.hpp"
#include "atx/model/attention.hpp"
#include "atx/model/params.hpp"

namespace atx::model {

/// Attention weights captured during one forward pass, after softmax.
/// variate[l][h] is [3N x 3N], aircraft[l][h] is [N x N]; rows and columns
/// follow the scene's slot order.
struct AttentionRecord {
  std::vector<std::string> ids;
  Mask valid;
  std::vector<std::vector<Tensor>> variate;
  std::vector<std::vector<Tensor>> aircraft;
};

struct SceneOutput {
  Mode mode = Mode::kSupervised;
  Tensor positions;  // [N x H x 3] prediction or [N x T x 3] reconstruction, normalized units
  AttentionRecord attention;

  const Tensor& prediction() const {
    if (mode != Mode::kSupervised) throw InputError("scene output holds a reconstruction, not a prediction");
    return positions;
  }
  const Tensor& reconstruction() const {
    if (mode != Mode::kUnsupervised) throw InputError("scene output holds a prediction, not a reconstruction");
    return positions;
  }
};

struct GraphOutput {
  Var positions;  // [N x K*3], padded rows zero
  AttentionRecord attention;
};

/// Inverted embedding: each aircraft's x, y and z series (length T) maps
/// through a per-axis affine map to one d_model token. Output rows are
/// ordered (aircraft, axis); padded aircraft give zero rows.
inline Var embed_variates(const data::SceneWindow& scene, const ParamLayout& L, std::span<const Var> p,
                          const ModelConfig& c) {
  const std::size_t T = c.past_steps;
  if (scene.past.rank() != 3 || scene.past_steps() != T || scene.past.dim(2) != 3) {
    throw ShapeError("embed_variates: scene past " + shape_str(scene.past.shape()) + " does not match T=" +
                     std::to_string(T));
  }
  const auto act = valid_slots(scene.valid);
  if (act.empty()) throw NumericError("embed_variates: scene has no valid aircraft");
  const std::size_t n = act.size();
  std::vector<Var> per_axis;
  for (std::size_t a = 0; a < 3; ++a) {
    Tensor x({n, T});
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t s = 0; s < T; ++s) x(r, s) = scene.past(act[r], s, a);
    per_axis.push_back(linear(Var::constant(std::move(x)), p[L.embed_w[a]], p[L.embed_b[a]]));
  }
  std::vector<std::size_t> dest(3 * n);
  for (std::size_t a = 0; a < 3; ++a)
    for (std::size_t r = 0; r < n; ++r) dest[a * n + r] = 3 * act[r] + a;
  return scatter_rows(concat_rows(per_axis), std::move(dest), 3 * scene.slots());
}

/// Builds the differentiable forward pass: embed, variate attention,
/// pooling, aircraft attention, per-aircraft MLP head.
inline GraphOutput forward_graph(const data::SceneWindow& scene, const ModelConfig& c, const ParamLayout& L,
                                 std::span<const Var> p) {
  const std::size_t N = scene.slots();
  if (N > c.max_aircraft) {
    throw ShapeError("forward: scene has " + std::to_string(N) + " slots, model allows " +
                     std::to_string(c.max_aircraft));
  }
  if (scene.valid.size() != N) throw ShapeError("forward: valid mask does not match ids");
  GraphOutput out;
  out.attention.ids = scene.ids;
  out.attention.valid = scene.valid;

  Var tokens = embed_variates(scene, L, p, c);
  for (const auto& block : L.variate) {
    auto r = masked_variate_attention_layer(tokens, scene.valid, block, p, c);
    tokens = r.tokens;
    out.attention.variate.push_back(std::move(r.weights));
  }
  Var agents = pool_aircraft(tokens);
  for (const auto& block : L.aircraft) {
    auto r = aircraft_attention_layer(agents, scene.valid, block, p, c);
    agents = r.tokens;
    out.attention.aircraft.push_back(std::move(r.weights));
  }

  const auto act = valid_slots(scene.valid);
  const HeadIndex& head = c.mode == Mode::kSupervised ? L.prediction : L.reconstruction;
  const std::size_t K = c.output_steps();
  Var z = act.size() == N ? agents : gather_rows(agents, act);
  Var y = linear(gelu(linear(z, p[head.w1], p[head.b1])), p[head.w2], p[head.b2]);
  if (c.mode == Mode::kSupervised && c.anchor_last_position) {
    const std::size_t T = c.past_steps;
    Tensor anchor({act.size(), K * 3});
    for (std::size_t r = 0; r < act.size(); ++r)
      for (std::size_t k = 0; k < K; ++k)
        for (std::size_t a = 0; a < 3; ++a) anchor(r, k * 3 + a) = scene.past(act[r], T - 1, a);
    y = add(y, Var::constant(std::move(anchor)));
  }
  out.positions = act.size() == N ? y : scatter_rows(y, act, N);
  return out;
}

inline std::vector<Var> bind_constants(const ModelParams& params) {
  std::vector<Var> vars;
  vars.reserve(params.tensors.size());
  for (const auto& t : params.tensors) vars.push_back(Var::constant(t));
  return vars;
}

inline std::vector<Var> bind_leaves(const ModelParams& params) {
  std::vector<Var> vars;
  vars.reserve(params.tensors.size());
  for (const auto& t : params.tensors) vars.push_back(Var::leaf(t));
  return vars;
}

/// Inference on one normalized scene.
inline SceneOutput forward(const data::SceneWindow& scene, const ModelParams& params) {
  const ParamLayout L = ParamLayout::for_config(params.config);
  if (L.specs.size() != params.tensors.size()) throw ShapeError("forward: parameter set does not match config");
  const auto vars = bind_constants(params);
  GraphOutput g = forward_graph(scene, params.config, L, vars);
  SceneOutput out;
  out.mode = params.config.mode;
  out.positions = g.positions.value().reshaped({scene.slots(), params.config.output_steps(), 3});
  out.attention = std::move(g.attention);
  return out;
}

/// Target tensor for the configured paradigm, flattened to [N x K*3].
inline Tensor training_target(const data::SceneWindow& scene, Mode mode) {
  const Tensor& t = mode == Mode::kSupervised ? scene.future : scene.past;
  return t.reshaped({t.dim(0), t.dim(1) * 3});
}

/// Loss mask over [N x K*3] selecting valid aircraft rows.
inline Mask row_mask(const Mask& valid, std::size_t cols) {
  Mask m({valid.size(), cols}, false);
  for (std::size_t i = 0; i < valid.size(); ++i)
    if (valid[i])
      for (std::size_t j = 0; j < cols; ++j) m.set(i, j, true);
  return m;
}

/// Masked MSE of one scene under the configured paradigm.
inline Var scene_loss(const data::SceneWindow& scene, const ModelConfig& c, const ParamLayout& L,
                      std::span<const Var> p) {
  GraphOutput g = forward_graph(scene, c, L, p);
  Tensor target = training_target(scene, c.mode);
  return mse(g.positions, target, row_mask(scene.valid, target.cols()));
}

}  // namespace atx::model
