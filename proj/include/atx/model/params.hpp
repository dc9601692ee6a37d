#pragma once

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "atx/numerics/tensor.hpp"
#include "atx/rng.hpp"

namespace atx::model {

enum class Mode { kSupervised, kUnsupervised };

inline std::string to_string(Mode m) { return m == Mode::kSupervised ? "supervised" : "unsupervised"; }

inline Mode mode_from_string(const std::string& s) {
  if (s == "supervised") return Mode::kSupervised;
  if (s == "unsupervised") return Mode::kUnsupervised;
  throw InputError("unknown mode '" + s + "' (expected supervised or unsupervised)");
}

struct ModelConfig {
  std::size_t d_model = 64;
  std::size_t n_heads = 4;
  std::size_t n_variate_layers = 2;
  std::size_t n_aircraft_layers = 2;
  std::size_t mlp_hidden = 128;
  std::size_t past_steps = 24;
  std::size_t future_steps = 12;
  std::size_t max_aircraft = 8;
  Mode mode = Mode::kSupervised;
  double ln_eps = 1e-5;
  /// Supervised head predicts offsets from each aircraft's last observed
  /// position instead of absolute positions.
  bool anchor_last_position = true;

  std::size_t head_dim() const { return d_model / n_heads; }
  std::size_t output_steps() const { return mode == Mode::kSupervised ? future_steps : past_steps; }

  void validate() const {
    if (d_model < 2 || n_heads < 1 || n_variate_layers < 1 || n_aircraft_layers < 1 || mlp_hidden < 1 ||
        past_steps < 2 || future_steps < 1 || max_aircraft < 1) {
      throw InputError("model config: all sizes must be >= 1 (d_model and past_steps >= 2)");
    }
    if (d_model % n_heads != 0) throw InputError("model config: d_model must be divisible by n_heads");
    if (!(ln_eps > 0.0)) throw InputError("model config: ln_eps must be positive");
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

enum class Init { kFanIn, kOnes, kZeros };

struct ParamSpec {
  std::string name;
  Shape shape;
  Init init;
  std::size_t fan_in;
};

/// Indices of one encoder block's tensors.
struct BlockIndex {
  std::size_t wq, wk, wv, wo, bo;
  std::size_t ln1_gain, ln1_bias;
  std::size_t ff1_w, ff1_b, ff2_w, ff2_b;
  std::size_t ln2_gain, ln2_bias;
};

struct HeadIndex {
  std::size_t w1, b1, w2, b2;
};

/// Names, shapes and positions of every learnable tensor for a config.
/// Positions are stable: the same config always yields the same order.
struct ParamLayout {
  std::vector<ParamSpec> specs;
  std::array<std::size_t, 3> embed_w{}, embed_b{};
  std::vector<BlockIndex> variate, aircraft;
  HeadIndex prediction{}, reconstruction{};

  static ParamLayout for_config(const ModelConfig& c) {
    c.validate();
    ParamLayout L;
    auto add = [&](std::string name, Shape shape, Init init, std::size_t fan_in) {
      L.specs.push_back({std::move(name), std::move(shape), init, fan_in});
      return L.specs.size() - 1;
    };
    const std::size_t d = c.d_model, h = c.mlp_hidden;
    const char* axes[3] = {"x", "y", "z"};
    for (std::size_t a = 0; a < 3; ++a) {
      L.embed_w[a] = add(std::string("embed.") + axes[a] + ".w", {c.past_steps, d}, Init::kFanIn, c.past_steps);
      L.embed_b[a] = add(std::string("embed.") + axes[a] + ".b", {d}, Init::kFanIn, c.past_steps);
    }
    auto block = [&](const std::string& p) {
      BlockIndex b{};
      b.wq = add(p + ".attn.wq", {d, d}, Init::kFanIn, d);
      b.wk = add(p + ".attn.wk", {d, d}, Init::kFanIn, d);
      b.wv = add(p + ".attn.wv", {d, d}, Init::kFanIn, d);
      b.wo = add(p + ".attn.wo", {d, d}, Init::kFanIn, d);
      b.bo = add(p + ".attn.bo", {d}, Init::kFanIn, d);
      b.ln1_gain = add(p + ".ln1.gain", {d}, Init::kOnes, 0);
      b.ln1_bias = add(p + ".ln1.bias", {d}, Init::kZeros, 0);
      b.ff1_w = add(p + ".ff1.w", {d, h}, Init::kFanIn, d);
      b.ff1_b = add(p + ".ff1.b", {h}, Init::kFanIn, d);
      b.ff2_w = add(p + ".ff2.w", {h, d}, Init::kFanIn, h);
      b.ff2_b = add(p + ".ff2.b", {d}, Init::kFanIn, h);
      b.ln2_gain = add(p + ".ln2.gain", {d}, Init::kOnes, 0);
      b.ln2_bias = add(p + ".ln2.bias", {d}, Init::kZeros, 0);
      return b;
    };
    for (std::size_t l = 0; l < c.n_variate_layers; ++l) L.variate.push_back(block("variate." + std::to_string(l)));
    for (std::size_t l = 0; l < c.n_aircraft_layers; ++l)
      L.aircraft.push_back(block("aircraft." + std::to_string(l)));
    auto head = [&](const std::string& p, std::size_t steps) {
      HeadIndex hi{};
      hi.w1 = add(p + ".w1", {d, h}, Init::kFanIn, d);
      hi.b1 = add(p + ".b1", {h}, Init::kFanIn, d);
      hi.w2 = add(p + ".w2", {h, steps * 3}, Init::kFanIn, h);
      hi.b2 = add(p + ".b2", {steps * 3}, Init::kFanIn, h);
      return hi;
    };
    L.prediction = head("head.prediction", c.future_steps);
    L.reconstruction = head("head.reconstruction", c.past_steps);
    return L;
  }
};

/// All learnable tensors of the model plus the config that shaped them.
struct ModelParams {
  ModelConfig config;
  std::vector<std::string> names;
  std::vector<Tensor> tensors;

  std::size_t index(const std::string& name) const {
    for (std::size_t i = 0; i < names.size(); ++i)
      if (names[i] == name) return i;
    throw InputError("unknown parameter '" + name + "'");
  }
  const Tensor& operator[](const std::string& name) const { return tensors[index(name)]; }
  Tensor& operator[](const std::string& name) { return tensors[index(name)]; }

  std::size_t count() const {
    std::size_t n = 0;
    for (const auto& t : tensors) n += t.size();
    return n;
  }

  friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

/// Seeded fan-in initialization: weights and biases of each affine map are
/// uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)]; layer-norm gains 1, biases 0.
inline ModelParams init_params(const ModelConfig& config, std::uint64_t seed) {
  const ParamLayout layout = ParamLayout::for_config(config);
  ModelParams p;
  p.config = config;
  Rng rng(seed);
  for (const auto& spec : layout.specs) {
    Tensor t(spec.shape);
    switch (spec.init) {
      case Init::kOnes:
        for (double& v : t.data()) v = 1.0;
        break;
      case Init::kZeros:
        break;
      case Init::kFanIn: {
        const double bound = 1.0 / std::sqrt(static_cast<double>(spec.fan_in));
        for (double& v : t.data()) v = rng.uniform(-bound, bound);
        break;
      }
    }
    p.names.push_back(spec.name);
    p.tensors.push_back(std::move(t));
  }
  return p;
}

}  // namespace atx::model
