#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <numeric>
#include <string>
#include <vector>

#include "atx/data/scenes.hpp"
#include "atx/model/forward.hpp"
#include "atx/rng.hpp"

namespace atx::training {

using data::DatasetStats;
using data::SceneWindow;
using model::ModelConfig;
using model::ModelParams;

enum class LrSchedule { kConstant, kCosine };

inline std::string to_string(LrSchedule s) { return s == LrSchedule::kCosine ? "cosine" : "constant"; }

inline LrSchedule lr_schedule_from_string(const std::string& s) {
  if (s == "constant") return LrSchedule::kConstant;
  if (s == "cosine") return LrSchedule::kCosine;
  throw InputError("unknown lr schedule '" + s + "' (expected constant or cosine)");
}

struct TrainConfig {
  double lr = 1e-3;
  LrSchedule schedule = LrSchedule::kCosine;  // cosine: lr decays to 0 at the last configured epoch
  std::size_t epochs = 60;
  std::size_t batch_size = 8;
  std::uint64_t seed = 0;
  model::Mode mode = model::Mode::kSupervised;
  double clip_norm = 1.0;
  double val_fraction = 0.2;  // chronologically last scenes go to validation
  std::size_t patience = 10;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;

  void validate() const {
    if (!(lr >= 0.0) || !std::isfinite(lr)) throw InputError("train config: lr must be finite and >= 0");
    if (!(val_fraction > 0.0 && val_fraction < 1.0)) throw InputError("train config: val_fraction must lie in (0, 1)");
    if (epochs < 1 || batch_size < 1) throw InputError("train config: epochs and batch_size must be >= 1");
    if (!(clip_norm > 0.0)) throw InputError("train config: clip_norm must be positive");
  }
};

struct EpochMetrics {
  std::size_t epoch = 0;
  double train_loss = 0.0;  // masked MSE, normalized units
  double val_ade = 0.0;     // km
  double val_fde = 0.0;     // km
  double val_recon_mse = std::numeric_limits<double>::quiet_NaN();  // normalized units, unsupervised only
};

struct Metrics {
  std::vector<EpochMetrics> epochs;
  std::size_t best_epoch = 0;
  bool stopped_early = false;

  const EpochMetrics& best() const { return epochs.at(best_epoch - 1); }
};

struct EvalMetrics {
  double ade = 0.0;
  double fde = 0.0;
  double recon_mse = std::numeric_limits<double>::quiet_NaN();
  std::size_t aircraft = 0;
};

/// Running sums for average and final displacement error.
class DisplacementAccumulator {
 public:
  /// `pred` and `truth` are [N x K x 3] in kilometers.
  void add(const Tensor& pred, const Tensor& truth, const Mask& valid) {
    const std::size_t K = truth.dim(1);
    for (std::size_t i = 0; i < truth.dim(0); ++i) {
      if (!valid[i]) continue;
      for (std::size_t k = 0; k < K; ++k) {
        double sq = 0.0;
        for (std::size_t a = 0; a < 3; ++a) {
          const double d = pred(i, k, a) - truth(i, k, a);
          sq += d * d;
        }
        const double dist = std::sqrt(sq);
        sum_all_ += dist;
        if (k + 1 == K) sum_final_ += dist;
      }
      steps_ += static_cast<double>(K);
      aircraft_ += 1;
    }
  }

  double ade() const { return aircraft_ ? sum_all_ / steps_ : 0.0; }
  double fde() const { return aircraft_ ? sum_final_ / static_cast<double>(aircraft_) : 0.0; }
  std::size_t aircraft() const { return aircraft_; }

 private:
  double sum_all_ = 0.0, sum_final_ = 0.0, steps_ = 0.0;
  std::size_t aircraft_ = 0;
};

/// Extrapolates each valid aircraft from its last past position with the
/// mean velocity of its last three steps (fewer when T < 4). Works in any
/// per-axis affine units.
inline Tensor baseline_constant_velocity(const SceneWindow& scene, std::size_t horizon) {
  const std::size_t N = scene.slots(), T = scene.past_steps();
  if (T < 2) throw InputError("constant-velocity baseline needs at least 2 past steps");
  const std::size_t span = std::min<std::size_t>(3, T - 1);
  Tensor out({N, horizon, 3});
  for (std::size_t i = 0; i < N; ++i) {
    if (!scene.valid[i]) continue;
    for (std::size_t a = 0; a < 3; ++a) {
      const double last = scene.past(i, T - 1, a);
      const double v = (last - scene.past(i, T - 1 - span, a)) / static_cast<double>(span);
      for (std::size_t h = 0; h < horizon; ++h) out(i, h, a) = last + static_cast<double>(h + 1) * v;
    }
  }
  return out;
}

inline Tensor baseline_constant_velocity(const SceneWindow& scene) {
  return baseline_constant_velocity(scene, scene.future_steps());
}

/// Baseline ADE/FDE on raw-kilometer scenes.
inline EvalMetrics evaluate_baseline(const std::vector<SceneWindow>& scenes_km) {
  if (scenes_km.empty()) throw InputError("evaluate: empty scene list");
  DisplacementAccumulator acc;
  for (const auto& s : scenes_km) acc.add(baseline_constant_velocity(s), s.future, s.valid);
  return {acc.ade(), acc.fde(), std::numeric_limits<double>::quiet_NaN(), acc.aircraft()};
}

/// ADE/FDE in kilometers (and reconstruction MSE in normalized units for
/// the unsupervised paradigm) over normalized scenes.
inline EvalMetrics evaluate(const ModelParams& params, const DatasetStats& stats,
                            const std::vector<SceneWindow>& normalized) {
  if (normalized.empty()) throw InputError("evaluate: empty scene list");
  const bool supervised = params.config.mode == model::Mode::kSupervised;
  const auto layout = model::ParamLayout::for_config(params.config);
  const auto vars = model::bind_constants(params);
  DisplacementAccumulator acc;
  double sq = 0.0, count = 0.0;
  for (const auto& s : normalized) {
    auto g = model::forward_graph(s, params.config, layout, vars);
    const std::size_t K = params.config.output_steps();
    Tensor out = g.positions.value().reshaped({s.slots(), K, 3});
    const Tensor& truth = supervised ? s.future : s.past;
    if (!supervised) {
      for (std::size_t i = 0; i < s.slots(); ++i) {
        if (!s.valid[i]) continue;
        for (std::size_t j = 0; j < K * 3; ++j) {
          const double d = out[i * K * 3 + j] - truth[i * K * 3 + j];
          sq += d * d;
        }
        count += static_cast<double>(K * 3);
      }
    }
    acc.add(data::denormalize_positions(std::move(out), s.valid, stats),
            data::denormalize_positions(truth, s.valid, stats), s.valid);
  }
  EvalMetrics m{acc.ade(), acc.fde(), std::numeric_limits<double>::quiet_NaN(), acc.aircraft()};
  if (!supervised) m.recon_mse = sq / count;
  return m;
}

/// Chronological split: the last `val_fraction` of scenes (by t0) validate.
inline std::pair<std::vector<SceneWindow>, std::vector<SceneWindow>> split_scenes(
    const std::vector<SceneWindow>& scenes, double val_fraction) {
  if (scenes.size() < 2) throw InputError("training needs at least 2 scenes");
  std::vector<std::size_t> order(scenes.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scenes[a].t0 < scenes[b].t0; });
  auto n_val = static_cast<std::size_t>(std::round(val_fraction * static_cast<double>(scenes.size())));
  n_val = std::clamp<std::size_t>(n_val, 1, scenes.size() - 1);
  std::pair<std::vector<SceneWindow>, std::vector<SceneWindow>> out;
  for (std::size_t r = 0; r < order.size(); ++r)
    (r < order.size() - n_val ? out.first : out.second).push_back(scenes[order[r]]);
  return out;
}

struct TrainResult {
  ModelParams params;  // best validation epoch
  DatasetStats stats;  // from the training split
  Metrics metrics;
};

using EpochCallback = std::function<void(const EpochMetrics&)>;

/// Fits the model with Adam on masked MSE. Scenes are in kilometers; the
/// split, normalization statistics, initialization and batch order all
/// derive from `tc.seed`, so a run is reproducible bit for bit.
inline TrainResult train_on_split(const std::vector<SceneWindow>& train_km, const std::vector<SceneWindow>& val_km,
                                  ModelConfig mc, const TrainConfig& tc, const EpochCallback& on_epoch = {}) {
  tc.validate();
  mc.mode = tc.mode;
  mc.validate();
  if (train_km.empty() || val_km.empty()) throw InputError("training needs non-empty train and validation splits");

  TrainResult result;
  result.stats = data::compute_stats(train_km);
  std::vector<SceneWindow> train, val;
  for (const auto& s : train_km) train.push_back(data::normalize(s, result.stats));
  for (const auto& s : val_km) val.push_back(data::normalize(s, result.stats));

  ModelParams params = model::init_params(mc, derive_seed(tc.seed, "init"));
  const auto layout = model::ParamLayout::for_config(mc);
  Rng order_rng(derive_seed(tc.seed, "batch-order"));

  std::vector<Tensor> m1, m2;
  for (const auto& t : params.tensors) {
    m1.emplace_back(t.shape());
    m2.emplace_back(t.shape());
  }
  std::size_t step = 0;
  double best_score = std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;
  result.params = params;

  std::vector<Tensor> targets;
  std::vector<Mask> masks;
  for (const auto& s : train) {
    targets.push_back(model::training_target(s, mc.mode));
    masks.push_back(model::row_mask(s.valid, targets.back().cols()));
  }

  for (std::size_t epoch = 1; epoch <= tc.epochs; ++epoch) {
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);
    order_rng.shuffle(order);

    double lr = tc.lr;
    if (tc.schedule == LrSchedule::kCosine) {
      const double frac = static_cast<double>(epoch - 1) / static_cast<double>(tc.epochs);
      lr = 0.5 * tc.lr * (1.0 + std::cos(std::numbers::pi * frac));
    }
    double loss_sum = 0.0, entry_sum = 0.0;
    std::size_t batch_no = 0;
    for (std::size_t start = 0; start < order.size(); start += tc.batch_size, ++batch_no) {
      const std::size_t end = std::min(order.size(), start + tc.batch_size);
      double denom = 0.0;
      for (std::size_t b = start; b < end; ++b) denom += static_cast<double>(masks[order[b]].count());

      auto leaves = model::bind_leaves(params);
      double batch_loss = 0.0;
      try {
        for (std::size_t b = start; b < end; ++b) {
          const std::size_t i = order[b];
          auto g = model::forward_graph(train[i], mc, layout, leaves);
          Var loss = masked_sse(g.positions, targets[i], masks[i], denom);
          batch_loss += loss.value().item();
          backward(loss);
        }
      } catch (const NumericError& e) {
        throw NumericError("training diverged at epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(batch_no) + ": " + e.what());
      }
      if (!std::isfinite(batch_loss)) {
        throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " + std::to_string(batch_no));
      }
      loss_sum += batch_loss * denom;
      entry_sum += denom;

      std::vector<Tensor> grads;
      double norm_sq = 0.0;
      for (const auto& l : leaves) {
        grads.push_back(l.grad());
        for (double g : grads.back().data()) norm_sq += g * g;
      }
      const double norm = std::sqrt(norm_sq);
      const double clip = norm > tc.clip_norm ? tc.clip_norm / norm : 1.0;

      ++step;
      const double c1 = 1.0 - std::pow(tc.beta1, static_cast<double>(step));
      const double c2 = 1.0 - std::pow(tc.beta2, static_cast<double>(step));
      for (std::size_t p = 0; p < params.tensors.size(); ++p) {
        auto& w = params.tensors[p];
        for (std::size_t j = 0; j < w.size(); ++j) {
          const double g = grads[p][j] * clip;
          m1[p][j] = tc.beta1 * m1[p][j] + (1.0 - tc.beta1) * g;
          m2[p][j] = tc.beta2 * m2[p][j] + (1.0 - tc.beta2) * g * g;
          w[j] -= lr * (m1[p][j] / c1) / (std::sqrt(m2[p][j] / c2) + tc.adam_eps);
        }
      }
    }

    EpochMetrics em;
    em.epoch = epoch;
    em.train_loss = loss_sum / entry_sum;
    const EvalMetrics val_m = evaluate(params, result.stats, val);
    em.val_ade = val_m.ade;
    em.val_fde = val_m.fde;
    em.val_recon_mse = val_m.recon_mse;
    result.metrics.epochs.push_back(em);
    if (on_epoch) on_epoch(em);

    const double score = mc.mode == model::Mode::kSupervised ? em.val_ade : em.val_recon_mse;
    if (score < best_score) {
      best_score = score;
      result.params = params;
      result.metrics.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= tc.patience) {
      result.metrics.stopped_early = true;
      break;
    }
  }
  return result;
}

inline TrainResult train(const std::vector<SceneWindow>& scenes_km, const ModelConfig& mc, const TrainConfig& tc,
                         const EpochCallback& on_epoch = {}) {
  tc.validate();
  auto [tr, va] = split_scenes(scenes_km, tc.val_fraction);
  return train_on_split(tr, va, mc, tc, on_epoch);
}

}  // namespace atx::training
