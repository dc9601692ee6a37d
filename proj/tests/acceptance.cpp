// Acceptance run: one PASS/FAIL line per criterion. Exit status is nonzero
// when any gating criterion fails; criterion 8 is exploratory and only
// reports its measured rate.

#include <chrono>
#include <cstdio>
#include <functional>
#include <iostream>
#include <numeric>
#include <sstream>

#include "atx/data/scenes.hpp"
#include "atx/data/synth.hpp"
#include "atx/explain/scores.hpp"
#include "atx/model/forward.hpp"
#include "atx/numerics/grad_check.hpp"
#include "atx/training/train.hpp"
#include "pipeline.hpp"

using namespace atx;
using data::SceneWindow;
using model::ModelConfig;

namespace {

// Pinned tolerances and thresholds.
constexpr double kRowSumTol = 1e-6;
constexpr double kC1MaxSeconds = 10.0;
constexpr double kOracleTol = 1e-12;
constexpr double kGradStep = 1e-5;
constexpr double kGradRelTol = 1e-4;
constexpr std::size_t kGradSamples = 60;
constexpr double kC3MaxSeconds = 60.0;
constexpr double kEquivTol = 1e-9;
constexpr double kAdeRatio = 0.7;
constexpr double kReconMse = 0.1;
constexpr double kDirectToRate = 0.7;

struct Outcome {
  bool pass = false;
  std::string detail;
  bool gating = true;
};

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t).count();
}

/// The calibration corpus: seed 1, default generator (12 episodes, up to 6
/// aircraft, direct-to probability 0.3) and default windows (dt 5 s, T 24,
/// H 12).
const std::vector<SceneWindow>& corpus() {
  static const std::vector<SceneWindow> scenes = [] {
    data::ScenarioConfig sc;
    sc.seed = 1;
    return data::scenes_from_tracks(data::synth_terminal_scenario(sc).tracks, data::WindowSpec{}).scenes;
  }();
  return scenes;
}

/// Supervised model at default settings, trained once and shared by 6 and 8.
const training::TrainResult& supervised_model() {
  static const training::TrainResult r = training::train(corpus(), ModelConfig{}, training::TrainConfig{});
  return r;
}

Outcome attention_normalization() {
  const auto start = std::chrono::steady_clock::now();
  const ModelConfig c;
  const auto params = model::init_params(c, 101);
  Rng rng(101);
  double worst = 0.0;
  bool padded_zero = true;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 1 + rng.below(8);
    const auto s = test::random_scene(rng, n, 1 + rng.below(n), c.past_steps, c.future_steps);
    const auto out = model::forward(s, params);
    for (const auto& layer : out.attention.aircraft)
      for (const auto& w : layer)
        for (std::size_t i = 0; i < n; ++i)
          if (s.valid[i]) {
            double row = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
              if (s.valid[j]) row += w(i, j);
              else padded_zero = padded_zero && w(i, j) == 0.0;
            }
            worst = std::max(worst, std::abs(row - 1.0));
          }
  }
  const double t = seconds_since(start);
  return {worst <= kRowSumTol && padded_zero && t < kC1MaxSeconds,
          "max |row sum - 1| " + fmt("%.2e", worst) + ", padded columns " + (padded_zero ? "exactly 0" : "NONZERO") +
              ", " + fmt("%.2f s", t)};
}

Outcome attention_oracle() {
  Rng rng(202);
  double worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 1 + rng.below(8), d = 1 + rng.below(16);
    const Tensor q = test::random_tensor(rng, {n, d}, -2, 2), k = test::random_tensor(rng, {n, d}, -2, 2),
                 v = test::random_tensor(rng, {n, d}, -2, 2);
    const auto r = model::scaled_dot_attention(Var::constant(q), Var::constant(k), Var::constant(v));
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> e(n);
      double z = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        double dot = 0.0;
        for (std::size_t t = 0; t < d; ++t) dot += q(i, t) * k(j, t);
        z += e[j] = std::exp(dot / std::sqrt(static_cast<double>(d)));
      }
      for (std::size_t j = 0; j < n; ++j) worst = std::max(worst, std::abs(r.weights.value()(i, j) - e[j] / z));
      for (std::size_t t = 0; t < d; ++t) {
        double acc = 0.0;
        for (std::size_t j = 0; j < n; ++j) acc += e[j] / z * v(j, t);
        worst = std::max(worst, std::abs(r.output.value()(i, t) - acc));
      }
    }
  }
  return {worst <= kOracleTol, "max abs difference " + fmt("%.2e", worst) + " over 50 instances"};
}

Outcome gradient_correctness() {
  const auto start = std::chrono::steady_clock::now();
  ModelConfig c;
  c.d_model = 8;
  c.n_heads = 1;
  c.past_steps = 8;
  c.future_steps = 4;
  c.mlp_hidden = 8;
  const auto params = model::init_params(c, 303);
  const auto layout = model::ParamLayout::for_config(c);
  Rng rng(303);
  const auto scene = test::random_scene(rng, 3, 3, c.past_steps, c.future_steps, 1.0);

  // Only tensors the supervised loss reads; the reconstruction head is held
  // constant so every sample lands on a live coordinate.
  std::vector<std::size_t> live;
  std::vector<Tensor> live_tensors;
  for (std::size_t i = 0; i < params.names.size(); ++i)
    if (params.names[i].rfind("head.reconstruction", 0) != 0) {
      live.push_back(i);
      live_tensors.push_back(params.tensors[i]);
    }
  const ScalarFn f = [&](std::span<const Var> p) {
    std::vector<Var> all = model::bind_constants(params);
    for (std::size_t j = 0; j < live.size(); ++j) all[live[j]] = p[j];
    return model::scene_loss(scene, c, layout, all);
  };
  const auto r = grad_check(f, live_tensors, kGradStep, kGradSamples, 303);
  const double t = seconds_since(start);
  return {r.max_rel_error < kGradRelTol && r.checked >= 50 && t < kC3MaxSeconds,
          "max relative error " + fmt("%.2e", r.max_rel_error) + " over " + std::to_string(r.checked) +
              " coordinates (worst " + params.names[live[r.param]] + "), " + fmt("%.2f s", t)};
}

Outcome permutation_equivariance() {
  ModelConfig c;
  c.n_heads = 2;
  const auto params = model::init_params(c, 404);
  Rng rng(404);
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 2 + rng.below(7);
    const auto s = test::random_scene(rng, n, 1 + rng.below(n), c.past_steps, c.future_steps);
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(perm);
    const auto a = model::forward(s, params), b = model::forward(test::permute_scene(s, perm), params);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t k = 0; k < c.future_steps; ++k)
        for (std::size_t x = 0; x < 3; ++x)
          worst = std::max(worst, std::abs(b.positions(r, k, x) - a.positions(perm[r], k, x)));
    for (std::size_t l = 0; l < a.attention.aircraft.size(); ++l)
      for (std::size_t h = 0; h < a.attention.aircraft[l].size(); ++h)
        for (std::size_t r = 0; r < n; ++r)
          for (std::size_t q = 0; q < n; ++q)
            worst = std::max(worst, std::abs(b.attention.aircraft[l][h](r, q) -
                                             a.attention.aircraft[l][h](perm[r], perm[q])));
  }
  return {worst <= kEquivTol, "max deviation " + fmt("%.2e", worst) + " over 20 scenes"};
}

Outcome mask_isolation() {
  ModelConfig c;
  c.n_heads = 2;
  const auto params = model::init_params(c, 505);
  const auto layout = model::ParamLayout::for_config(c);
  const auto vars = model::bind_constants(params);
  Rng rng(505);
  double padded_change = 0.0, variate_change = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 3 + rng.below(6), valid = 2 + rng.below(n - 2);
    const auto s = test::random_scene(rng, n, valid, c.past_steps, c.future_steps);

    auto dirty = s;
    for (std::size_t i = valid; i < n; ++i)
      for (std::size_t k = 0; k < c.past_steps; ++k)
        for (std::size_t a = 0; a < 3; ++a) dirty.past(i, k, a) = rng.uniform(-5, 5);
    const auto a = model::forward(s, params), b = model::forward(dirty, params);
    padded_change = std::max(padded_change, max_abs_diff(a.positions, b.positions));
    for (std::size_t l = 0; l < a.attention.aircraft.size(); ++l)
      for (std::size_t h = 0; h < a.attention.aircraft[l].size(); ++h) {
        padded_change = std::max(padded_change, max_abs_diff(a.attention.aircraft[l][h], b.attention.aircraft[l][h]));
        padded_change = std::max(padded_change, max_abs_diff(a.attention.variate[l][h], b.attention.variate[l][h]));
      }
    padded_change = std::max(padded_change, std::abs(model::scene_loss(s, c, layout, vars).value().item() -
                                                     model::scene_loss(dirty, c, layout, vars).value().item()));

    // Variate stage: perturb one valid aircraft, the others' tokens stay put.
    const std::size_t victim = rng.below(valid);
    auto moved = s;
    for (std::size_t k = 0; k < c.past_steps; ++k)
      for (std::size_t x = 0; x < 3; ++x) moved.past(victim, k, x) += rng.uniform(-3, 3);
    auto variate_tokens = [&](const SceneWindow& sc) {
      Var t = model::embed_variates(sc, layout, vars, c);
      for (const auto& blk : layout.variate) t = model::masked_variate_attention_layer(t, sc.valid, blk, vars, c).tokens;
      return t.value();
    };
    const Tensor t1 = variate_tokens(s), t2 = variate_tokens(moved);
    for (std::size_t r = 0; r < 3 * n; ++r) {
      if (r / 3 == victim) continue;
      for (std::size_t d = 0; d < c.d_model; ++d) variate_change = std::max(variate_change, std::abs(t1(r, d) - t2(r, d)));
    }
  }
  return {padded_change == 0.0 && variate_change == 0.0,
          "padded-input change " + fmt("%g", padded_change) + ", cross-aircraft variate change " +
              fmt("%g", variate_change) + " over 20 scenes"};
}

Outcome learning_beats_extrapolation() {
  const auto start = std::chrono::steady_clock::now();
  const auto& r = supervised_model();
  const auto val = training::split_scenes(corpus(), training::TrainConfig{}.val_fraction).second;
  const double baseline = training::evaluate_baseline(val).ade;
  const double ade = r.metrics.best().val_ade;
  const double ratio = ade / baseline;
  return {ratio <= kAdeRatio, std::to_string(corpus().size()) + " scenes, val ADE " + fmt("%.4f", ade) +
                                  " km vs constant-velocity " + fmt("%.4f", baseline) + " km, ratio " +
                                  fmt("%.3f", ratio) + " (limit " + fmt("%.2f", kAdeRatio) + "), best epoch " +
                                  std::to_string(r.metrics.best_epoch) + ", " + fmt("%.0f s", seconds_since(start))};
}

Outcome unsupervised_parity() {
  const auto start = std::chrono::steady_clock::now();
  training::TrainConfig tc;
  tc.mode = model::Mode::kUnsupervised;
  ModelConfig mc;
  mc.mode = tc.mode;
  const auto r = training::train(corpus(), mc, tc);
  const double mse = r.metrics.best().val_recon_mse;
  return {mse <= kReconMse, "val reconstruction MSE " + fmt("%.2e", mse) + " (normalized units, limit " +
                                fmt("%.2f", kReconMse) + "), " + fmt("%.0f s", seconds_since(start))};
}

/// Event: direct-to intruder I merges directly ahead of a query Q from
/// another flow that it would have trailed without the direct-to (same seed,
/// direct-to probability 0); the trailing aircraft is the one merging right
/// after Q. Scored in the first scene at or after the cut that holds all
/// three.
Outcome direct_to_attention() {
  const auto& model = supervised_model();
  data::ScenarioConfig held;
  held.seed = 8080;
  held.n_scenes = 40;
  auto counterfactual_cfg = held;
  counterfactual_cfg.direct_to_prob = 0.0;
  const auto scenario = data::synth_terminal_scenario(held);
  const auto counterfactual = data::synth_terminal_scenario(counterfactual_cfg);
  std::map<std::string, double> cf_merge;
  for (const auto& a : counterfactual.aircraft) cf_merge[a.id] = a.merge_time;
  const auto scenes = data::scenes_from_tracks(scenario.tracks, data::WindowSpec{}).scenes;

  auto next_after = [&](const data::SyntheticAircraft& x) {
    const data::SyntheticAircraft* best = nullptr;
    for (const auto& a : scenario.aircraft)
      if (a.episode == x.episode && a.merge_time > x.merge_time && (!best || a.merge_time < best->merge_time)) best = &a;
    return best;
  };

  std::size_t events = 0, wins = 0;
  for (const auto& in : scenario.aircraft) {
    if (!in.direct_to) continue;
    const auto* q = next_after(in);
    if (!q || q->route == in.route || !(cf_merge.at(in.id) > cf_merge.at(q->id))) continue;
    const auto* trail = next_after(*q);
    if (!trail) continue;
    for (const auto& s : scenes) {
      if (s.t0 < in.cut_time) continue;
      const std::size_t iq = s.index_of(q->id), ii = s.index_of(in.id), it = s.index_of(trail->id);
      if (iq == s.slots() || ii == s.slots() || it == s.slots()) continue;
      const auto out = model::forward(data::normalize(s, model.stats), model.params);
      const auto f = explain::lagrangian_scores(out.attention, iq);
      ++events;
      wins += f.scores.at(in.id) > f.scores.at(trail->id) ? 1 : 0;
      break;
    }
  }
  const double rate = events ? static_cast<double>(wins) / static_cast<double>(events) : 0.0;
  return {events > 0 && rate >= kDirectToRate,
          "intruder outscored trailing aircraft in " + std::to_string(wins) + "/" + std::to_string(events) +
              " held-out events (rate " + fmt("%.2f", rate) + ", target " + fmt("%.2f", kDirectToRate) +
              "); exploratory, recorded as a finding",
          false};
}

Outcome end_to_end_determinism() {
  const auto root = test::scratch_dir("acceptance_pipeline");
  const std::string first = test::golden_pipeline(root / "a");
  const std::string second = test::golden_pipeline(root / "b");
  const auto golden = std::filesystem::path(ATX_GOLDEN_DIR) / "pipeline_explanation.json";
  const bool have = std::filesystem::exists(golden);
  const bool match = have && first == test::read_file(golden);
  return {first == second && match, std::string("second run ") + (first == second ? "identical" : "DIFFERS") +
                                        ", committed golden " + (have ? (match ? "identical" : "DIFFERS") : "MISSING") +
                                        " (" + std::to_string(first.size()) + " bytes)"};
}

Outcome eulerian_consistency() {
  const ModelConfig c;
  const auto params = model::init_params(c, 1010);
  Rng rng(1010);
  std::size_t exact = 0;
  const explain::Reduction reductions[] = {explain::Reduction::last_layer_mean(), explain::Reduction::mean(),
                                           explain::Reduction::per_head(0, 0)};
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 1 + rng.below(8), valid = 1 + rng.below(n);
    const auto s = test::random_scene(rng, n, valid, c.past_steps, c.future_steps, 40.0);
    const auto rec = model::forward(s, params).attention;
    const std::size_t m = rng.below(valid), T = c.past_steps;
    const double mx = s.past(m, T - 1, 0), my = s.past(m, T - 1, 1);
    double gap = 1e9;
    for (std::size_t j = 0; j < valid; ++j)
      if (j != m) gap = std::min(gap, std::max(std::abs(s.past(j, T - 1, 0) - mx), std::abs(s.past(j, T - 1, 1) - my)));
    const double half = std::min(1.0, 0.45 * gap);
    const explain::Region region{mx - half, my - half, mx + half, my + half, std::nullopt};
    const auto& red = reductions[trial % 3];
    if (explain::region_members(s, region) == std::vector<std::size_t>{m} &&
        explain::eulerian_scores(rec, s, region, red) == explain::lagrangian_scores(rec, m, red).scores)
      ++exact;
  }
  return {exact == 50, std::to_string(exact) + "/50 single-member regions equal the member's scores exactly"};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"attention normalization", attention_normalization},
      {"attention oracle equivalence", attention_oracle},
      {"gradient correctness", gradient_correctness},
      {"permutation equivariance", permutation_equivariance},
      {"mask isolation", mask_isolation},
      {"learning beats extrapolation", learning_beats_extrapolation},
      {"unsupervised reconstruction", unsupervised_parity},
      {"direct-to attention", direct_to_attention},
      {"end-to-end determinism", end_to_end_determinism},
      {"eulerian consistency", eulerian_consistency},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    if (!o.pass && o.gating) ++failed;
    std::cout << (o.pass ? "PASS" : "FAIL") << "  " << i + 1 << ". " << criteria[i].first << ": " << o.detail
              << (o.gating ? "" : " [not gating]") << std::endl;
  }
  std::cout << (failed ? std::to_string(failed) + " gating criteria failed" : std::string("all gating criteria passed"))
            << std::endl;
  return failed ? 1 : 0;
}
