#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "atx/numerics/autodiff.hpp"
#include "atx/rng.hpp"

namespace atx {

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  // Location of the worst coordinate.
  std::size_t param = 0;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

/// Scalar function of a list of parameter tensors, built from Vars so that
/// the same code serves both the analytic and the finite-difference pass.
using ScalarFn = std::function<Var(std::span<const Var>)>;

/// Compares reverse-mode gradients against central differences.
///
/// Relative error per coordinate is
///   |analytic - numeric| / max(|analytic|, |numeric|, 1e-12).
/// With `max_samples == 0` every coordinate is checked; otherwise that many
/// coordinates are drawn uniformly (with a seeded generator) over all params.
inline GradCheckReport grad_check(const ScalarFn& f, std::vector<Tensor> params, double step,
                                  std::size_t max_samples = 0, std::uint64_t seed = 0) {
  if (!(step > 0.0)) throw InputError("grad_check: step must be positive");

  std::vector<Var> leaves;
  leaves.reserve(params.size());
  for (const auto& p : params) leaves.push_back(Var::leaf(p));
  Var loss = f(leaves);
  backward(loss);
  std::vector<Tensor> analytic;
  analytic.reserve(leaves.size());
  for (const auto& l : leaves) analytic.push_back(l.grad());
  leaves.clear();

  std::vector<std::pair<std::size_t, std::size_t>> coords;
  for (std::size_t p = 0; p < params.size(); ++p)
    for (std::size_t i = 0; i < params[p].size(); ++i) coords.emplace_back(p, i);
  if (max_samples != 0 && coords.size() > max_samples) {
    Rng rng(seed);
    rng.shuffle(coords);
    coords.resize(max_samples);
  }

  auto evaluate = [&]() {
    std::vector<Var> consts;
    consts.reserve(params.size());
    for (const auto& p : params) consts.push_back(Var::constant(p));
    return f(consts).value().item();
  };

  GradCheckReport report;
  for (const auto& [p, i] : coords) {
    const double saved = params[p][i];
    params[p][i] = saved + step;
    const double up = evaluate();
    params[p][i] = saved - step;
    const double down = evaluate();
    params[p][i] = saved;

    const double numeric = (up - down) / (2.0 * step);
    const double a = analytic[p][i];
    const double denom = std::max({std::abs(a), std::abs(numeric), 1e-12});
    const double rel = std::abs(a - numeric) / denom;
    if (report.checked++ == 0 || rel > report.max_rel_error) {
      report.max_rel_error = rel;
      report.param = p;
      report.index = i;
      report.analytic = a;
      report.numeric = numeric;
    }
  }
  return report;
}

}  // namespace atx
