#pragma once

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "atx/data/types.hpp"
#include "atx/model/forward.hpp"

namespace atx::explain {

using model::AttentionRecord;

/// Influence of every key aircraft on one query aircraft at one time.
struct ExplanationFrame {
  double t0 = 0.0;
  std::string query_id;
  std::map<std::string, double> scores;  // renormalized over valid keys

  friend bool operator==(const ExplanationFrame&, const ExplanationFrame&) = default;
};

struct AttentionTimeSeries {
  std::string query_id;
  std::vector<ExplanationFrame> frames;  // strictly increasing t0

  friend bool operator==(const AttentionTimeSeries&, const AttentionTimeSeries&) = default;
};

/// Which captured aircraft-attention matrices feed a score.
struct Reduction {
  enum class Kind { kMean, kLastLayerMean, kHead };
  Kind kind = Kind::kLastLayerMean;
  std::size_t layer = 0;  // kHead only
  std::size_t head = 0;   // kHead only

  static Reduction mean() { return {Kind::kMean, 0, 0}; }
  static Reduction last_layer_mean() { return {Kind::kLastLayerMean, 0, 0}; }
  static Reduction per_head(std::size_t layer, std::size_t head) { return {Kind::kHead, layer, head}; }

  /// "mean", "last-layer-mean", or "head:<layer>:<head>".
  static Reduction parse(const std::string& s) {
    if (s == "mean") return mean();
    if (s == "last-layer-mean") return last_layer_mean();
    unsigned long l = 0, h = 0;
    char tail = 0;
    if (std::sscanf(s.c_str(), "head:%lu:%lu%c", &l, &h, &tail) == 2) return per_head(l, h);
    throw InputError("unknown reduction '" + s + "' (expected mean, last-layer-mean, or head:<layer>:<head>)");
  }

  std::string str() const {
    switch (kind) {
      case Kind::kMean:
        return "mean";
      case Kind::kLastLayerMean:
        return "last-layer-mean";
      case Kind::kHead:
        break;
    }
    return "head:" + std::to_string(layer) + ":" + std::to_string(head);
  }
};

/// Averages the selected [N x N] aircraft-attention matrices.
inline Tensor reduced_attention(const AttentionRecord& rec, const Reduction& r) {
  if (rec.aircraft.empty() || rec.aircraft.front().empty()) throw InputError("attention record has no aircraft layers");
  std::vector<const Tensor*> picked;
  switch (r.kind) {
    case Reduction::Kind::kMean:
      for (const auto& layer : rec.aircraft)
        for (const auto& h : layer) picked.push_back(&h);
      break;
    case Reduction::Kind::kLastLayerMean:
      for (const auto& h : rec.aircraft.back()) picked.push_back(&h);
      break;
    case Reduction::Kind::kHead:
      if (r.layer >= rec.aircraft.size() || r.head >= rec.aircraft[r.layer].size()) {
        throw InputError("reduction " + r.str() + " is outside the record's layers/heads");
      }
      picked.push_back(&rec.aircraft[r.layer][r.head]);
      break;
  }
  Tensor out(picked.front()->shape());
  for (const Tensor* t : picked)
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += (*t)[i];
  const double w = 1.0 / static_cast<double>(picked.size());
  for (double& v : out.data()) v *= w;
  return out;
}

/// The query's row of the reduced aircraft attention, renormalized over
/// valid keys (the query itself included).
inline ExplanationFrame lagrangian_scores(const AttentionRecord& rec, std::size_t query,
                                          const Reduction& r = Reduction::last_layer_mean(), double t0 = 0.0) {
  if (query >= rec.ids.size() || !rec.valid[query]) {
    throw InputError("query slot " + std::to_string(query) + " is padding or out of range");
  }
  const Tensor a = reduced_attention(rec, r);
  double total = 0.0;
  for (std::size_t k = 0; k < rec.ids.size(); ++k)
    if (rec.valid[k]) total += a(query, k);
  ExplanationFrame f;
  f.t0 = t0;
  f.query_id = rec.ids[query];
  for (std::size_t k = 0; k < rec.ids.size(); ++k)
    if (rec.valid[k]) f.scores[rec.ids[k]] = a(query, k) / total;
  return f;
}

struct TimeSeriesResult {
  AttentionTimeSeries series;
  std::vector<std::string> notices;  // frames skipped because the query was absent
};

/// One forward pass per normalized scene; one frame per scene containing
/// the query aircraft.
inline TimeSeriesResult attention_timeseries(const std::vector<data::SceneWindow>& scenes,
                                             const model::ModelParams& params, const std::string& query_id,
                                             const Reduction& r = Reduction::last_layer_mean()) {
  TimeSeriesResult out;
  out.series.query_id = query_id;
  for (std::size_t s = 0; s < scenes.size(); ++s) {
    if (s > 0 && !(scenes[s].t0 > scenes[s - 1].t0)) {
      throw InputError("attention_timeseries: scenes must be ordered by strictly increasing t0");
    }
    const std::size_t q = scenes[s].index_of(query_id);
    if (q == scenes[s].slots()) {
      out.notices.push_back("query " + query_id + " absent from scene at t0=" + std::to_string(scenes[s].t0) +
                            "; frame skipped");
      continue;
    }
    const auto result = model::forward(scenes[s], params);
    out.series.frames.push_back(lagrangian_scores(result.attention, q, r, scenes[s].t0));
  }
  if (out.series.frames.empty()) throw InputError("query " + query_id + " is absent from every scene");
  return out;
}

/// Axis-aligned box in the local plane (km), optional altitude band.
struct Region {
  double x0 = 0.0, y0 = 0.0, x1 = 0.0, y1 = 0.0;
  std::optional<std::pair<double, double>> altitude;

  void validate() const {
    if (!(x1 > x0) || !(y1 > y0)) throw InputError("region " + str() + " has empty extent");
    if (altitude && !(altitude->second > altitude->first)) throw InputError("region altitude band is empty");
  }
  bool contains(double x, double y, double z) const {
    if (x < x0 || x > x1 || y < y0 || y > y1) return false;
    return !altitude || (z >= altitude->first && z <= altitude->second);
  }
  std::string str() const {
    char buf[128];
    std::snprintf(buf, sizeof buf, "%g,%g,%g,%g", x0, y0, x1, y1);
    return buf;
  }

  /// "x0,y0,x1,y1" with optional ",z0,z1".
  static Region parse(const std::string& s) {
    std::vector<double> v;
    std::size_t pos = 0;
    while (pos <= s.size()) {
      const std::size_t comma = std::min(s.find(',', pos), s.size());
      const std::string field = s.substr(pos, comma - pos);
      char* end = nullptr;
      const double d = std::strtod(field.c_str(), &end);
      if (field.empty() || end != field.c_str() + field.size() || !std::isfinite(d)) {
        throw InputError("region must be x0,y0,x1,y1 or x0,y0,x1,y1,z0,z1 (km), got '" + s + "'");
      }
      v.push_back(d);
      pos = comma + 1;
    }
    if (v.size() != 4 && v.size() != 6) {
      throw InputError("region must be x0,y0,x1,y1 or x0,y0,x1,y1,z0,z1 (km), got '" + s + "'");
    }
    Region r{v[0], v[1], v[2], v[3], std::nullopt};
    if (v.size() == 6) r.altitude = std::make_pair(v[4], v[5]);
    r.validate();
    return r;
  }
};

/// Valid slots whose current position (last past step, km) lies in `region`.
inline std::vector<std::size_t> region_members(const data::SceneWindow& scene_km, const Region& region) {
  region.validate();
  const std::size_t T = scene_km.past_steps();
  std::vector<std::size_t> members;
  for (std::size_t i = 0; i < scene_km.slots(); ++i) {
    if (!scene_km.valid[i]) continue;
    if (region.contains(scene_km.past(i, T - 1, 0), scene_km.past(i, T - 1, 1), scene_km.past(i, T - 1, 2)))
      members.push_back(i);
  }
  return members;
}

enum class EulerianMode {
  kRows,     // mean of member aircraft's query rows: influence received, keyed by influencer
  kColumns,  // mean attention every aircraft pays to region members, keyed by query
};

/// Regional view: averages the attention of every aircraft whose current
/// position (last past step, kilometers) lies inside `region`.
inline std::map<std::string, double> eulerian_scores(const AttentionRecord& rec, const data::SceneWindow& scene_km,
                                                     const Region& region,
                                                     const Reduction& r = Reduction::last_layer_mean(),
                                                     EulerianMode mode = EulerianMode::kRows) {
  const std::vector<std::size_t> members = region_members(scene_km, region);
  if (members.empty()) throw InputError("no aircraft inside region " + region.str());

  std::map<std::string, double> out;
  if (mode == EulerianMode::kRows) {
    std::vector<ExplanationFrame> rows;
    for (std::size_t q : members) rows.push_back(lagrangian_scores(rec, q, r));
    for (const auto& [id, w] : rows.front().scores) {
      double sum = 0.0;
      for (const auto& f : rows) sum += f.scores.at(id);
      out[id] = sum / static_cast<double>(rows.size());
    }
    return out;
  }

  const Tensor a = reduced_attention(rec, r);
  double total = 0.0;
  for (std::size_t q = 0; q < rec.ids.size(); ++q) {
    if (!rec.valid[q]) continue;
    double s = 0.0;
    for (std::size_t k : members) s += a(q, k);
    s /= static_cast<double>(members.size());
    out[rec.ids[q]] = s;
    total += s;
  }
  for (auto& [id, w] : out) w /= total;
  return out;
}

}  // namespace atx::explain
