#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "atx/data/tracks.hpp"
#include "atx/data/types.hpp"

namespace atx::data {

/// Windowing parameters. Defaults: 5 s steps, 2 min past, 1 min future.
struct WindowSpec {
  double dt = 5.0;
  std::size_t past_steps = 24;
  std::size_t future_steps = 12;
  std::size_t stride = 6;
  std::size_t max_aircraft = 8;
  std::array<double, 2> runway{0.0, 0.0};  // truncation keeps aircraft closest to this point
};

struct SceneBuildResult {
  std::vector<SceneWindow> scenes;
  std::size_t truncated = 0;  // scenes that had more than max_aircraft candidates
};

namespace detail {

struct GridTrack {
  const AircraftTrack* track;
  long long k_first;
  long long k_last;
};

inline GridTrack to_grid(const AircraftTrack& tr, double dt) {
  const auto k_first = std::llround(tr.start() / dt);
  for (std::size_t j = 0; j < tr.points.size(); ++j) {
    const double expect = static_cast<double>(k_first + static_cast<long long>(j)) * dt;
    if (std::abs(tr.points[j].t - expect) > 1e-6 * std::max(1.0, std::abs(expect))) {
      throw InputError("build_scenes: track " + tr.id + " is not resampled on the dt grid");
    }
  }
  return {&tr, k_first, k_first + static_cast<long long>(tr.points.size()) - 1};
}

}  // namespace detail

/// Cuts resampled tracks into scene windows.
///
/// For every grid time t0 (advancing by `stride` steps from the earliest
/// feasible one) an aircraft joins the scene only if its track covers the
/// whole span [t0 - (T-1)dt, t0 + H dt]. Scenes with fewer than two such
/// aircraft are dropped.
inline SceneBuildResult build_scenes(const std::vector<AircraftTrack>& tracks, const WindowSpec& spec) {
  if (!(spec.dt > 0.0) || spec.past_steps < 2 || spec.future_steps < 1 || spec.stride < 1 ||
      spec.max_aircraft < 2) {
    throw InputError("build_scenes: invalid window spec");
  }
  SceneBuildResult result;
  if (tracks.empty()) return result;

  std::vector<detail::GridTrack> grid;
  grid.reserve(tracks.size());
  for (const auto& tr : tracks) grid.push_back(detail::to_grid(tr, spec.dt));

  const auto T = static_cast<long long>(spec.past_steps);
  const auto H = static_cast<long long>(spec.future_steps);
  long long k_min = grid.front().k_first, k_max = grid.front().k_last;
  for (const auto& g : grid) {
    k_min = std::min(k_min, g.k_first);
    k_max = std::max(k_max, g.k_last);
  }

  for (long long k = k_min + T - 1; k + H <= k_max; k += static_cast<long long>(spec.stride)) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < grid.size(); ++i)
      if (grid[i].k_first <= k - (T - 1) && k + H <= grid[i].k_last) members.push_back(i);
    if (members.size() < 2) continue;

    if (members.size() > spec.max_aircraft) {
      ++result.truncated;
      std::vector<std::pair<double, std::size_t>> by_dist;
      for (std::size_t m : members) {
        const auto& p = grid[m].track->points[static_cast<std::size_t>(k - grid[m].k_first)];
        by_dist.emplace_back(std::hypot(p.x - spec.runway[0], p.y - spec.runway[1]), m);
      }
      std::stable_sort(by_dist.begin(), by_dist.end(),
                       [](const auto& a, const auto& b) { return a.first < b.first; });
      by_dist.resize(spec.max_aircraft);
      members.clear();
      for (const auto& [d, m] : by_dist) members.push_back(m);
      std::sort(members.begin(), members.end());
    }

    const std::size_t n = members.size();
    SceneWindow s;
    s.t0 = static_cast<double>(k) * spec.dt;
    s.dt = spec.dt;
    s.past = Tensor({n, spec.past_steps, kAxes});
    s.future = Tensor({n, spec.future_steps, kAxes});
    s.valid = Mask({n}, true);
    for (std::size_t slot = 0; slot < n; ++slot) {
      const auto& g = grid[members[slot]];
      s.ids.push_back(g.track->id);
      for (long long step = 0; step < T; ++step) {
        const auto& p = g.track->points[static_cast<std::size_t>(k - (T - 1) + step - g.k_first)];
        const auto st = static_cast<std::size_t>(step);
        s.past(slot, st, 0) = p.x;
        s.past(slot, st, 1) = p.y;
        s.past(slot, st, 2) = p.z;
      }
      for (long long step = 0; step < H; ++step) {
        const auto& p = g.track->points[static_cast<std::size_t>(k + 1 + step - g.k_first)];
        const auto st = static_cast<std::size_t>(step);
        s.future(slot, st, 0) = p.x;
        s.future(slot, st, 1) = p.y;
        s.future(slot, st, 2) = p.z;
      }
    }
    result.scenes.push_back(std::move(s));
  }
  return result;
}

/// Resamples every track (dropping ones too short for a single step) and
/// builds scenes.
inline SceneBuildResult scenes_from_tracks(const std::vector<AircraftTrack>& tracks, const WindowSpec& spec) {
  std::vector<AircraftTrack> resampled;
  resampled.reserve(tracks.size());
  for (const auto& tr : tracks) {
    if (tr.end() - tr.start() < spec.dt) continue;
    try {
      resampled.push_back(resample(tr, spec.dt));
    } catch (const InputError&) {
      // fewer than two grid points inside the span
    }
  }
  return build_scenes(resampled, spec);
}

/// Per-axis mean and population standard deviation over every valid past
/// and future position.
inline DatasetStats compute_stats(const std::vector<SceneWindow>& scenes) {
  std::array<double, kAxes> sum{}, sq{};
  double count = 0.0;
  auto accumulate = [&](const Tensor& t, std::size_t i) {
    for (std::size_t k = 0; k < t.dim(1); ++k) {
      for (std::size_t a = 0; a < kAxes; ++a) sum[a] += t(i, k, a);
    }
  };
  for (const auto& s : scenes)
    for (std::size_t i = 0; i < s.slots(); ++i)
      if (s.valid[i]) {
        accumulate(s.past, i);
        accumulate(s.future, i);
        count += static_cast<double>(s.past_steps() + s.future_steps());
      }
  if (count == 0.0) throw InputError("compute_stats: no valid positions");
  DatasetStats st;
  for (std::size_t a = 0; a < kAxes; ++a) st.mean[a] = sum[a] / count;
  for (const auto& s : scenes)
    for (std::size_t i = 0; i < s.slots(); ++i) {
      if (!s.valid[i]) continue;
      for (const Tensor* t : {&s.past, &s.future})
        for (std::size_t k = 0; k < t->dim(1); ++k)
          for (std::size_t a = 0; a < kAxes; ++a) {
            const double c = (*t)(i, k, a) - st.mean[a];
            sq[a] += c * c;
          }
    }
  for (std::size_t a = 0; a < kAxes; ++a) {
    st.std[a] = std::sqrt(sq[a] / count);
    if (!(st.std[a] > 0.0)) {
      throw InputError("compute_stats: axis " + std::to_string(a) + " has zero variance");
    }
  }
  return st;
}

namespace detail {

template <class F>
void map_valid(SceneWindow& s, F&& f) {
  for (Tensor* t : {&s.past, &s.future})
    for (std::size_t i = 0; i < s.slots(); ++i) {
      if (!s.valid[i]) continue;
      for (std::size_t k = 0; k < t->dim(1); ++k)
        for (std::size_t a = 0; a < kAxes; ++a) (*t)(i, k, a) = f((*t)(i, k, a), a);
    }
}

}  // namespace detail

inline SceneWindow normalize(SceneWindow s, const DatasetStats& st) {
  detail::map_valid(s, [&](double v, std::size_t a) { return (v - st.mean[a]) / st.std[a]; });
  return s;
}

inline SceneWindow denormalize(SceneWindow s, const DatasetStats& st) {
  detail::map_valid(s, [&](double v, std::size_t a) { return v * st.std[a] + st.mean[a]; });
  return s;
}

/// Maps an [N x K x 3] tensor of normalized positions back to kilometers,
/// leaving rows of invalid slots at zero.
inline Tensor denormalize_positions(Tensor t, const Mask& valid, const DatasetStats& st) {
  for (std::size_t i = 0; i < t.dim(0); ++i) {
    if (!valid[i]) continue;
    for (std::size_t k = 0; k < t.dim(1); ++k)
      for (std::size_t a = 0; a < kAxes; ++a) t(i, k, a) = t(i, k, a) * st.std[a] + st.mean[a];
  }
  return t;
}

// --- JSON ------------------------------------------------------------------

using json = nlohmann::json;

namespace detail {

inline json positions_to_json(const Tensor& t) {
  json out = json::array();
  for (std::size_t i = 0; i < t.dim(0); ++i) {
    json rows = json::array();
    for (std::size_t k = 0; k < t.dim(1); ++k) rows.push_back({t(i, k, 0), t(i, k, 1), t(i, k, 2)});
    out.push_back(std::move(rows));
  }
  return out;
}

inline Tensor positions_from_json(const json& j, std::size_t n, const char* field) {
  if (!j.is_array() || j.size() != n) throw FormatError(std::string("scene field '") + field + "' must list every aircraft");
  const std::size_t steps = n ? j[0].size() : 0;
  Tensor t({n, steps, kAxes});
  for (std::size_t i = 0; i < n; ++i) {
    if (j[i].size() != steps) throw FormatError(std::string("scene field '") + field + "' is ragged");
    for (std::size_t k = 0; k < steps; ++k) {
      if (j[i][k].size() != kAxes) throw FormatError(std::string("scene field '") + field + "' needs 3 coordinates");
      for (std::size_t a = 0; a < kAxes; ++a) t(i, k, a) = j[i][k][a].get<double>();
    }
  }
  return t;
}

}  // namespace detail

inline json scene_to_json(const SceneWindow& s) {
  json valid = json::array();
  for (std::size_t i = 0; i < s.slots(); ++i) valid.push_back(s.valid[i]);
  return json{{"ids", s.ids},
              {"t0", s.t0},
              {"dt", s.dt},
              {"valid", std::move(valid)},
              {"past", detail::positions_to_json(s.past)},
              {"future", detail::positions_to_json(s.future)}};
}

inline SceneWindow scene_from_json(const json& j) {
  try {
    SceneWindow s;
    s.ids = j.at("ids").get<std::vector<std::string>>();
    s.t0 = j.at("t0").get<double>();
    s.dt = j.at("dt").get<double>();
    const std::size_t n = s.ids.size();
    s.past = detail::positions_from_json(j.at("past"), n, "past");
    s.future = detail::positions_from_json(j.at("future"), n, "future");
    s.valid = Mask({n}, true);
    if (j.contains("valid")) {
      const auto& v = j.at("valid");
      if (!v.is_array() || v.size() != n) throw FormatError("scene field 'valid' must list every aircraft");
      for (std::size_t i = 0; i < n; ++i) s.valid.set(i, v[i].get<bool>());
    }
    if (!padding_is_zero(s)) throw FormatError("scene padding slots must hold zeros");
    return s;
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed scene JSON: ") + e.what());
  }
}

inline void write_scenes(const std::string& path, const std::vector<SceneWindow>& scenes) {
  json arr = json::array();
  for (const auto& s : scenes) arr.push_back(scene_to_json(s));
  std::ofstream out(path);
  if (!out) throw InputError("cannot write scene file: " + path);
  out << arr.dump() << '\n';
}

inline std::vector<SceneWindow> read_scenes(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open scene file: " + path);
  json arr;
  try {
    in >> arr;
  } catch (const json::exception& e) {
    throw FormatError("scene file " + path + " is not valid JSON: " + e.what());
  }
  if (!arr.is_array()) throw FormatError("scene file must hold a JSON array of scenes");
  std::vector<SceneWindow> scenes;
  for (const auto& j : arr) scenes.push_back(scene_from_json(j));
  return scenes;
}

inline json stats_to_json(const DatasetStats& st) { return json{{"mean", st.mean}, {"std", st.std}}; }

inline DatasetStats stats_from_json(const json& j) {
  try {
    DatasetStats st;
    st.mean = j.at("mean").get<std::array<double, kAxes>>();
    st.std = j.at("std").get<std::array<double, kAxes>>();
    for (double v : st.std)
      if (!(v > 0.0)) throw FormatError("stats: std must be positive");
    return st;
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed stats JSON: ") + e.what());
  }
}

}  // namespace atx::data
