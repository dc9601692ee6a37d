#pragma once

#include <fstream>
#include <string>

#include <json.hpp>

#include "atx/data/types.hpp"
#include "atx/explain/scores.hpp"

namespace atx::explain {

using json = nlohmann::json;

/// {query_id, frames: [{t0, scores: {id: weight}}]}
inline json series_to_json(const AttentionTimeSeries& series) {
  if (series.frames.empty()) throw InputError("refusing to export an empty attention series");
  json frames = json::array();
  for (const auto& f : series.frames) {
    if (f.scores.empty()) throw InputError("refusing to export a frame with no scores (t0=" + std::to_string(f.t0) + ")");
    frames.push_back({{"t0", f.t0}, {"scores", f.scores}});
  }
  return json{{"query_id", series.query_id}, {"frames", std::move(frames)}};
}

inline AttentionTimeSeries series_from_json(const json& j) {
  try {
    AttentionTimeSeries s;
    s.query_id = j.at("query_id").get<std::string>();
    for (const auto& f : j.at("frames")) {
      ExplanationFrame fr;
      fr.t0 = f.at("t0").get<double>();
      fr.query_id = s.query_id;
      fr.scores = f.at("scores").get<std::map<std::string, double>>();
      s.frames.push_back(std::move(fr));
    }
    return s;
  } catch (const json::exception& e) {
    throw data::FormatError(std::string("malformed explanation JSON: ") + e.what());
  }
}

inline void export_frames(const AttentionTimeSeries& series, const std::string& path) {
  const std::string text = series_to_json(series).dump(2) + "\n";
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write explanation file: " + path);
  out << text;
  if (!out) throw InputError("failed writing explanation file: " + path);
}

inline AttentionTimeSeries read_frames(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open explanation file: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw data::FormatError("explanation file " + path + " is not valid JSON: " + e.what());
  }
  return series_from_json(j);
}

}  // namespace atx::explain
