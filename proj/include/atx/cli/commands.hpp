#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "atx/cli/toml.hpp"
#include "atx/data/scenes.hpp"
#include "atx/data/synth.hpp"
#include "atx/data/tracks.hpp"
#include "atx/explain/frames_io.hpp"
#include "atx/explain/render.hpp"
#include "atx/explain/scores.hpp"
#include "atx/model/checkpoint.hpp"
#include "atx/training/train.hpp"

namespace atx::cli {

namespace fs = std::filesystem;

inline constexpr int kExitOk = 0;
inline constexpr int kExitInternal = 1;
inline constexpr int kExitUsage = 2;

enum class FieldType { kUint, kDouble, kBool, kString, kOptionalDouble };

struct Field {
  std::string name;
  FieldType type;
  json default_value;
  std::string help;
};

struct CommandSchema {
  std::string name;
  std::string description;
  std::vector<Field> fields;

  const Field* find(const std::string& key) const {
    for (const auto& f : fields)
      if (f.name == key) return &f;
    return nullptr;
  }
};

namespace detail {

inline std::vector<Field> common_fields() {
  return {{"out", FieldType::kString, "", "output directory"},
          {"seed", FieldType::kUint, 0, "root seed; subsystem seeds derive from it"}};
}

inline std::vector<Field> input_fields() {
  return {{"input", FieldType::kString, "", "tracks CSV, or scenes JSON (.json)"},
          {"ref_lat", FieldType::kOptionalDouble, nullptr, "reference latitude for lat/lon track files"},
          {"ref_lon", FieldType::kOptionalDouble, nullptr, "reference longitude for lat/lon track files"},
          {"dt", FieldType::kDouble, 5.0, "resampling interval, seconds"},
          {"stride", FieldType::kUint, 6, "steps between consecutive windows"},
          {"max_aircraft", FieldType::kUint, 8, "aircraft slots per scene"},
          {"runway_x", FieldType::kDouble, 0.0, "runway x (km); truncation keeps the closest aircraft"},
          {"runway_y", FieldType::kDouble, 0.0, "runway y (km)"}};
}

inline std::vector<Field> concat(std::vector<Field> a, const std::vector<Field>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

}  // namespace detail

inline const std::vector<CommandSchema>& schemas() {
  static const std::vector<CommandSchema> all = [] {
    const data::ScenarioConfig sc;
    const training::TrainConfig tc;
    const model::ModelConfig mc;
    std::vector<CommandSchema> v;
    v.push_back({"synth", "generate synthetic terminal-area arrival tracks",
                 detail::concat(detail::common_fields(),
                                {{"episodes", FieldType::kUint, sc.n_scenes, "independent traffic samples"},
                                 {"min_aircraft", FieldType::kUint, sc.min_aircraft, "aircraft per sample, lower bound"},
                                 {"max_aircraft", FieldType::kUint, sc.max_aircraft, "aircraft per sample, upper bound"},
                                 {"direct_to_prob", FieldType::kDouble, sc.direct_to_prob,
                                  "probability a west-flow aircraft receives a direct-to"},
                                 {"noise_std_km", FieldType::kDouble, sc.noise_std_km, "position noise, km"},
                                 {"min_separation_s", FieldType::kDouble, sc.min_separation_s,
                                  "in-trail time spacing on a shared route, s"},
                                 {"spawn_window_s", FieldType::kDouble, sc.spawn_window_s, "entry-time window, s"},
                                 {"sample_interval_s", FieldType::kDouble, sc.sample_interval_s,
                                  "mean surveillance interval, s"},
                                 {"sample_jitter_s", FieldType::kDouble, sc.sample_jitter_s,
                                  "surveillance timing jitter, s"},
                                 {"speed_min", FieldType::kDouble, sc.speed_min, "entry speed lower bound, km/s"},
                                 {"speed_max", FieldType::kDouble, sc.speed_max, "entry speed upper bound, km/s"},
                                 {"episode_gap_s", FieldType::kDouble, sc.episode_gap_s, "idle time between samples, s"}})});
    v.push_back(
        {"train", "fit the trajectory model",
         detail::concat(detail::concat(detail::common_fields(), detail::input_fields()),
                        {{"past_steps", FieldType::kUint, mc.past_steps, "observed steps per window"},
                         {"future_steps", FieldType::kUint, mc.future_steps, "predicted steps per window"},
                         {"mode", FieldType::kString, model::to_string(tc.mode), "supervised or unsupervised"},
                         {"lr", FieldType::kDouble, tc.lr, "peak learning rate"},
                         {"lr_schedule", FieldType::kString, training::to_string(tc.schedule), "constant or cosine"},
                         {"epochs", FieldType::kUint, tc.epochs, "maximum epochs"},
                         {"batch_size", FieldType::kUint, tc.batch_size, "scenes per optimizer step"},
                         {"val_fraction", FieldType::kDouble, tc.val_fraction, "chronologically last share for validation"},
                         {"patience", FieldType::kUint, tc.patience, "early-stopping patience, epochs"},
                         {"clip_norm", FieldType::kDouble, tc.clip_norm, "global gradient-norm clip"},
                         {"d_model", FieldType::kUint, mc.d_model, "token width"},
                         {"n_heads", FieldType::kUint, mc.n_heads, "attention heads"},
                         {"n_variate_layers", FieldType::kUint, mc.n_variate_layers, "masked variate attention layers"},
                         {"n_aircraft_layers", FieldType::kUint, mc.n_aircraft_layers, "aircraft attention layers"},
                         {"mlp_hidden", FieldType::kUint, mc.mlp_hidden, "hidden width of feed-forward and head"},
                         {"anchor_last_position", FieldType::kBool, mc.anchor_last_position,
                          "predict offsets from the last observed position"}})});
    v.push_back({"eval", "compare a checkpoint with the constant-velocity baseline",
                 detail::concat(detail::concat(detail::common_fields(), detail::input_fields()),
                                {{"checkpoint", FieldType::kString, "", "checkpoint.json from train"}})});
    v.push_back(
        {"explain", "attention-based influence scores per frame",
         detail::concat(detail::concat(detail::common_fields(), detail::input_fields()),
                        {{"checkpoint", FieldType::kString, "", "checkpoint.json from train"},
                         {"query", FieldType::kString, "", "query aircraft id (Lagrangian view)"},
                         {"reduction", FieldType::kString, "last-layer-mean", "mean, last-layer-mean or head:<l>:<h>"},
                         {"region", FieldType::kString, "", "x0,y0,x1,y1[,z0,z1] km; switches to the Eulerian view"},
                         {"region_mode", FieldType::kString, "rows", "rows or columns"},
                         {"render", FieldType::kBool, false, "write frame_<t0>.svg per frame"},
                         {"global_scale", FieldType::kBool, false, "one color scale across all frames"},
                         {"low_color", FieldType::kString, "#2c4fa3", "color of the lowest score"},
                         {"high_color", FieldType::kString, "#ffd83d", "color of the highest score"}})});
    return v;
  }();
  return all;
}

inline const CommandSchema& schema(const std::string& name) {
  for (const auto& s : schemas())
    if (s.name == name) return s;
  throw InputError("unknown subcommand '" + name + "'");
}

/// Parses a flag value given as text.
inline json parse_field_text(const Field& f, const std::string& text) {
  const std::string where = "--" + f.name + ": ";
  switch (f.type) {
    case FieldType::kString:
      return text;
    case FieldType::kBool:
      if (text == "true" || text == "1") return true;
      if (text == "false" || text == "0") return false;
      throw InputError(where + "expected true or false, got '" + text + "'");
    case FieldType::kUint: {
      std::uint64_t x = 0;
      auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), x);
      if (ec != std::errc() || p != text.data() + text.size() || text.empty()) {
        throw InputError(where + "expected a non-negative integer, got '" + text + "'");
      }
      return x;
    }
    case FieldType::kDouble:
    case FieldType::kOptionalDouble: {
      char* end = nullptr;
      const double d = std::strtod(text.c_str(), &end);
      if (text.empty() || end != text.c_str() + text.size() || !std::isfinite(d)) {
        throw InputError(where + "expected a finite number, got '" + text + "'");
      }
      return d;
    }
  }
  return nullptr;
}

/// Type-checks a value read from a config file.
inline json check_field(const Field& f, const json& v, const std::string& origin) {
  const std::string where = origin + ": '" + f.name + "' ";
  switch (f.type) {
    case FieldType::kString:
      if (!v.is_string()) throw InputError(where + "must be a string");
      return v;
    case FieldType::kBool:
      if (!v.is_boolean()) throw InputError(where + "must be true or false");
      return v;
    case FieldType::kUint:
      if (!v.is_number_unsigned()) throw InputError(where + "must be a non-negative integer");
      return v;
    case FieldType::kOptionalDouble:
      if (v.is_null()) return v;
      [[fallthrough]];
    case FieldType::kDouble:
      if (!v.is_number() || !std::isfinite(v.get<double>())) throw InputError(where + "must be a finite number");
      return v.get<double>();
  }
  return v;
}

/// Defaults, then the config file (TOML table named after the subcommand,
/// or the "config" object of a run.json), then flag overrides.
inline json resolve_config(const CommandSchema& s, const std::optional<std::string>& config_path,
                           const std::map<std::string, std::string>& overrides) {
  json cfg = json::object();
  for (const auto& f : s.fields) cfg[f.name] = f.default_value;

  if (config_path) {
    if (!fs::exists(*config_path)) throw InputError("config file not found: " + *config_path);
    json from_file;
    if (fs::path(*config_path).extension() == ".json") {
      std::ifstream in(*config_path);
      json run;
      try {
        in >> run;
      } catch (const json::exception& e) {
        throw InputError("config " + *config_path + " is not valid JSON: " + e.what());
      }
      if (!run.is_object() || !run.contains("command") || !run.contains("config") || !run["config"].is_object()) {
        throw InputError("config " + *config_path + " is not a run.json (expected {command, config})");
      }
      if (run["command"] != s.name) {
        throw InputError("config " + *config_path + " records command '" + run["command"].dump() + "', not '" +
                         s.name + "'");
      }
      from_file = run["config"];
    } else {
      const json doc = FlatToml::parse_file(*config_path);
      from_file = doc[""];
      if (doc.contains(s.name)) {
        for (const auto& [k, v] : doc[s.name].items()) {
          if (from_file.contains(k)) throw InputError(*config_path + ": '" + k + "' set both globally and in [" + s.name + "]");
          from_file[k] = v;
        }
      }
    }
    for (const auto& [k, v] : from_file.items()) {
      const Field* f = s.find(k);
      if (!f) throw InputError(*config_path + ": unknown key '" + k + "' for " + s.name);
      cfg[k] = check_field(*f, v, *config_path);
    }
  }

  for (const auto& [k, text] : overrides) {
    const Field* f = s.find(k);
    if (!f) throw InputError("unknown option --" + k + " for " + s.name);
    cfg[k] = parse_field_text(*f, text);
  }
  return cfg;
}

namespace detail {

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  out << text;
  if (!out) throw InputError("failed writing " + path.string());
}

inline void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

inline fs::path prepare_out_dir(const json& cfg, bool force) {
  const std::string out = cfg.at("out").get<std::string>();
  if (out.empty()) throw InputError("an output directory is required (--out)");
  const fs::path dir(out);
  if (fs::exists(dir)) {
    if (!fs::is_directory(dir)) throw InputError("output path exists and is not a directory: " + out);
    if (!fs::is_empty(dir) && !force) throw InputError("output directory is not empty: " + out + " (use --force)");
  }
  fs::create_directories(dir);
  return dir;
}

inline void write_run_json(const fs::path& dir, const std::string& command, const json& cfg) {
  write_json(dir / "run.json", json{{"command", command}, {"config", cfg}});
}

inline std::string required_path(const json& cfg, const std::string& key) {
  const std::string p = cfg.at(key).get<std::string>();
  if (p.empty()) throw InputError("--" + key + " is required");
  if (!fs::exists(p)) throw InputError(key + " file not found: " + p);
  return p;
}

inline std::optional<data::GeoReference> geo_reference(const json& cfg) {
  const bool has_lat = !cfg.at("ref_lat").is_null(), has_lon = !cfg.at("ref_lon").is_null();
  if (has_lat != has_lon) throw InputError("--ref-lat and --ref-lon must be given together");
  if (!has_lat) return std::nullopt;
  return data::GeoReference{cfg["ref_lat"].get<double>(), cfg["ref_lon"].get<double>()};
}

inline data::WindowSpec window_spec(const json& cfg, std::size_t past, std::size_t future) {
  data::WindowSpec w;
  w.dt = cfg.at("dt").get<double>();
  w.past_steps = past;
  w.future_steps = future;
  w.stride = cfg.at("stride").get<std::size_t>();
  w.max_aircraft = cfg.at("max_aircraft").get<std::size_t>();
  w.runway = {cfg.at("runway_x").get<double>(), cfg.at("runway_y").get<double>()};
  return w;
}

/// Scenes in kilometers from a scenes JSON file or a tracks CSV.
inline std::vector<data::SceneWindow> load_scenes(const json& cfg, std::size_t past, std::size_t future,
                                                  std::ostream& log) {
  const std::string path = required_path(cfg, "input");
  if (fs::path(path).extension() == ".json") {
    auto scenes = data::read_scenes(path);
    for (const auto& s : scenes) {
      if (s.past_steps() != past || s.future_steps() != future) {
        throw InputError("scene file " + path + " has windows of " + std::to_string(s.past_steps()) + "+" +
                         std::to_string(s.future_steps()) + " steps, expected " + std::to_string(past) + "+" +
                         std::to_string(future));
      }
    }
    return scenes;
  }
  const auto ingested = data::ingest_tracks(path, geo_reference(cfg));
  log << "ingested " << ingested.tracks.size() << " tracks from " << path << " (" << ingested.rejected_rows
      << " rows rejected, " << ingested.dropped_tracks << " tracks dropped)\n";
  auto built = data::scenes_from_tracks(ingested.tracks, window_spec(cfg, past, future));
  if (built.truncated) log << built.truncated << " scenes truncated to the closest aircraft\n";
  return std::move(built.scenes);
}

inline json metrics_json(const training::EvalMetrics& m) {
  json j{{"ade_km", m.ade}, {"fde_km", m.fde}, {"aircraft", m.aircraft}};
  if (std::isfinite(m.recon_mse)) j["recon_mse"] = m.recon_mse;
  return j;
}

}  // namespace detail

inline void cmd_synth(const json& cfg, bool force, std::ostream& log) {
  data::ScenarioConfig sc;
  sc.seed = cfg.at("seed").get<std::uint64_t>();
  sc.n_scenes = cfg.at("episodes").get<std::size_t>();
  sc.min_aircraft = cfg.at("min_aircraft").get<std::size_t>();
  sc.max_aircraft = cfg.at("max_aircraft").get<std::size_t>();
  sc.direct_to_prob = cfg.at("direct_to_prob").get<double>();
  sc.noise_std_km = cfg.at("noise_std_km").get<double>();
  sc.min_separation_s = cfg.at("min_separation_s").get<double>();
  sc.spawn_window_s = cfg.at("spawn_window_s").get<double>();
  sc.sample_interval_s = cfg.at("sample_interval_s").get<double>();
  sc.sample_jitter_s = cfg.at("sample_jitter_s").get<double>();
  sc.speed_min = cfg.at("speed_min").get<double>();
  sc.speed_max = cfg.at("speed_max").get<double>();
  sc.episode_gap_s = cfg.at("episode_gap_s").get<double>();
  data::validate(sc);
  const fs::path dir = detail::prepare_out_dir(cfg, force);

  const data::Scenario scenario = data::synth_terminal_scenario(sc);
  std::ostringstream csv;
  data::write_tracks_csv(csv, scenario.tracks);
  detail::write_text(dir / "tracks.csv", csv.str());

  json routes = json::array();
  for (const auto& r : sc.routes) routes.push_back({{"name", r.name}, {"entry", r.entry}, {"doglegs", r.doglegs}});
  json aircraft = json::array();
  for (const auto& a : scenario.aircraft) {
    aircraft.push_back({{"id", a.id},
                        {"episode", a.episode},
                        {"route", sc.routes[a.route].name},
                        {"direct_to", a.direct_to},
                        {"entry_time", a.entry_time},
                        {"cut_time", a.direct_to ? json(a.cut_time) : json(nullptr)},
                        {"merge_time", a.merge_time},
                        {"land_time", a.land_time},
                        {"path_length_km", a.path_length_km}});
  }
  json echo = cfg;
  echo.erase("out");  // the manifest depends only on the scenario
  detail::write_json(dir / "manifest.json", json{{"seed", sc.seed},
                                                 {"config", echo},
                                                 {"routes", routes},
                                                 {"merge_point", data::merge_point(sc)},
                                                 {"runway", sc.runway},
                                                 {"aircraft", aircraft}});
  detail::write_run_json(dir, "synth", cfg);
  log << "wrote " << scenario.tracks.size() << " tracks to " << (dir / "tracks.csv").string() << "\n";
}

inline void cmd_train(const json& cfg, bool force, std::ostream& log) {
  model::ModelConfig mc;
  mc.d_model = cfg.at("d_model").get<std::size_t>();
  mc.n_heads = cfg.at("n_heads").get<std::size_t>();
  mc.n_variate_layers = cfg.at("n_variate_layers").get<std::size_t>();
  mc.n_aircraft_layers = cfg.at("n_aircraft_layers").get<std::size_t>();
  mc.mlp_hidden = cfg.at("mlp_hidden").get<std::size_t>();
  mc.past_steps = cfg.at("past_steps").get<std::size_t>();
  mc.future_steps = cfg.at("future_steps").get<std::size_t>();
  mc.max_aircraft = cfg.at("max_aircraft").get<std::size_t>();
  mc.mode = model::mode_from_string(cfg.at("mode").get<std::string>());
  mc.anchor_last_position = cfg.at("anchor_last_position").get<bool>();
  mc.validate();
  training::TrainConfig tc;
  tc.seed = cfg.at("seed").get<std::uint64_t>();
  tc.mode = mc.mode;
  tc.lr = cfg.at("lr").get<double>();
  tc.schedule = training::lr_schedule_from_string(cfg.at("lr_schedule").get<std::string>());
  tc.epochs = cfg.at("epochs").get<std::size_t>();
  tc.batch_size = cfg.at("batch_size").get<std::size_t>();
  tc.val_fraction = cfg.at("val_fraction").get<double>();
  tc.patience = cfg.at("patience").get<std::size_t>();
  tc.clip_norm = cfg.at("clip_norm").get<double>();
  tc.validate();
  (void)detail::geo_reference(cfg);

  auto scenes = detail::load_scenes(cfg, mc.past_steps, mc.future_steps, log);
  if (scenes.size() < 2) throw InputError("training needs at least 2 scenes, input yields " + std::to_string(scenes.size()));
  const fs::path dir = detail::prepare_out_dir(cfg, force);
  auto [train_km, val_km] = training::split_scenes(scenes, tc.val_fraction);
  log << "training on " << train_km.size() << " scenes, validating on " << val_km.size() << "\n";

  const bool supervised = mc.mode == model::Mode::kSupervised;
  auto result = training::train_on_split(train_km, val_km, mc, tc, [&](const training::EpochMetrics& e) {
    log << "epoch " << e.epoch << " train_loss " << e.train_loss << " val_ade " << e.val_ade << " val_fde "
        << e.val_fde;
    if (!supervised) log << " val_recon_mse " << e.val_recon_mse;
    log << "\n";
  });

  model::save_checkpoint((dir / "checkpoint.json").string(), {result.params, result.stats});
  detail::write_json(dir / "stats.json", data::stats_to_json(result.stats));
  std::string csv = supervised ? "epoch,train_loss,val_ade,val_fde\n" : "epoch,train_loss,val_ade,val_fde,val_recon_mse\n";
  for (const auto& e : result.metrics.epochs) {
    csv += std::to_string(e.epoch) + "," + data::format_double(e.train_loss) + "," + data::format_double(e.val_ade) +
           "," + data::format_double(e.val_fde);
    if (!supervised) csv += "," + data::format_double(e.val_recon_mse);
    csv += "\n";
  }
  detail::write_text(dir / "metrics.csv", csv);
  data::write_scenes((dir / "val_scenes.json").string(), val_km);

  const auto& best = result.metrics.best();
  json summary{{"mode", model::to_string(mc.mode)},
               {"train_scenes", train_km.size()},
               {"val_scenes", val_km.size()},
               {"epochs_run", result.metrics.epochs.size()},
               {"best_epoch", result.metrics.best_epoch},
               {"stopped_early", result.metrics.stopped_early},
               {"best", {{"train_loss", best.train_loss}, {"val_ade_km", best.val_ade}, {"val_fde_km", best.val_fde}}},
               {"baseline_val", detail::metrics_json(training::evaluate_baseline(val_km))}};
  if (!supervised) summary["best"]["val_recon_mse"] = best.val_recon_mse;
  detail::write_json(dir / "summary.json", summary);
  detail::write_run_json(dir, "train", cfg);
  log << "best epoch " << result.metrics.best_epoch << ": val_ade " << best.val_ade << " km; wrote "
      << (dir / "checkpoint.json").string() << "\n";
}

inline void cmd_eval(const json& cfg, bool force, std::ostream& log) {
  const model::Checkpoint ck = model::load_checkpoint(detail::required_path(cfg, "checkpoint"));
  const auto& mc = ck.params.config;
  (void)detail::geo_reference(cfg);
  const auto scenes = detail::load_scenes(cfg, mc.past_steps, mc.future_steps, log);
  if (scenes.empty()) throw InputError("evaluation set is empty: no scenes in " + cfg.at("input").get<std::string>());
  const fs::path dir = detail::prepare_out_dir(cfg, force);

  std::vector<data::SceneWindow> normalized;
  for (const auto& s : scenes) normalized.push_back(data::normalize(s, ck.stats));
  const auto m = training::evaluate(ck.params, ck.stats, normalized);
  const auto b = training::evaluate_baseline(scenes);
  const json report{{"mode", model::to_string(mc.mode)},
                    {"scenes", scenes.size()},
                    {"model", detail::metrics_json(m)},
                    {"baseline", detail::metrics_json(b)},
                    {"model_over_baseline_ade", b.ade > 0.0 ? json(m.ade / b.ade) : json(nullptr)}};
  detail::write_json(dir / "eval.json", report);
  detail::write_run_json(dir, "eval", cfg);
  log << report.dump(2) << "\n";
}

inline void cmd_explain(const json& cfg, bool force, std::ostream& log) {
  const model::Checkpoint ck = model::load_checkpoint(detail::required_path(cfg, "checkpoint"));
  const auto& mc = ck.params.config;
  (void)detail::geo_reference(cfg);
  const auto reduction = explain::Reduction::parse(cfg.at("reduction").get<std::string>());
  const std::string region_text = cfg.at("region").get<std::string>();
  const std::string query = cfg.at("query").get<std::string>();
  const std::string region_mode = cfg.at("region_mode").get<std::string>();
  if (region_mode != "rows" && region_mode != "columns") {
    throw InputError("--region-mode must be rows or columns, got '" + region_mode + "'");
  }
  explain::RenderStyle style;
  style.low_color = cfg.at("low_color").get<std::string>();
  style.high_color = cfg.at("high_color").get<std::string>();
  (void)explain::Rgb::parse(style.low_color);
  (void)explain::Rgb::parse(style.high_color);
  const std::optional<explain::Region> region =
      region_text.empty() ? std::nullopt : std::optional(explain::Region::parse(region_text));

  auto scenes = detail::load_scenes(cfg, mc.past_steps, mc.future_steps, log);
  if (scenes.empty()) throw InputError("no scenes in " + cfg.at("input").get<std::string>());
  std::stable_sort(scenes.begin(), scenes.end(), [](const auto& a, const auto& b) { return a.t0 < b.t0; });
  std::vector<data::SceneWindow> normalized;
  for (const auto& s : scenes) normalized.push_back(data::normalize(s, ck.stats));

  std::vector<explain::ExplanationFrame> frames;
  json doc;
  if (!region) {
    std::set<std::string> ids;
    for (const auto& s : scenes)
      for (std::size_t i = 0; i < s.slots(); ++i)
        if (s.valid[i]) ids.insert(s.ids[i]);
    if (query.empty() || !ids.count(query)) {
      std::string list;
      for (const auto& id : ids) list += (list.empty() ? "" : ", ") + id;
      throw InputError((query.empty() ? std::string("--query is required") : "unknown query id '" + query + "'") +
                       "; available ids: " + list);
    }
    const auto result = explain::attention_timeseries(normalized, ck.params, query, reduction);
    if (!result.notices.empty()) log << "query " << query << " absent from " << result.notices.size() << " scenes; frames skipped\n";
    frames = result.series.frames;
    doc = explain::series_to_json(result.series);
  } else {
    const auto mode = region_mode == "rows" ? explain::EulerianMode::kRows : explain::EulerianMode::kColumns;
    json out_frames = json::array();
    for (std::size_t s = 0; s < scenes.size(); ++s) {
      const auto members = explain::region_members(scenes[s], *region);
      if (members.empty()) continue;
      const auto out = model::forward(normalized[s], ck.params);
      explain::ExplanationFrame f;
      f.t0 = scenes[s].t0;
      f.scores = explain::eulerian_scores(out.attention, scenes[s], *region, reduction, mode);
      json member_ids = json::array();
      for (std::size_t i : members) member_ids.push_back(scenes[s].ids[i]);
      out_frames.push_back({{"t0", f.t0}, {"members", member_ids}, {"scores", f.scores}});
      frames.push_back(std::move(f));
    }
    if (frames.empty()) throw InputError("no aircraft inside region " + region->str() + " in any scene");
    doc = json{{"region", region_text}, {"region_mode", region_mode}, {"frames", out_frames}};
  }
  const fs::path dir = detail::prepare_out_dir(cfg, force);
  detail::write_json(dir / "explanation.json", doc);

  if (cfg.at("render").get<bool>()) {
    if (cfg.at("global_scale").get<bool>()) {
      double lo = std::numeric_limits<double>::infinity(), hi = -lo;
      for (const auto& f : frames)
        for (const auto& [id, w] : f.scores) lo = std::min(lo, w), hi = std::max(hi, w);
      style.global_scale = std::make_pair(lo, hi);
    }
    std::size_t s = 0;
    for (const auto& f : frames) {
      while (scenes[s].t0 != f.t0) ++s;
      detail::write_text(dir / ("frame_" + data::format_double(f.t0) + ".svg"), explain::render_scene(scenes[s], f, style));
    }
    log << "rendered " << frames.size() << " frames\n";
  }
  detail::write_run_json(dir, "explain", cfg);
  log << "wrote " << frames.size() << " frames to " << (dir / "explanation.json").string() << "\n";
}

/// Runs a resolved subcommand and maps failures to exit codes: input and
/// usage problems give 2, anything else 1.
inline int run_command(const std::string& name, const json& cfg, bool force, std::ostream& log, std::ostream& err) {
  try {
    if (name == "synth") cmd_synth(cfg, force, log);
    else if (name == "train") cmd_train(cfg, force, log);
    else if (name == "eval") cmd_eval(cfg, force, log);
    else if (name == "explain") cmd_explain(cfg, force, log);
    else throw InputError("unknown subcommand '" + name + "'");
    return kExitOk;
  } catch (const InputError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << "\n";
    return kExitInternal;
  }
}

}  // namespace atx::cli
