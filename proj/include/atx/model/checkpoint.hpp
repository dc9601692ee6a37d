#pragma once

#include <fstream>
#include <string>

#include <json.hpp>

#include "atx/data/scenes.hpp"
#include "atx/model/params.hpp"

namespace atx::model {

using json = nlohmann::json;

inline constexpr int kCheckpointVersion = 1;

/// Everything needed to run a trained model on raw-kilometer scenes.
struct Checkpoint {
  ModelParams params;
  data::DatasetStats stats;
};

inline json config_to_json(const ModelConfig& c) {
  return json{{"d_model", c.d_model},
              {"n_heads", c.n_heads},
              {"n_variate_layers", c.n_variate_layers},
              {"n_aircraft_layers", c.n_aircraft_layers},
              {"mlp_hidden", c.mlp_hidden},
              {"past_steps", c.past_steps},
              {"future_steps", c.future_steps},
              {"max_aircraft", c.max_aircraft},
              {"mode", to_string(c.mode)},
              {"ln_eps", c.ln_eps},
              {"anchor_last_position", c.anchor_last_position}};
}

inline ModelConfig config_from_json(const json& j) {
  ModelConfig c;
  c.d_model = j.at("d_model").get<std::size_t>();
  c.n_heads = j.at("n_heads").get<std::size_t>();
  c.n_variate_layers = j.at("n_variate_layers").get<std::size_t>();
  c.n_aircraft_layers = j.at("n_aircraft_layers").get<std::size_t>();
  c.mlp_hidden = j.at("mlp_hidden").get<std::size_t>();
  c.past_steps = j.at("past_steps").get<std::size_t>();
  c.future_steps = j.at("future_steps").get<std::size_t>();
  c.max_aircraft = j.at("max_aircraft").get<std::size_t>();
  c.mode = mode_from_string(j.at("mode").get<std::string>());
  c.ln_eps = j.at("ln_eps").get<double>();
  c.anchor_last_position = j.at("anchor_last_position").get<bool>();
  c.validate();
  return c;
}

inline json checkpoint_to_json(const Checkpoint& ck) {
  json params = json::array();
  for (std::size_t i = 0; i < ck.params.tensors.size(); ++i) {
    const Tensor& t = ck.params.tensors[i];
    params.push_back({{"name", ck.params.names[i]}, {"shape", t.shape()}, {"data", t.storage()}});
  }
  return json{{"format", "atx-checkpoint"},
              {"format_version", kCheckpointVersion},
              {"config", config_to_json(ck.params.config)},
              {"stats", data::stats_to_json(ck.stats)},
              {"params", std::move(params)}};
}

inline Checkpoint checkpoint_from_json(const json& j) {
  try {
    if (j.at("format_version").get<int>() != kCheckpointVersion) {
      throw data::FormatError("unsupported checkpoint version " + j.at("format_version").dump());
    }
    Checkpoint ck;
    ck.params.config = config_from_json(j.at("config"));
    ck.stats = data::stats_from_json(j.at("stats"));
    const ParamLayout layout = ParamLayout::for_config(ck.params.config);
    const auto& arr = j.at("params");
    if (arr.size() != layout.specs.size()) throw data::FormatError("checkpoint parameter count does not match config");
    for (std::size_t i = 0; i < arr.size(); ++i) {
      const auto& e = arr[i];
      auto name = e.at("name").get<std::string>();
      auto shape = e.at("shape").get<Shape>();
      if (name != layout.specs[i].name || shape != layout.specs[i].shape) {
        throw data::FormatError("checkpoint tensor '" + name + "' does not match layout entry '" +
                                layout.specs[i].name + "'");
      }
      Tensor t(std::move(shape), e.at("data").get<std::vector<double>>());
      require_finite(t, "checkpoint");
      ck.params.names.push_back(std::move(name));
      ck.params.tensors.push_back(std::move(t));
    }
    return ck;
  } catch (const json::exception& e) {
    throw data::FormatError(std::string("malformed checkpoint: ") + e.what());
  }
}

inline void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write checkpoint: " + path);
  out << checkpoint_to_json(ck).dump() << '\n';
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open checkpoint: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw data::FormatError("checkpoint " + path + " is not valid JSON: " + e.what());
  }
  return checkpoint_from_json(j);
}

}  // namespace atx::model
