#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "atx/data/types.hpp"
#include "atx/model/params.hpp"
#include "atx/rng.hpp"

namespace atx::test {

inline Tensor random_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

/// Scene with `slots` slots of which the first `valid` are real aircraft,
/// positions drawn uniformly from [-2, 2] (roughly normalized units).
inline data::SceneWindow random_scene(Rng& rng, std::size_t slots, std::size_t valid, std::size_t T, std::size_t H,
                                      double scale = 2.0) {
  data::SceneWindow s;
  s.past = Tensor({slots, T, 3});
  s.future = Tensor({slots, H, 3});
  s.valid = Mask({slots}, false);
  s.dt = 5.0;
  s.t0 = 1000.0;
  for (std::size_t i = 0; i < slots; ++i) {
    s.ids.push_back("AC" + std::to_string(i));
    if (i >= valid) continue;
    s.valid.set(i, true);
    for (std::size_t k = 0; k < T; ++k)
      for (std::size_t a = 0; a < 3; ++a) s.past(i, k, a) = rng.uniform(-scale, scale);
    for (std::size_t k = 0; k < H; ++k)
      for (std::size_t a = 0; a < 3; ++a) s.future(i, k, a) = rng.uniform(-scale, scale);
  }
  return s;
}

/// Applies a slot permutation: slot r of the result is slot perm[r] of `s`.
inline data::SceneWindow permute_scene(const data::SceneWindow& s, const std::vector<std::size_t>& perm) {
  data::SceneWindow p = s;
  const std::size_t T = s.past_steps(), H = s.future_steps();
  for (std::size_t r = 0; r < perm.size(); ++r) {
    p.ids[r] = s.ids[perm[r]];
    p.valid.set(r, s.valid[perm[r]]);
    for (std::size_t k = 0; k < T; ++k)
      for (std::size_t a = 0; a < 3; ++a) p.past(r, k, a) = s.past(perm[r], k, a);
    for (std::size_t k = 0; k < H; ++k)
      for (std::size_t a = 0; a < 3; ++a) p.future(r, k, a) = s.future(perm[r], k, a);
  }
  return p;
}

inline model::ModelConfig tiny_config(std::size_t T = 8, std::size_t H = 4) {
  model::ModelConfig c;
  c.d_model = 8;
  c.n_heads = 1;
  c.n_variate_layers = 1;
  c.n_aircraft_layers = 1;
  c.mlp_hidden = 8;
  c.past_steps = T;
  c.future_steps = H;
  c.max_aircraft = 8;
  return c;
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

inline void write_file(const std::filesystem::path& p, const std::string& text) {
  std::filesystem::create_directories(p.parent_path());
  std::ofstream(p, std::ios::binary) << text;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("atx_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

/// Set ATX_UPDATE_GOLDEN=1 to rewrite golden files instead of comparing.
inline bool update_golden() {
  const char* v = std::getenv("ATX_UPDATE_GOLDEN");
  return v != nullptr && std::string(v) == "1";
}

}  // namespace atx::test
