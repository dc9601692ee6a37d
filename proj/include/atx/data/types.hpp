#pragma once

#include <array>
#include <string>
#include <vector>

#include "atx/numerics/tensor.hpp"

namespace atx::data {

/// Malformed track/scene files (missing columns, empty input, bad JSON).
class FormatError : public InputError {
 public:
  using InputError::InputError;
};

inline constexpr std::size_t kAxes = 3;

/// One surveillance sample in the local East-North-Up plane, kilometers.
struct TrackPoint {
  double t = 0.0;  // seconds since epoch
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  friend bool operator==(const TrackPoint&, const TrackPoint&) = default;
};

struct AircraftTrack {
  std::string id;
  std::vector<TrackPoint> points;  // strictly increasing t

  double start() const { return points.front().t; }
  double end() const { return points.back().t; }

  friend bool operator==(const AircraftTrack&, const AircraftTrack&) = default;
};

/// Model input/target pair for one traffic situation.
///
/// past is [N x T x 3] ending at t0, future is [N x H x 3] covering
/// t0 + dt .. t0 + H*dt. Slots with valid[i] == false are padding and hold
/// zeros in both tensors.
struct SceneWindow {
  std::vector<std::string> ids;
  Tensor past;
  Tensor future;
  Mask valid;
  double t0 = 0.0;
  double dt = 0.0;

  std::size_t slots() const { return ids.size(); }
  std::size_t past_steps() const { return past.dim(1); }
  std::size_t future_steps() const { return future.dim(1); }
  std::size_t valid_count() const { return valid.count(); }

  /// Slot index for an aircraft id, or slots() when absent or padded.
  std::size_t index_of(const std::string& id) const {
    for (std::size_t i = 0; i < ids.size(); ++i)
      if (valid[i] && ids[i] == id) return i;
    return ids.size();
  }
};

/// Per-axis position statistics used for normalization.
struct DatasetStats {
  std::array<double, kAxes> mean{};
  std::array<double, kAxes> std{1.0, 1.0, 1.0};

  friend bool operator==(const DatasetStats&, const DatasetStats&) = default;
};

/// Checks the padding invariant: invalid slots are all zeros.
inline bool padding_is_zero(const SceneWindow& s) {
  for (std::size_t i = 0; i < s.slots(); ++i) {
    if (s.valid[i]) continue;
    for (std::size_t k = 0; k < s.past_steps(); ++k)
      for (std::size_t a = 0; a < kAxes; ++a)
        if (s.past(i, k, a) != 0.0) return false;
    for (std::size_t k = 0; k < s.future_steps(); ++k)
      for (std::size_t a = 0; a < kAxes; ++a)
        if (s.future(i, k, a) != 0.0) return false;
  }
  return true;
}

}  // namespace atx::data
