#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "atx/data/types.hpp"

namespace atx::data {

/// Reference point for the equirectangular lat/lon -> local plane mapping.
struct GeoReference {
  double lat_deg = 0.0;
  double lon_deg = 0.0;
};

inline constexpr double kEarthRadiusKm = 6371.0088;
inline constexpr double kFeetToKm = 0.0003048;

/// Equirectangular projection about `ref`:
///   x = R * dlon * cos(lat_ref),  y = R * dlat   (radians, R = mean Earth radius)
inline std::array<double, 2> project_latlon(double lat_deg, double lon_deg, const GeoReference& ref) {
  constexpr double kDeg = std::numbers::pi / 180.0;
  const double x = kEarthRadiusKm * (lon_deg - ref.lon_deg) * kDeg * std::cos(ref.lat_deg * kDeg);
  const double y = kEarthRadiusKm * (lat_deg - ref.lat_deg) * kDeg;
  return {x, y};
}

struct IngestResult {
  std::vector<AircraftTrack> tracks;  // order of first appearance
  std::size_t rejected_rows = 0;      // unparsable, non-finite, or out of range
  std::size_t dropped_tracks = 0;     // fewer than 2 usable points
};

namespace detail {

inline std::vector<std::string_view> split_csv(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    std::string_view field = line.substr(start, comma == std::string_view::npos ? line.npos : comma - start);
    while (!field.empty() && (field.front() == ' ' || field.front() == '\t')) field.remove_prefix(1);
    while (!field.empty() && (field.back() == ' ' || field.back() == '\t' || field.back() == '\r'))
      field.remove_suffix(1);
    out.push_back(field);
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

inline std::optional<double> parse_double(std::string_view s) {
  if (s.empty()) return std::nullopt;
  // strtod rather than from_chars so "nan"/"inf" parse and get rejected as non-finite.
  std::string tmp(s);
  char* end = nullptr;
  const double v = std::strtod(tmp.c_str(), &end);
  if (end != tmp.c_str() + tmp.size()) return std::nullopt;
  return v;
}

inline bool in_bounds(const TrackPoint& p) {
  return std::isfinite(p.t) && std::isfinite(p.x) && std::isfinite(p.y) && std::isfinite(p.z) &&
         std::abs(p.x) <= 500.0 && std::abs(p.y) <= 500.0 && p.z >= 0.0 && p.z <= 20.0;
}

}  // namespace detail

/// Reads the track CSV. Accepted headers (any column order, extra columns
/// ignored): `id,t,x_km,y_km,z_km`, or `id,t,lat_deg,lon_deg,alt_ft` which
/// requires `ref`.
inline IngestResult ingest_tracks(std::istream& in, const std::optional<GeoReference>& ref = std::nullopt) {
  std::string line;
  if (!std::getline(in, line) || line.find_first_not_of(" \t\r") == std::string::npos) {
    throw FormatError("track file is empty");
  }
  if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF) line.erase(0, 3);  // UTF-8 BOM

  std::map<std::string, std::size_t, std::less<>> columns;
  const auto header = detail::split_csv(line);
  for (std::size_t i = 0; i < header.size(); ++i) columns.emplace(std::string(header[i]), i);
  auto column = [&](std::string_view name) -> std::optional<std::size_t> {
    auto it = columns.find(name);
    if (it == columns.end()) return std::nullopt;
    return it->second;
  };

  const bool has_id = column("id").has_value() && column("t").has_value();
  const bool local = column("x_km") && column("y_km") && column("z_km");
  const bool geo = column("lat_deg") && column("lon_deg") && column("alt_ft");
  if (!has_id || (!local && !geo)) {
    throw FormatError("track file header must contain id,t,x_km,y_km,z_km or id,t,lat_deg,lon_deg,alt_ft");
  }
  if (!local && !ref) {
    throw FormatError("track file uses lat/lon columns; a reference point (--ref-lat/--ref-lon) is required");
  }

  const std::size_t c_id = *column("id"), c_t = *column("t");
  const std::size_t c_a = local ? *column("x_km") : *column("lat_deg");
  const std::size_t c_b = local ? *column("y_km") : *column("lon_deg");
  const std::size_t c_c = local ? *column("z_km") : *column("alt_ft");
  const std::size_t needed = std::max({c_id, c_t, c_a, c_b, c_c}) + 1;

  IngestResult result;
  std::vector<std::string> order;
  std::map<std::string, std::vector<TrackPoint>> by_id;
  std::size_t data_rows = 0;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    ++data_rows;
    const auto f = detail::split_csv(line);
    if (f.size() < needed || f[c_id].empty()) {
      ++result.rejected_rows;
      continue;
    }
    const auto t = detail::parse_double(f[c_t]);
    const auto a = detail::parse_double(f[c_a]);
    const auto b = detail::parse_double(f[c_b]);
    const auto c = detail::parse_double(f[c_c]);
    if (!t || !a || !b || !c) {
      ++result.rejected_rows;
      continue;
    }
    TrackPoint p{*t, *a, *b, *c};
    if (!local) {
      if (!std::isfinite(*a) || !std::isfinite(*b)) {
        ++result.rejected_rows;
        continue;
      }
      const auto xy = project_latlon(*a, *b, *ref);
      p.x = xy[0];
      p.y = xy[1];
      p.z = *c * kFeetToKm;
    }
    if (!detail::in_bounds(p)) {
      ++result.rejected_rows;
      continue;
    }
    std::string id(f[c_id]);
    auto [it, inserted] = by_id.try_emplace(id);
    if (inserted) order.push_back(id);
    it->second.push_back(p);
  }
  if (data_rows == 0) throw FormatError("track file has a header but no data rows");

  for (const auto& id : order) {
    auto& pts = by_id[id];
    std::stable_sort(pts.begin(), pts.end(), [](const TrackPoint& l, const TrackPoint& r) { return l.t < r.t; });
    std::vector<TrackPoint> unique;
    unique.reserve(pts.size());
    for (const auto& p : pts) {
      if (!unique.empty() && p.t <= unique.back().t) {
        ++result.rejected_rows;  // duplicate timestamp
        continue;
      }
      unique.push_back(p);
    }
    if (unique.size() < 2) {
      ++result.dropped_tracks;
      continue;
    }
    result.tracks.push_back(AircraftTrack{id, std::move(unique)});
  }
  return result;
}

inline IngestResult ingest_tracks(const std::string& path, const std::optional<GeoReference>& ref = std::nullopt) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open track file: " + path);
  return ingest_tracks(in, ref);
}

/// Shortest decimal text that parses back to exactly `v`.
inline std::string format_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline void write_tracks_csv(std::ostream& out, const std::vector<AircraftTrack>& tracks) {
  out << "id,t,x_km,y_km,z_km\n";
  for (const auto& tr : tracks)
    for (const auto& p : tr.points)
      out << tr.id << ',' << format_double(p.t) << ',' << format_double(p.x) << ','
          << format_double(p.y) << ',' << format_double(p.z) << '\n';
}

/// Resamples onto the global grid {origin + k*dt} by piecewise-linear
/// interpolation, restricted to the track's own time span (no extrapolation).
/// Tracks from different aircraft resampled with the same (dt, origin) share
/// timestamps, which is what scene building relies on.
inline AircraftTrack resample(const AircraftTrack& track, double dt, double origin = 0.0) {
  if (!(dt > 0.0)) throw InputError("resample: dt must be positive");
  if (track.points.size() < 2) throw InputError("resample: track " + track.id + " has fewer than 2 points");
  const double t_begin = track.start(), t_end = track.end();
  if (t_end - t_begin < dt) {
    throw InputError("resample: track " + track.id + " spans less than one step");
  }
  constexpr double kSnap = 1e-9;
  const auto k_first = static_cast<long long>(std::ceil((t_begin - origin) / dt - kSnap));
  const auto k_last = static_cast<long long>(std::floor((t_end - origin) / dt + kSnap));
  if (k_last - k_first < 1) {
    throw InputError("resample: track " + track.id + " covers fewer than 2 grid points");
  }

  AircraftTrack out{track.id, {}};
  out.points.reserve(static_cast<std::size_t>(k_last - k_first + 1));
  const auto& pts = track.points;
  std::size_t j = 0;  // first original index with t >= grid time
  for (long long k = k_first; k <= k_last; ++k) {
    double t = origin + static_cast<double>(k) * dt;
    t = std::clamp(t, t_begin, t_end);  // absorb snapping at the ends
    while (j < pts.size() && pts[j].t < t) ++j;
    if (j < pts.size() && pts[j].t == t) {
      out.points.push_back({t, pts[j].x, pts[j].y, pts[j].z});
      continue;
    }
    const TrackPoint& lo = pts[j - 1];
    const TrackPoint& hi = pts[j];
    const double w = (t - lo.t) / (hi.t - lo.t);
    out.points.push_back({t, lo.x + w * (hi.x - lo.x), lo.y + w * (hi.y - lo.y), lo.z + w * (hi.z - lo.z)});
  }
  return out;
}

}  // namespace atx::data
