#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>
#include <numeric>
#include <string>
#include <vector>

#include "atx/data/types.hpp"
#include "atx/rng.hpp"

namespace atx::data {

/// One arrival route: entry fix (x, y km; z km altitude) followed by the
/// dogleg waypoints flown before the merge point.
struct ArrivalRoute {
  std::string name;  // single letter used in aircraft ids
  std::array<double, 3> entry{};
  std::vector<std::array<double, 2>> doglegs;
};

/// Synthetic terminal-area arrival traffic. Three flows (west, south, east)
/// merge at a point on the extended runway centerline and land. West-flow
/// aircraft may receive a direct-to that cuts the dogleg short.
struct ScenarioConfig {
  std::uint64_t seed = 0;
  /// Independent traffic samples; each one is separated in time from the
  /// next and yields many scene windows.
  std::size_t n_scenes = 12;
  std::size_t min_aircraft = 3;
  std::size_t max_aircraft = 6;
  std::array<ArrivalRoute, 3> routes{{
      {"W", {-45.0, -5.0, 3.0}, {{-52.0, 22.0}, {-32.0, 36.0}}},
      {"S", {-5.0, -55.0, 4.5}, {{-30.0, -30.0}, {-38.0, 5.0}}},
      {"E", {50.0, 30.0, 4.5}, {{28.0, 40.0}, {5.0, 34.0}}},
  }};
  std::array<double, 2> runway{0.0, 0.0};
  double final_heading_deg = 150.0;  // direction of travel on final
  double final_length_km = 18.0;     // merge point distance before the runway
  double runway_alt_km = 0.05;
  double speed_min = 0.11;  // km/s at the entry fix
  double speed_max = 0.14;
  double final_speed = 0.075;
  double decel_distance_km = 80.0;  // speed falls linearly to final_speed over this distance
  double direct_to_prob = 0.3;
  double cut_fraction_min = 0.25;  // where along the pre-merge path a direct-to is issued
  double cut_fraction_max = 0.6;
  double noise_std_km = 0.03;
  double min_separation_s = 90.0;  // in-trail time spacing on a shared route
  double spawn_window_s = 600.0;
  double sample_interval_s = 4.0;
  double sample_jitter_s = 0.5;
  double epoch_base = 1.7e9;
  double episode_gap_s = 600.0;
};

/// Ground truth for one generated aircraft (noise-free timings).
struct SyntheticAircraft {
  std::string id;
  std::size_t episode = 0;
  std::size_t route = 0;  // index into ScenarioConfig::routes; 0 = west
  bool direct_to = false;
  double entry_time = 0.0;
  double cut_time = std::numeric_limits<double>::quiet_NaN();
  double merge_time = 0.0;
  double land_time = 0.0;
  double path_length_km = 0.0;
  double merge_delay = 0.0;  // seconds absorbed before the merge point for sequencing
};

struct Scenario {
  std::vector<AircraftTrack> tracks;
  std::vector<SyntheticAircraft> aircraft;  // aligned with tracks
};

inline constexpr std::size_t kWestRoute = 0;

inline std::array<double, 2> merge_point(const ScenarioConfig& c) {
  const double h = c.final_heading_deg * std::numbers::pi / 180.0;
  return {c.runway[0] - c.final_length_km * std::sin(h), c.runway[1] - c.final_length_km * std::cos(h)};
}

inline void validate(const ScenarioConfig& c) {
  auto prob = [](double p) { return p >= 0.0 && p <= 1.0; };
  if (!prob(c.direct_to_prob) || !prob(c.cut_fraction_min) || !prob(c.cut_fraction_max) ||
      c.cut_fraction_min > c.cut_fraction_max) {
    throw InputError("scenario: probabilities and cut fractions must lie in [0, 1]");
  }
  if (!(c.speed_min > 0.0) || c.speed_max < c.speed_min || !(c.final_speed > 0.0)) {
    throw InputError("scenario: speeds must be positive with speed_min <= speed_max");
  }
  if (c.min_aircraft < 1 || c.max_aircraft < c.min_aircraft) {
    throw InputError("scenario: aircraft count range must satisfy 1 <= min <= max");
  }
  if (!(c.sample_interval_s > 0.0) || c.sample_jitter_s < 0.0 || 2.0 * c.sample_jitter_s >= c.sample_interval_s) {
    throw InputError("scenario: sample interval must exceed twice the jitter");
  }
  if (!(c.decel_distance_km > 0.0) || c.noise_std_km < 0.0 || c.min_separation_s < 0.0) {
    throw InputError("scenario: decel distance must be positive, noise and separation non-negative");
  }
  // Worst case: every aircraft of a sample lands on the same route.
  if (static_cast<double>(c.max_aircraft - 1) * c.min_separation_s > c.spawn_window_s) {
    throw InputError("scenario: infeasible spacing, " + std::to_string(c.max_aircraft) +
                     " aircraft at " + std::to_string(c.min_separation_s) +
                     " s in-trail do not fit a " + std::to_string(c.spawn_window_s) + " s spawn window");
  }
}

namespace detail {

/// Polyline with cumulative arc length.
struct Path {
  std::vector<std::array<double, 2>> pts;
  std::vector<double> cum;

  explicit Path(std::vector<std::array<double, 2>> p) : pts(std::move(p)), cum(pts.size(), 0.0) {
    for (std::size_t i = 1; i < pts.size(); ++i)
      cum[i] = cum[i - 1] + std::hypot(pts[i][0] - pts[i - 1][0], pts[i][1] - pts[i - 1][1]);
  }
  double length() const { return cum.back(); }

  std::array<double, 2> at(double s) const {
    s = std::clamp(s, 0.0, length());
    std::size_t i = 1;
    while (i + 1 < pts.size() && cum[i] < s) ++i;
    const double seg = cum[i] - cum[i - 1];
    const double w = seg > 0.0 ? (s - cum[i - 1]) / seg : 0.0;
    return {pts[i - 1][0] + w * (pts[i][0] - pts[i - 1][0]), pts[i - 1][1] + w * (pts[i][1] - pts[i - 1][1])};
  }

  /// Prefix up to arc length s (inclusive of the point at s).
  std::vector<std::array<double, 2>> prefix(double s) const {
    std::vector<std::array<double, 2>> out{pts.front()};
    for (std::size_t i = 1; i < pts.size() && cum[i] < s; ++i) out.push_back(pts[i]);
    out.push_back(at(s));
    return out;
  }
};

/// Speed decreases linearly with flown distance from v0 to vf over
/// `decel`, then stays at vf.
struct SpeedProfile {
  double v0, vf, decel;

  double rate() const { return (v0 - vf) / decel; }

  /// Time to fly the first s kilometers.
  double time_to(double s) const {
    const double a = rate();
    const double s1 = std::min(s, decel);
    double t = a > 0.0 ? -std::log(1.0 - a * s1 / v0) / a : s1 / v0;
    if (s > decel) t += (s - decel) / vf;
    return t;
  }

  /// Distance flown after time t (inverse of time_to).
  double distance_at(double t) const {
    const double a = rate();
    const double t1 = time_to(decel);
    if (t <= t1) return a > 0.0 ? v0 / a * (1.0 - std::exp(-a * t)) : v0 * t;
    return decel + vf * (t - t1);
  }
};

/// Flown-distance clock of one aircraft: the nominal speed profile plus a
/// delay absorbed smoothly over [zone_s0, zone_s1] of arc length.
struct TimeLaw {
  SpeedProfile speed;
  double entry;  // seconds from the episode start
  double zone_s0, zone_s1;
  double zone_t0, zone_t1;  // nominal times at the zone ends, relative to entry
  double delay;

  double time_at(double s) const {
    double t = speed.time_to(s);
    if (s > zone_s0 && delay > 0.0) {
      const double u = zone_t1 > zone_t0 ? std::clamp((t - zone_t0) / (zone_t1 - zone_t0), 0.0, 1.0) : 1.0;
      t += delay * u * u * (3.0 - 2.0 * u);
    }
    return entry + t;
  }

  /// Arc length flown at time t (same clock as time_at), by bisection.
  double distance_at(double t, double length) const {
    if (t <= time_at(0.0)) return 0.0;
    if (t >= time_at(length)) return length;
    double lo = 0.0, hi = length;
    for (int it = 0; it < 64; ++it) {
      const double mid = 0.5 * (lo + hi);
      (time_at(mid) < t ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
  }
};

}  // namespace detail

/// Generates tracks and ground-truth metadata. Output depends only on the
/// config (including its seed).
inline Scenario synth_terminal_scenario(const ScenarioConfig& c) {
  validate(c);
  const auto merge = merge_point(c);
  Scenario out;
  double episode_start = c.epoch_base;

  for (std::size_t e = 0; e < c.n_scenes; ++e) {
    Rng rng(derive_seed(c.seed, "synth/episode/" + std::to_string(e)));
    const std::size_t count = c.min_aircraft + rng.below(c.max_aircraft - c.min_aircraft + 1);

    struct Plan {
      std::size_t route;
      double v0;
      bool direct;
      double cut_s;  // arc length of the cut on the full route (or full pre-merge length)
      detail::Path path{{{0.0, 0.0}, {0.0, 0.0}}};
      double premerge_len = 0.0;
      double entry = 0.0;
      std::size_t in_route = 0;
    };
    std::vector<Plan> plans;
    for (std::size_t k = 0; k < count; ++k) {
      Plan p;
      p.route = rng.below(c.routes.size());
      p.v0 = rng.uniform(c.speed_min, c.speed_max);
      // Both draws are consumed for every aircraft so that changing the
      // direct-to probability leaves all other draws unchanged.
      const double u_direct = rng.uniform();
      const double cut_frac = rng.uniform(c.cut_fraction_min, c.cut_fraction_max);
      p.direct = p.route == kWestRoute && u_direct < c.direct_to_prob;

      const auto& r = c.routes[p.route];
      std::vector<std::array<double, 2>> full{{r.entry[0], r.entry[1]}};
      for (const auto& w : r.doglegs) full.push_back(w);
      full.push_back(merge);
      const detail::Path premerge(full);
      p.premerge_len = premerge.length();
      p.cut_s = p.direct ? cut_frac * p.premerge_len : p.premerge_len;
      std::vector<std::array<double, 2>> pts = p.direct ? premerge.prefix(p.cut_s) : full;
      if (p.direct) pts.push_back(merge);
      pts.push_back(c.runway);
      p.path = detail::Path(std::move(pts));
      plans.push_back(std::move(p));
    }

    // Entry times: sequential per route with in-trail time spacing enforced
    // at every point of the route shared with each earlier aircraft.
    std::array<std::vector<std::size_t>, 3> by_route;
    for (std::size_t k = 0; k < plans.size(); ++k) by_route[plans[k].route].push_back(k);
    for (const auto& members : by_route) {
      if (members.empty()) continue;
      const double slack =
          std::max(0.0, (c.spawn_window_s - static_cast<double>(members.size() - 1) * c.min_separation_s) /
                            static_cast<double>(members.size()));
      double prev = -c.min_separation_s;
      for (std::size_t m = 0; m < members.size(); ++m) {
        Plan& f = plans[members[m]];
        f.in_route = m + 1;
        double entry = prev + c.min_separation_s + rng.uniform(0.0, slack);
        if (m == 0) entry = rng.uniform(0.0, slack);
        const detail::SpeedProfile vf{f.v0, c.final_speed, c.decel_distance_km};
        for (std::size_t l = 0; l < m; ++l) {
          const Plan& lead = plans[members[l]];
          const detail::SpeedProfile vl{lead.v0, c.final_speed, c.decel_distance_km};
          const double shared = std::min(lead.cut_s, f.cut_s);
          const double lag = std::max(0.0, vl.time_to(shared) - vf.time_to(shared));
          entry = std::max(entry, lead.entry + lag + c.min_separation_s);
        }
        f.entry = entry;
        prev = entry;
      }
    }

    // Merge sequencing, first come first served on nominal merge time. Each
    // aircraft absorbs its delay in a slow-down zone ending at the merge
    // point; the final approach is shared by every flow, so spacing is
    // enforced there against all earlier aircraft.
    std::vector<detail::TimeLaw> laws;
    for (const Plan& p : plans) {
      const detail::SpeedProfile v{p.v0, c.final_speed, c.decel_distance_km};
      const double merge_s = p.path.length() - c.final_length_km;
      const double zone_start = p.direct ? p.cut_s : c.cut_fraction_max * p.premerge_len;
      laws.push_back({v, p.entry, zone_start, merge_s, v.time_to(zone_start), v.time_to(merge_s), 0.0});
    }
    std::vector<std::size_t> order(plans.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return laws[a].time_at(laws[a].zone_s1) < laws[b].time_at(laws[b].zone_s1);
    });
    std::vector<std::size_t> done;
    for (std::size_t i : order) {
      const Plan& pi = plans[i];
      detail::TimeLaw& li = laws[i];
      double delay = 0.0;
      for (std::size_t j : done) {
        for (double f = 0.0; f <= c.final_length_km; f += 0.5) {
          const double need = laws[j].time_at(laws[j].zone_s1 + f) + c.min_separation_s -
                              (li.entry + li.speed.time_to(li.zone_s1 + f));
          delay = std::max(delay, need);
        }
      }
      // Same-route aircraft ahead share the slow-down zone.
      auto zone_ok = [&](double d) {
        li.delay = d;
        for (std::size_t j : done) {
          if (plans[j].route != pi.route || pi.direct || plans[j].direct) continue;
          for (double s = li.zone_s0; s <= li.zone_s1; s += 0.5)
            if (li.time_at(s) - laws[j].time_at(s) < c.min_separation_s - 1e-9) return false;
        }
        return true;
      };
      if (!zone_ok(delay)) {
        double lo = delay, hi = delay + 60.0;
        while (!zone_ok(hi)) hi += 2.0 * (hi - lo);
        for (int it = 0; it < 60; ++it) {
          const double mid = 0.5 * (lo + hi);
          (zone_ok(mid) ? hi : lo) = mid;
        }
        delay = hi;
      }
      li.delay = delay;
      done.push_back(i);
    }

    double episode_end = episode_start;
    for (std::size_t k = 0; k < plans.size(); ++k) {
      const Plan& p = plans[k];
      const detail::TimeLaw& law = laws[k];
      const auto& r = c.routes[p.route];
      const double length = p.path.length();
      const double t_entry = episode_start + p.entry;
      const double duration = law.time_at(length) - p.entry;

      SyntheticAircraft meta;
      char id[32];
      std::snprintf(id, sizeof id, "E%03zu-%s%02zu", e, r.name.c_str(), p.in_route);
      meta.id = id;
      meta.episode = e;
      meta.route = p.route;
      meta.direct_to = p.direct;
      meta.entry_time = t_entry;
      if (p.direct) meta.cut_time = episode_start + law.time_at(p.cut_s);
      meta.merge_time = episode_start + law.time_at(law.zone_s1);
      meta.land_time = t_entry + duration;
      meta.path_length_km = length;
      meta.merge_delay = law.delay;

      AircraftTrack tr{meta.id, {}};
      auto sample = [&](double t_rel) {
        const double s = law.distance_at(p.entry + t_rel, length);
        const auto xy = p.path.at(s);
        const double z = r.entry[2] + (c.runway_alt_km - r.entry[2]) * s / length;
        TrackPoint pt{t_entry + t_rel, xy[0] + rng.normal(0.0, c.noise_std_km),
                      xy[1] + rng.normal(0.0, c.noise_std_km),
                      std::max(0.0, z + rng.normal(0.0, c.noise_std_km))};
        tr.points.push_back(pt);
      };
      sample(0.0);
      for (std::size_t i = 1;; ++i) {
        const double t_rel = static_cast<double>(i) * c.sample_interval_s +
                             rng.uniform(-c.sample_jitter_s, c.sample_jitter_s);
        if (t_rel >= duration - c.sample_jitter_s) break;
        sample(t_rel);
      }
      sample(duration);

      episode_end = std::max(episode_end, meta.land_time);
      out.tracks.push_back(std::move(tr));
      out.aircraft.push_back(std::move(meta));
    }
    episode_start = std::ceil((episode_end + c.episode_gap_s) / 60.0) * 60.0;
  }
  return out;
}

}  // namespace atx::data
