#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <limits>
#include <optional>
#include <sstream>
#include <string>

#include "atx/data/types.hpp"
#include "atx/explain/scores.hpp"

namespace atx::explain {

struct Rgb {
  int r = 0, g = 0, b = 0;

  static Rgb parse(const std::string& hex) {
    unsigned v = 0;
    char tail = 0;
    if (hex.size() != 7 || hex[0] != '#' || std::sscanf(hex.c_str() + 1, "%6x%c", &v, &tail) != 1) {
      throw InputError("color must be #rrggbb, got '" + hex + "'");
    }
    return {static_cast<int>((v >> 16) & 0xff), static_cast<int>((v >> 8) & 0xff), static_cast<int>(v & 0xff)};
  }

  std::string hex() const {
    char buf[8];
    std::snprintf(buf, sizeof buf, "#%02x%02x%02x", r, g, b);
    return buf;
  }

  friend bool operator==(const Rgb&, const Rgb&) = default;
};

/// Linear RGB interpolation, t clamped to [0, 1].
inline Rgb ramp(const Rgb& lo, const Rgb& hi, double t) {
  t = std::clamp(t, 0.0, 1.0);
  auto mix = [t](int a, int b) { return static_cast<int>(std::lround(a + t * (b - a))); };
  return {mix(lo.r, hi.r), mix(lo.g, hi.g), mix(lo.b, hi.b)};
}

struct RenderStyle {
  int width = 800;
  int height = 640;
  int margin = 40;
  int legend_width = 90;
  std::string low_color = "#2c4fa3";
  std::string high_color = "#ffd83d";
  std::string unscored_color = "#9a9a9a";
  std::string background = "#ffffff";
  double line_width = 2.5;
  double marker_radius = 4.5;
  double query_marker = 11.0;  // side of the query's square
  /// Fixed score range for comparing frames; per-frame min-max when unset.
  std::optional<std::pair<double, double>> global_scale;
};

namespace detail {

inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  std::string s = buf;
  return s == "-0.00" ? "0.00" : s;
}

inline std::string escape_xml(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace detail

/// Color position in [0, 1] of a score under per-frame min-max scaling (or
/// the style's global range). A degenerate range maps to the top color.
inline double ramp_position(double score, double lo, double hi) {
  if (!(hi > lo)) return 1.0;
  return (score - lo) / (hi - lo);
}

/// Draws each valid aircraft's past trajectory as a tail colored by its
/// score, its current position as a circle, and the query aircraft as a
/// filled square. Output depends only on the arguments.
inline std::string render_scene(const data::SceneWindow& scene_km, const ExplanationFrame& frame,
                                const RenderStyle& style = {}) {
  const Rgb lo_c = Rgb::parse(style.low_color), hi_c = Rgb::parse(style.high_color);
  const std::size_t T = scene_km.past_steps();

  double min_x = std::numeric_limits<double>::infinity(), max_x = -min_x;
  double min_y = min_x, max_y = -min_x;
  for (std::size_t i = 0; i < scene_km.slots(); ++i) {
    if (!scene_km.valid[i]) continue;
    for (std::size_t k = 0; k < T; ++k) {
      min_x = std::min(min_x, scene_km.past(i, k, 0));
      max_x = std::max(max_x, scene_km.past(i, k, 0));
      min_y = std::min(min_y, scene_km.past(i, k, 1));
      max_y = std::max(max_y, scene_km.past(i, k, 1));
    }
  }
  if (!std::isfinite(min_x)) min_x = max_x = min_y = max_y = 0.0;
  const double pad = 2.0;  // km around the traffic
  min_x -= pad, max_x += pad, min_y -= pad, max_y += pad;
  const double plot_w = style.width - 2.0 * style.margin - style.legend_width;
  const double plot_h = style.height - 2.0 * style.margin;
  const double k = std::min(plot_w / (max_x - min_x), plot_h / (max_y - min_y));
  auto px = [&](double x) { return style.margin + (x - min_x) * k; };
  auto py = [&](double y) { return style.height - style.margin - (y - min_y) * k; };

  double s_lo = std::numeric_limits<double>::infinity(), s_hi = -s_lo;
  for (const auto& [id, w] : frame.scores) {
    s_lo = std::min(s_lo, w);
    s_hi = std::max(s_hi, w);
  }
  if (style.global_scale) std::tie(s_lo, s_hi) = *style.global_scale;
  if (frame.scores.empty()) s_lo = s_hi = 0.0;

  std::ostringstream svg;
  svg << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
      << "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"" << style.width << "\" height=\""
      << style.height << "\" viewBox=\"0 0 " << style.width << ' ' << style.height << "\">\n"
      << "<defs><linearGradient id=\"ramp\" x1=\"0\" y1=\"1\" x2=\"0\" y2=\"0\">"
      << "<stop offset=\"0\" stop-color=\"" << lo_c.hex() << "\"/>"
      << "<stop offset=\"1\" stop-color=\"" << hi_c.hex() << "\"/></linearGradient></defs>\n"
      << "<rect x=\"0\" y=\"0\" width=\"" << style.width << "\" height=\"" << style.height << "\" fill=\""
      << style.background << "\"/>\n"
      << "<text x=\"" << style.margin << "\" y=\"" << style.margin / 2 + 5
      << "\" font-family=\"sans-serif\" font-size=\"14\">t0 = " << detail::fmt(frame.t0)
      << " s, query " << detail::escape_xml(frame.query_id) << "</text>\n";

  for (std::size_t i = 0; i < scene_km.slots(); ++i) {
    if (!scene_km.valid[i]) continue;
    const std::string& id = scene_km.ids[i];
    const auto it = frame.scores.find(id);
    const std::string color =
        it == frame.scores.end() ? style.unscored_color : ramp(lo_c, hi_c, ramp_position(it->second, s_lo, s_hi)).hex();
    svg << "<polyline class=\"tail\" data-id=\"" << detail::escape_xml(id) << "\" fill=\"none\" stroke=\"" << color
        << "\" stroke-width=\"" << detail::fmt(style.line_width) << "\" points=\"";
    for (std::size_t s = 0; s < T; ++s) {
      if (s) svg << ' ';
      svg << detail::fmt(px(scene_km.past(i, s, 0))) << ',' << detail::fmt(py(scene_km.past(i, s, 1)));
    }
    svg << "\"/>\n";
    const double cx = px(scene_km.past(i, T - 1, 0)), cy = py(scene_km.past(i, T - 1, 1));
    if (id == frame.query_id) {
      const double h = style.query_marker / 2.0;
      svg << "<rect class=\"query\" x=\"" << detail::fmt(cx - h) << "\" y=\"" << detail::fmt(cy - h) << "\" width=\""
          << detail::fmt(style.query_marker) << "\" height=\"" << detail::fmt(style.query_marker)
          << "\" fill=\"#000000\"/>\n";
    } else {
      svg << "<circle class=\"current\" cx=\"" << detail::fmt(cx) << "\" cy=\"" << detail::fmt(cy) << "\" r=\""
          << detail::fmt(style.marker_radius) << "\" fill=\"" << color << "\" stroke=\"#000000\"/>\n";
    }
    svg << "<text x=\"" << detail::fmt(cx + 7) << "\" y=\"" << detail::fmt(cy - 7)
        << "\" font-family=\"sans-serif\" font-size=\"11\">" << detail::escape_xml(id);
    if (it != frame.scores.end()) svg << " (" << detail::fmt(it->second) << ")";
    svg << "</text>\n";
  }

  const double bar_x = style.width - style.margin - 30.0;
  const double bar_y = style.margin, bar_h = plot_h;
  svg << "<rect class=\"colorbar\" x=\"" << detail::fmt(bar_x) << "\" y=\"" << detail::fmt(bar_y)
      << "\" width=\"16\" height=\"" << detail::fmt(bar_h) << "\" fill=\"url(#ramp)\" stroke=\"#000000\"/>\n"
      << "<text x=\"" << detail::fmt(bar_x - 40) << "\" y=\"" << detail::fmt(bar_y + 4)
      << "\" font-family=\"sans-serif\" font-size=\"11\">" << detail::fmt(s_hi) << "</text>\n"
      << "<text x=\"" << detail::fmt(bar_x - 40) << "\" y=\"" << detail::fmt(bar_y + bar_h)
      << "\" font-family=\"sans-serif\" font-size=\"11\">" << detail::fmt(s_lo) << "</text>\n"
      << "</svg>\n";
  return svg.str();
}

}  // namespace atx::explain
