#pragma once

// Pixel edits applied to detected regions. Regions are clipped to the frame
// and never fail: a detection that drifted off-screen renders nothing.

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "rerender/error.hpp"
#include "rerender/font.hpp"
#include "rerender/image.hpp"

namespace rerender::render {

inline Frame occlude_solid(Frame f, const Region& r, Rgb color) {
  const auto c = clip(r, f.width, f.height);
  if (!c) return f;
  for (int y = c->y; y < c->bottom(); ++y)
    for (int x = c->x; x < c->right(); ++x) f.set(x, y, color);
  return f;
}

inline double default_blur_sigma(const Region& r) { return std::max(2.0, std::min(r.w, r.h) / 8.0); }

/// Gaussian blur confined to the clipped region; sigma defaults to
/// max(2, min(w, h) / 8) of the clipped region.
inline Frame occlude_blur(Frame f, const Region& r, std::optional<double> sigma = std::nullopt) {
  const auto c = clip(r, f.width, f.height);
  if (!c) return f;
  return gaussian_blur(f, *c, sigma.value_or(default_blur_sigma(*c)));
}

inline constexpr int kLabelPad = 1;

/// Where the label strip for region `r` goes (before clipping).
inline Region label_strip(const Region& r, std::string_view label) {
  const auto [tw, th] = font::measure(label, 1);
  return Region{r.x, r.y - th - 2 * kLabelPad, tw + 2 * kLabelPad, th + 2 * kLabelPad};
}

inline Rgb label_ink(Rgb background) { return luminance(background) > 128.0 ? Rgb{0, 0, 0} : Rgb{255, 255, 255}; }

/// Border of `thickness` pixels drawn inside the region; a non-empty label is
/// written on a strip of the border color just above the region.
inline Frame highlight(Frame f, const Region& r, Rgb color, int thickness = 2, std::string_view label = {}) {
  thickness = std::max(1, thickness);
  if (const auto c = clip(r, f.width, f.height)) {
    for (int y = c->y; y < c->bottom(); ++y)
      for (int x = c->x; x < c->right(); ++x) {
        const bool edge = x < r.x + thickness || x >= r.right() - thickness || y < r.y + thickness ||
                          y >= r.bottom() - thickness;
        if (edge) f.set(x, y, color);
      }
  }
  if (!label.empty()) {
    const Region strip = label_strip(r, label);
    if (const auto s = clip(strip, f.width, f.height)) {
      for (int y = s->y; y < s->bottom(); ++y)
        for (int x = s->x; x < s->right(); ++x) f.set(x, y, color);
      font::draw_text(f, strip.x + kLabelPad, strip.y + kLabelPad, label, 1, label_ink(color));
    }
  }
  return f;
}

inline Rgb mean_color(const Frame& f) {
  double s[3] = {0, 0, 0};
  for (std::size_t i = 0; i < f.pixels.size(); i += 3)
    for (int c = 0; c < 3; ++c) s[c] += f.pixels[i + static_cast<std::size_t>(c)];
  const double n = static_cast<double>(f.pixels.size() / 3);
  return Rgb{detail::to_byte(s[0] / n), detail::to_byte(s[1] / n), detail::to_byte(s[2] / n)};
}

/// Pixels of the one-pixel ring just outside `r` that lie inside the frame.
inline std::vector<std::pair<int, int>> border_ring(const Region& r, int width, int height) {
  std::vector<std::pair<int, int>> ring;
  auto add = [&](int x, int y) {
    if (x >= 0 && y >= 0 && x < width && y < height) ring.emplace_back(x, y);
  };
  for (int x = r.x - 1; x <= r.right(); ++x) {
    add(x, r.y - 1);
    add(x, r.bottom());
  }
  for (int y = r.y; y < r.bottom(); ++y) {
    add(r.x - 1, y);
    add(r.right(), y);
  }
  return ring;
}

/// Fills the region with the 1/d weighted average of its border ring, per
/// channel. With no ring left (region covers the frame) fills the frame's
/// mean color instead.
inline Frame inpaint_simple(Frame f, const Region& r) {
  const auto c = clip(r, f.width, f.height);
  if (!c) return f;
  const auto ring = border_ring(*c, f.width, f.height);
  if (ring.empty()) {
    const Rgb mean = mean_color(f);
    return occlude_solid(std::move(f), *c, mean);
  }
  std::vector<double> colors(ring.size() * 3);
  for (std::size_t i = 0; i < ring.size(); ++i) {
    const auto* p = f.at(ring[i].first, ring[i].second);
    for (int k = 0; k < 3; ++k) colors[i * 3 + static_cast<std::size_t>(k)] = p[k];
  }
  Frame out = f;
  for (int y = c->y; y < c->bottom(); ++y)
    for (int x = c->x; x < c->right(); ++x) {
      double acc[3] = {0, 0, 0}, wsum = 0.0;
      for (std::size_t i = 0; i < ring.size(); ++i) {
        const double w = 1.0 / std::hypot(static_cast<double>(x - ring[i].first), static_cast<double>(y - ring[i].second));
        wsum += w;
        for (int k = 0; k < 3; ++k) acc[k] += w * colors[i * 3 + static_cast<std::size_t>(k)];
      }
      auto* p = out.at(x, y);
      for (int k = 0; k < 3; ++k) p[k] = detail::to_byte(acc[k] / wsum);
    }
  return out;
}

// ---------------------------------------------------------------------------
// Actions as stored in intervention specs:
// {"action": "solid"|"blur"|"highlight"|"inpaint", "params": {...}}

enum class ActionKind { solid, blur, highlight, inpaint };

inline std::string_view to_string(ActionKind k) {
  switch (k) {
    case ActionKind::solid: return "solid";
    case ActionKind::blur: return "blur";
    case ActionKind::highlight: return "highlight";
    case ActionKind::inpaint: return "inpaint";
  }
  return "solid";
}

struct Action {
  ActionKind kind = ActionKind::solid;
  Rgb color{0, 0, 0};
  std::optional<double> sigma;  // blur; default from region size
  int thickness = 2;            // highlight
  std::string label;            // highlight

  static Action solid(Rgb c = {0, 0, 0}) { return Action{ActionKind::solid, c, std::nullopt, 2, {}}; }
  static Action blur(std::optional<double> s = std::nullopt) { return Action{ActionKind::blur, {}, s, 2, {}}; }
  static Action highlight(Rgb c, int t = 2, std::string l = {}) {
    return Action{ActionKind::highlight, c, std::nullopt, t, std::move(l)};
  }
  static Action inpaint() { return Action{ActionKind::inpaint, {}, std::nullopt, 2, {}}; }

  friend bool operator==(const Action&, const Action&) = default;
};

inline Frame apply(Frame f, const Region& r, const Action& a) {
  switch (a.kind) {
    case ActionKind::solid: return occlude_solid(std::move(f), r, a.color);
    case ActionKind::blur: return occlude_blur(std::move(f), r, a.sigma);
    case ActionKind::highlight: return highlight(std::move(f), r, a.color, a.thickness, a.label);
    case ActionKind::inpaint: return inpaint_simple(std::move(f), r);
  }
  return f;
}

inline nlohmann::json color_json(Rgb c) { return nlohmann::json::array({c.r, c.g, c.b}); }

inline Rgb parse_color(const nlohmann::json& j) {
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    const bool hex = s.size() == 7 && s[0] == '#' &&
                     std::all_of(s.begin() + 1, s.end(), [](char c) { return std::isxdigit(static_cast<unsigned char>(c)); });
    require(hex, "color strings must look like #rrggbb");
    const auto v = std::stoul(s.substr(1), nullptr, 16);
    return Rgb{static_cast<std::uint8_t>(v >> 16), static_cast<std::uint8_t>(v >> 8), static_cast<std::uint8_t>(v)};
  }
  require(j.is_array() && j.size() == 3, "color must be [r, g, b] or #rrggbb");
  Rgb c;
  std::uint8_t* dst[3] = {&c.r, &c.g, &c.b};
  for (int i = 0; i < 3; ++i) {
    require(j[static_cast<std::size_t>(i)].is_number_integer(), "color components must be integers");
    const auto v = j[static_cast<std::size_t>(i)].get<long long>();
    require(v >= 0 && v <= 255, "color components must be in [0,255]");
    *dst[i] = static_cast<std::uint8_t>(v);
  }
  return c;
}

inline nlohmann::json to_json(const Action& a) {
  nlohmann::json params = nlohmann::json::object();
  switch (a.kind) {
    case ActionKind::solid: params["color"] = color_json(a.color); break;
    case ActionKind::blur:
      if (a.sigma) params["sigma"] = *a.sigma;
      break;
    case ActionKind::highlight:
      params["color"] = color_json(a.color);
      params["thickness"] = a.thickness;
      params["label"] = a.label;
      break;
    case ActionKind::inpaint: break;
  }
  return {{"action", to_string(a.kind)}, {"params", std::move(params)}};
}

inline Action action_from_json(const nlohmann::json& j) {
  require(j.is_object(), "render action must be an object");
  require(j.contains("action") && j["action"].is_string(), "render action needs an 'action' string");
  const auto name = j["action"].get<std::string>();
  const nlohmann::json params = j.value("params", nlohmann::json::object());
  require(params.is_object(), "render params must be an object");
  try {
    if (name == "solid") return Action::solid(params.contains("color") ? parse_color(params["color"]) : Rgb{0, 0, 0});
    if (name == "blur") {
      std::optional<double> sigma;
      if (params.contains("sigma") && !params["sigma"].is_null()) {
        sigma = params["sigma"].get<double>();
        require(*sigma > 0.0 && std::isfinite(*sigma), "blur sigma must be positive");
      }
      return Action::blur(sigma);
    }
    if (name == "highlight") {
      const int t = params.value("thickness", 2);
      require(t >= 1, "highlight thickness must be at least 1");
      return Action::highlight(params.contains("color") ? parse_color(params["color"]) : Rgb{255, 0, 0}, t,
                               params.value("label", std::string{}));
    }
    if (name == "inpaint") return Action::inpaint();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::invalid_argument, std::string("bad render params: ") + e.what());
  }
  fail(ErrorCode::invalid_argument, "unknown render action '" + name + "'");
}

}  // namespace rerender::render
