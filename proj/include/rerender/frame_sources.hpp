#pragma once

// Frame producers: directory replay, deterministic synthetic GUI skins, and a
// push queue fed by clients. Synthetic skins also return the ground-truth
// regions of every GUI element they draw.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <condition_variable>
#include <deque>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>
#include <sodium.h>

#include "rerender/codec.hpp"
#include "rerender/error.hpp"
#include "rerender/font.hpp"
#include "rerender/image.hpp"
#include "rerender/random.hpp"

namespace rerender::sources {

// ---------------------------------------------------------------------------
// Skins

enum class Device { mobile, desktop };

struct SkinStyle {
  std::string id;
  Device device = Device::mobile;
  double scale = 1.0;
  int width = 0;
  int height = 0;
  Rgb page;
  Rgb feed_ink;
  Rgb card;
  std::vector<Rgb> accents;  // element foregrounds, cycled by element index
};

// Mobile-a is the reference size. The other scales sit an exact pyramid step
// (a power of 2^(1/4)) away from one of the two device-style references, so a
// mask cropped on mobile-a covers desktop-b and one cropped on desktop-a
// covers mobile-b. Within a device style the variants differ by under 10%.
inline const std::vector<SkinStyle>& skin_styles() {
  static const std::vector<SkinStyle> styles = {
      {"mobile-a", Device::mobile, 1.0, 360, 640, {236, 238, 242}, {120, 124, 132}, {255, 255, 255},
       {{30, 60, 150}, {20, 110, 70}, {140, 40, 40}}},
      {"mobile-b", Device::mobile, std::pow(2.0, 1.0 / 8.0), 360, 640, {250, 244, 230}, {130, 116, 100},
       {255, 250, 215}, {{150, 40, 90}, {70, 70, 20}, {20, 90, 120}}},
      {"desktop-a", Device::desktop, std::pow(2.0, 5.0 / 8.0), 640, 480, {222, 226, 232}, {96, 100, 110},
       {246, 248, 252}, {{60, 40, 120}, {10, 90, 110}, {110, 60, 20}}},
      {"desktop-b", Device::desktop, std::pow(2.0, 4.0 / 8.0), 640, 480, {214, 232, 222}, {90, 110, 100},
       {240, 255, 246}, {{100, 30, 30}, {30, 70, 140}, {60, 100, 40}}},
  };
  return styles;
}

inline const SkinStyle& skin_style(std::string_view id) {
  for (const auto& s : skin_styles())
    if (s.id == id) return s;
  fail(ErrorCode::invalid_argument, "unknown skin '" + std::string(id) + "'");
}

inline std::vector<std::string> skin_ids() {
  std::vector<std::string> out;
  for (const auto& s : skin_styles()) out.push_back(s.id);
  return out;
}

inline constexpr const char* kElementNames[] = {
    "stories-bar", "metrics-bar", "recommended-items", "share-bar",  "like-button",
    "search-box",  "nav-tabs",    "ad-banner",         "notification-badge", "comment-box",
};
inline constexpr int kElementCount = 10;

namespace detail {

// Element artwork is a coverage map in [0, 1] at the reference size; skins
// resample it and paint accent over card color.
struct Art {
  GrayImage cover;
  explicit Art(int w, int h) : cover(w, h, 0.0) {}

  void rect(int x, int y, int w, int h, double v = 1.0) {
    for (int yy = std::max(0, y); yy < std::min(cover.height, y + h); ++yy)
      for (int xx = std::max(0, x); xx < std::min(cover.width, x + w); ++xx) cover.at(xx, yy) = v;
  }
  void outline(int x, int y, int w, int h, int t = 1) {
    rect(x, y, w, t);
    rect(x, y + h - t, w, t);
    rect(x, y, t, h);
    rect(x + w - t, y, t, h);
  }
  // Disc of radius r centered on (cx, cy) in pixel-center coordinates; ring
  // when inner > 0.
  void disc(double cx, double cy, double r, double inner = 0.0, double v = 1.0) {
    for (int y = 0; y < cover.height; ++y)
      for (int x = 0; x < cover.width; ++x) {
        const double d = std::hypot(x + 0.5 - cx, y + 0.5 - cy);
        if (d <= r && d >= inner) cover.at(x, y) = v;
      }
  }
  void text(int x, int y, std::string_view s, double v = 1.0) {
    Frame scratch(cover.width, cover.height, Rgb{0, 0, 0});
    font::draw_text(scratch, x, y, s, 1, Rgb{255, 255, 255});
    for (int yy = 0; yy < cover.height; ++yy)
      for (int xx = 0; xx < cover.width; ++xx)
        if (scratch.at(xx, yy)[0]) cover.at(xx, yy) = v;
  }
};

inline Art stories_bar() {
  Art a(151, 30);
  for (int i = 0; i < 5; ++i) {
    const double cx = 15.0 + 30.0 * i;
    a.disc(cx, 15.0, 13.0, 10.5);
    a.rect(static_cast<int>(cx) - 2 - i, 13 - i, 4 + 2 * i, 4 + 2 * i);
  }
  return a;
}

inline Art metrics_bar() {
  Art a(120, 18);
  const int heights[] = {6, 12, 9, 15};
  for (int i = 0; i < 4; ++i) a.rect(3 + 5 * i, 17 - heights[i], 3, heights[i]);
  a.text(28, 5, "128 VIEWS");
  a.rect(0, 17, 120, 1);
  return a;
}

inline Art recommended_items() {
  Art a(96, 44);
  for (int i = 0; i < 3; ++i) {
    const int x = 3 + 31 * i;
    a.outline(x, 2, 28, 28, 2);
    if (i == 0)
      for (int k = 0; k < 24; ++k) a.rect(x + 2 + k, 4 + k, 2, 1);
    if (i == 1) {
      a.rect(x + 12, 6, 4, 20);
      a.rect(x + 4, 14, 20, 4);
    }
    if (i == 2) a.disc(x + 14.0, 16.0, 9.0, 5.0);
  }
  a.text(4, 34, "FOR YOU");
  return a;
}

inline Art share_bar() {
  Art a(73, 18);
  for (int k = 0; k < 8; ++k) a.rect(3 + k, 9 - k, 1, 2 * k + 1);  // triangle
  a.rect(16, 2, 1, 14);
  a.outline(22, 2, 14, 14, 2);
  a.rect(28, 5, 2, 8);
  a.rect(25, 8, 8, 2);
  a.rect(41, 2, 1, 14);
  a.disc(52.0, 9.0, 6.0, 3.5);
  a.disc(62.0, 9.0, 6.0, 3.5);
  return a;
}

inline Art like_button() {
  Art a(29, 20);
  a.outline(0, 0, 29, 20, 1);
  a.disc(10.5, 7.5, 4.5);
  a.disc(18.5, 7.5, 4.5);
  for (int k = 0; k < 9; ++k) a.rect(6 + k, 8 + k, 17 - 2 * k, 1);
  return a;
}

inline Art search_box() {
  Art a(110, 18);
  a.outline(0, 0, 110, 18, 1);
  a.disc(9.0, 8.0, 5.0, 3.0);
  for (int k = 0; k < 4; ++k) a.rect(12 + k, 11 + k, 2, 1);
  a.text(22, 5, "Search");
  return a;
}

inline Art nav_tabs() {
  Art a(140, 20);
  a.text(4, 4, "Home");
  a.text(48, 4, "Feed");
  a.text(92, 4, "Inbox");
  a.rect(2, 15, 30, 3);
  a.rect(0, 19, 140, 1);
  return a;
}

inline Art ad_banner() {
  Art a(120, 30);
  a.outline(0, 0, 120, 30, 2);
  for (int y = 2; y < 28; ++y)
    for (int x = 2; x < 30; ++x)
      if ((x + y) % 8 < 3) a.cover.at(x, y) = 1.0;
  a.text(36, 5, "AD");
  a.text(36, 17, "SALE 50");
  return a;
}

inline Art notification_badge() {
  Art a(20, 20);
  a.disc(10.0, 10.0, 9.5);
  a.text(8, 6, "9", 0.0);
  return a;
}

inline Art comment_box() {
  Art a(100, 29);
  a.outline(0, 0, 100, 22, 1);
  for (int k = 0; k < 6; ++k) a.rect(10, 22 + k, 6 - k, 1);
  a.text(4, 3, "Nice post");
  a.rect(4, 15, 60, 2);
  return a;
}

inline const std::vector<Art>& element_art() {
  static const std::vector<Art> art = {stories_bar(), metrics_bar(), recommended_items(), share_bar(),
                                       like_button(), search_box(),  nav_tabs(),          ad_banner(),
                                       notification_badge(), comment_box()};
  return art;
}

struct Slot {
  int x, y;
};

// Positions at the reference scale; each skin multiplies them by its scale.
inline constexpr Slot kMobileSlots[kElementCount] = {
    {10, 40}, {10, 330}, {10, 380}, {220, 44}, {180, 44}, {170, 8}, {10, 8}, {150, 330}, {300, 8}, {130, 380},
};
inline constexpr Region kMobileFeed{10, 84, 320, 226};
inline constexpr Slot kDesktopSlots[kElementCount] = {
    {-1, -1}, {290, 80}, {290, 110}, {334, 4}, {300, 4}, {150, 4}, {4, 4}, {290, 40}, {270, 4}, {290, 165},
};
inline constexpr Region kDesktopFeed{4, 34, 276, 270};

inline int scaled(int v, double s) { return static_cast<int>(std::lround(v * s)); }

inline const std::vector<std::string>& feed_words() {
  static const std::vector<std::string> words = {
      "today", "walk", "river", "coffee", "friends", "photo", "trip", "lunch", "garden", "music",
      "rain",  "book", "city",  "train",  "summer",  "night", "park", "bread", "movie",  "beach"};
  return words;
}

inline void paint(Frame& f, const GrayImage& cover, int ox, int oy, Rgb bg, Rgb fg) {
  for (int y = 0; y < cover.height; ++y)
    for (int x = 0; x < cover.width; ++x) {
      const int px = ox + x, py = oy + y;
      if (px < 0 || py < 0 || px >= f.width || py >= f.height) continue;
      const double a = cover.at(x, y);
      f.set(px, py,
            Rgb{rerender::detail::to_byte(bg.r + a * (fg.r - bg.r)), rerender::detail::to_byte(bg.g + a * (fg.g - bg.g)),
                rerender::detail::to_byte(bg.b + a * (fg.b - bg.b))});
    }
}

}  // namespace detail

inline bool element_present(const SkinStyle& s, int element) {
  return !(s.device == Device::desktop && element == 0);  // no stories bar on desktop
}

/// Size of element `element` on a skin at `scale` (same rounding as the mask pyramid).
inline std::pair<int, int> element_size(int element, double scale) {
  const auto& c = detail::element_art()[static_cast<std::size_t>(element)].cover;
  return {std::max(1, detail::scaled(c.width, scale)), std::max(1, detail::scaled(c.height, scale))};
}

struct SkinElement {
  std::string name;
  Region region;
};

struct SkinFrame {
  Frame frame;
  std::vector<SkinElement> elements;

  const SkinElement* find(std::string_view name) const {
    for (const auto& e : elements)
      if (e.name == name) return &e;
    return nullptr;
  }
};

inline constexpr int kFeedLinePitch = 14;
inline constexpr int kDefaultScroll = 2;  // feed pixels per frame

/// Deterministic render of `skin` for layout seed `seed` at frame index `t`.
/// The seed shifts the whole layout by up to 6 pixels and picks the feed
/// text; t scrolls the feed by `scroll` pixels per frame. GUI elements are
/// fixed chrome and never overlap each other or the feed.
inline SkinFrame synth_skin(std::string_view skin, std::uint64_t seed, std::int64_t t, int scroll = kDefaultScroll) {
  const SkinStyle& st = skin_style(skin);
  require(t >= 0, "frame index must be non-negative");
  Rng rng(mix_seed(seed, 0x5e1f));
  const int dx = static_cast<int>(rng.uniform_int(0, 6));
  const int dy = static_cast<int>(rng.uniform_int(0, 6));

  SkinFrame out{Frame(st.width, st.height, st.page), {}};
  Frame& f = out.frame;
  f.seq_no = static_cast<std::uint64_t>(t);
  f.source_id = std::string(skin);

  const bool mobile = st.device == Device::mobile;
  const Region feed_base = mobile ? detail::kMobileFeed : detail::kDesktopFeed;
  const Region feed = *clip(Region{detail::scaled(feed_base.x, st.scale) + dx, detail::scaled(feed_base.y, st.scale) + dy,
                                   detail::scaled(feed_base.w, st.scale), detail::scaled(feed_base.h, st.scale)},
                            st.width, st.height);

  // Feed: a cycle of text lines scrolling upwards, drawn off-canvas and
  // copied into the feed rectangle.
  constexpr int kLines = 40;
  std::vector<std::string> lines;
  const auto& words = detail::feed_words();
  for (int i = 0; i < kLines; ++i) {
    std::string line;
    const int n = static_cast<int>(rng.uniform_int(3, 6));
    for (int k = 0; k < n; ++k) {
      if (k) line += ' ';
      line += words[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(words.size()) - 1))];
    }
    lines.push_back(std::move(line));
  }
  Frame scratch(feed.w, feed.h, st.page);
  const std::int64_t cycle = static_cast<std::int64_t>(kLines) * kFeedLinePitch;
  const int offset = static_cast<int>((t * scroll) % cycle);
  for (int i = 0; i < kLines; ++i) {
    int y = i * kFeedLinePitch - offset + 4;
    if (y < -kFeedLinePitch) y += static_cast<int>(cycle);
    if (y >= feed.h) continue;
    font::draw_text(scratch, 4, y, lines[static_cast<std::size_t>(i)], 1, st.feed_ink);
  }
  for (int y = 0; y < feed.h; ++y)
    std::copy_n(scratch.at(0, y), static_cast<std::size_t>(feed.w) * 3, f.at(feed.x, feed.y + y));

  const auto* slots = mobile ? detail::kMobileSlots : detail::kDesktopSlots;
  for (int e = 0; e < kElementCount; ++e) {
    if (!element_present(st, e)) continue;
    const auto& art = detail::element_art()[static_cast<std::size_t>(e)].cover;
    const auto [w, h] = element_size(e, st.scale);
    const GrayImage cover = resize_bilinear(art, w, h);
    const Region r{detail::scaled(slots[e].x, st.scale) + dx, detail::scaled(slots[e].y, st.scale) + dy, w, h};
    detail::paint(f, cover, r.x, r.y, st.card, st.accents[static_cast<std::size_t>(e) % st.accents.size()]);
    out.elements.push_back(SkinElement{kElementNames[e], r});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Desk scenes with an optional planted object (a mug seen from above:
// ring, handle, coffee disc). Used for the patch-model workflow.

struct ObjectScene {
  Frame frame;
  std::optional<Region> object;
};

inline constexpr int kObjectSide = 32;

inline ObjectScene synth_object_scene(std::uint64_t seed, bool with_object, int width = 320, int height = 240) {
  require(width >= 2 * kObjectSide && height >= 2 * kObjectSide, "scene too small for the object");
  Rng rng(mix_seed(seed, 0x0b1ec7));
  auto color = [&](int lo, int hi) {
    return Rgb{static_cast<std::uint8_t>(rng.uniform_int(lo, hi)), static_cast<std::uint8_t>(rng.uniform_int(lo, hi)),
               static_cast<std::uint8_t>(rng.uniform_int(lo, hi))};
  };
  const Rgb desk = color(120, 190);
  Frame f(width, height, desk);
  // Vertical lighting gradient.
  for (int y = 0; y < height; ++y) {
    const double g = 0.85 + 0.3 * y / height;
    for (int x = 0; x < width; ++x) {
      auto* p = f.at(x, y);
      for (int c = 0; c < 3; ++c) p[c] = rerender::detail::to_byte(p[c] * g);
    }
  }
  // Papers and books: large axis-aligned rectangles, some with text lines.
  const int clutter = static_cast<int>(rng.uniform_int(3, 6));
  for (int i = 0; i < clutter; ++i) {
    const int w = static_cast<int>(rng.uniform_int(40, 120));
    const int h = static_cast<int>(rng.uniform_int(40, 100));
    const int x = static_cast<int>(rng.uniform_int(-10, width - 30));
    const int y = static_cast<int>(rng.uniform_int(-10, height - 30));
    const Rgb c = color(40, 250);
    for (int yy = std::max(0, y); yy < std::min(height, y + h); ++yy)
      for (int xx = std::max(0, x); xx < std::min(width, x + w); ++xx) f.set(xx, yy, c);
    if (rng.bernoulli(0.5))
      for (int ly = y + 6; ly + 8 < y + h; ly += 12) font::draw_text(f, x + 4, ly, "notes page", 1, color(0, 80));
  }
  ObjectScene scene{std::move(f), std::nullopt};
  if (!with_object) return scene;

  const int side = kObjectSide;
  const int ox = static_cast<int>(rng.uniform_int(0, width - side));
  const int oy = static_cast<int>(rng.uniform_int(0, height - side));
  const Rgb rim = color(200, 255);
  const Rgb coffee = color(30, 70);
  const Rgb shadow = Rgb{static_cast<std::uint8_t>(rim.r / 3), static_cast<std::uint8_t>(rim.g / 3),
                         static_cast<std::uint8_t>(rim.b / 3)};
  const double cx = ox + 13.0, cy = oy + 16.0;
  for (int y = oy; y < oy + side; ++y)
    for (int x = ox; x < ox + side; ++x) {
      const double d = std::hypot(x + 0.5 - cx, y + 0.5 - cy);
      const double hx = x + 0.5 - (ox + 27.0), hy = y + 0.5 - cy;
      const double dh = std::hypot(hx, hy);
      if (d <= 9.0) scene.frame.set(x, y, coffee);
      else if (d <= 13.0) scene.frame.set(x, y, rim);
      else if (d <= 14.0) scene.frame.set(x, y, shadow);
      else if (dh >= 2.5 && dh <= 5.0 && hx > -1.0) scene.frame.set(x, y, rim);
    }
  scene.object = Region{ox, oy, side, side};
  return scene;
}

// ---------------------------------------------------------------------------
// Source descriptors and streams

enum class SourceKind { replay, synthetic, push };

inline std::string_view to_string(SourceKind k) {
  switch (k) {
    case SourceKind::replay: return "replay";
    case SourceKind::synthetic: return "synthetic";
    case SourceKind::push: return "push";
  }
  return "replay";
}

inline SourceKind parse_source_kind(std::string_view s) {
  if (s == "replay") return SourceKind::replay;
  if (s == "synthetic") return SourceKind::synthetic;
  if (s == "push") return SourceKind::push;
  fail(ErrorCode::invalid_argument, "unknown source kind '" + std::string(s) + "'");
}

struct SourceDescriptor {
  std::string source_id;
  SourceKind kind = SourceKind::synthetic;
  std::string registered_user;
  double fps = 30.0;
  // replay
  std::filesystem::path directory;
  bool loop = false;
  // synthetic
  std::string skin = "mobile-a";
  int scroll = kDefaultScroll;
  std::uint64_t seed = 0;
  // push
  std::string token;
};

inline bool valid_source_id(std::string_view id) {
  return !id.empty() && id.size() <= 64 && std::all_of(id.begin(), id.end(), [](char c) {
    return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '-' || c == '_';
  });
}

/// Checks a descriptor before registration or opening.
inline void validate(const SourceDescriptor& d) {
  require(valid_source_id(d.source_id), "source id must be 1-64 characters of [A-Za-z0-9_-]");
  require(d.fps > 0.0 && std::isfinite(d.fps), "source fps must be positive");
  switch (d.kind) {
    case SourceKind::replay:
      if (!std::filesystem::is_directory(d.directory))
        fail(ErrorCode::not_found, "replay directory not found: " + d.directory.string());
      break;
    case SourceKind::synthetic:
      skin_style(d.skin);
      require(d.scroll >= 0, "scroll must be non-negative");
      break;
    case SourceKind::push: require(!d.token.empty(), "push sources need an ingest token"); break;
  }
}

inline nlohmann::json to_json(const SourceDescriptor& d, bool include_secrets = false) {
  nlohmann::json j{{"source_id", d.source_id},
                   {"kind", to_string(d.kind)},
                   {"registered_user", d.registered_user},
                   {"fps", d.fps}};
  switch (d.kind) {
    case SourceKind::replay:
      j["directory"] = d.directory.string();
      j["loop"] = d.loop;
      break;
    case SourceKind::synthetic:
      j["skin"] = d.skin;
      j["scroll"] = d.scroll;
      j["seed"] = d.seed;
      break;
    case SourceKind::push:
      if (include_secrets) j["token"] = d.token;
      break;
  }
  return j;
}

inline SourceDescriptor source_from_json(const nlohmann::json& j) {
  try {
    SourceDescriptor d;
    d.source_id = j.at("source_id").get<std::string>();
    d.kind = parse_source_kind(j.at("kind").get<std::string>());
    d.registered_user = j.value("registered_user", std::string{});
    d.fps = j.value("fps", 30.0);
    d.directory = j.value("directory", std::string{});
    d.loop = j.value("loop", false);
    d.skin = j.value("skin", std::string("mobile-a"));
    d.scroll = j.value("scroll", kDefaultScroll);
    d.seed = j.value("seed", std::uint64_t{0});
    d.token = j.value("token", std::string{});
    return d;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::invalid_argument, std::string("bad source descriptor: ") + e.what());
  }
}

/// A handle yielding frames with strictly increasing seq_no and
/// non-decreasing timestamps. Not shared between consumers.
class FrameStream {
 public:
  virtual ~FrameStream() = default;
  /// Next frame, or nullopt at end of stream. Push streams wait up to
  /// `wait` for a frame and return nullopt on timeout as well.
  virtual std::optional<Frame> next(std::chrono::milliseconds wait = std::chrono::milliseconds(0)) = 0;
  virtual bool finished() const = 0;
  virtual double fps() const = 0;
};

inline std::int64_t frame_time_ms(std::uint64_t seq, double fps) {
  return static_cast<std::int64_t>(std::llround(static_cast<double>(seq) * 1000.0 / fps));
}

/// PNGs of a directory in lexicographic file-name order.
inline std::vector<std::filesystem::path> list_pngs(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) fail(ErrorCode::not_found, "directory not found: " + dir.string());
  std::vector<std::filesystem::path> out;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".png") out.push_back(e.path());
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.filename().string() < b.filename().string(); });
  return out;
}

class ReplayStream final : public FrameStream {
 public:
  explicit ReplayStream(const SourceDescriptor& d) : desc_(d), files_(list_pngs(d.directory)) {}

  std::optional<Frame> next(std::chrono::milliseconds = std::chrono::milliseconds(0)) override {
    if (files_.empty() || (!desc_.loop && index_ >= files_.size())) return std::nullopt;
    Frame f = read_png(files_[index_ % files_.size()]);
    f.seq_no = index_;
    f.timestamp_ms = frame_time_ms(index_, desc_.fps);
    f.source_id = desc_.source_id;
    ++index_;
    return f;
  }
  bool finished() const override { return files_.empty() || (!desc_.loop && index_ >= files_.size()); }
  double fps() const override { return desc_.fps; }

 private:
  SourceDescriptor desc_;
  std::vector<std::filesystem::path> files_;
  std::uint64_t index_ = 0;
};

class SyntheticStream final : public FrameStream {
 public:
  explicit SyntheticStream(const SourceDescriptor& d) : desc_(d) {}

  std::optional<Frame> next(std::chrono::milliseconds = std::chrono::milliseconds(0)) override {
    Frame f = synth_skin(desc_.skin, desc_.seed, static_cast<std::int64_t>(t_), desc_.scroll).frame;
    f.seq_no = t_;
    f.timestamp_ms = frame_time_ms(t_, desc_.fps);
    f.source_id = desc_.source_id;
    ++t_;
    return f;
  }
  bool finished() const override { return false; }
  double fps() const override { return desc_.fps; }

 private:
  SourceDescriptor desc_;
  std::uint64_t t_ = 0;
};

/// Frames uploaded by a client. Holds at most `capacity` frames; when full
/// the oldest is dropped so consumers always see the freshest reality.
class PushStream final : public FrameStream {
 public:
  static constexpr std::size_t kDefaultCapacity = 4;

  explicit PushStream(const SourceDescriptor& d, std::size_t capacity = kDefaultCapacity)
      : desc_(d), capacity_(std::max<std::size_t>(1, capacity)) {}

  /// Enqueues a frame. Wrong token → permission-denied; seq_no not greater
  /// than the last accepted one, or a timestamp going backwards → conflict.
  void push(std::string_view token, Frame f) {
    if (!token_matches(token)) fail(ErrorCode::permission_denied, "bad ingest token");
    require(f.valid(), "pushed frame is empty");
    std::lock_guard lock(mutex_);
    if (closed_) fail(ErrorCode::conflict, "stream closed");
    if (last_seq_ && f.seq_no <= *last_seq_)
      fail(ErrorCode::conflict, "seq " + std::to_string(f.seq_no) + " not after " + std::to_string(*last_seq_));
    if (last_ts_ && f.timestamp_ms < *last_ts_) fail(ErrorCode::conflict, "timestamp went backwards");
    last_seq_ = f.seq_no;
    last_ts_ = f.timestamp_ms;
    f.source_id = desc_.source_id;
    queue_.push_back(std::move(f));
    while (queue_.size() > capacity_) {
      queue_.pop_front();
      ++dropped_;
    }
    cv_.notify_all();
  }

  std::optional<Frame> next(std::chrono::milliseconds wait = std::chrono::milliseconds(0)) override {
    std::unique_lock lock(mutex_);
    cv_.wait_for(lock, wait, [&] { return !queue_.empty() || closed_; });
    if (queue_.empty()) return std::nullopt;
    Frame f = std::move(queue_.front());
    queue_.pop_front();
    return f;
  }

  void close() {
    std::lock_guard lock(mutex_);
    closed_ = true;
    cv_.notify_all();
  }
  bool finished() const override {
    std::lock_guard lock(mutex_);
    return closed_ && queue_.empty();
  }
  double fps() const override { return desc_.fps; }
  std::size_t size() const {
    std::lock_guard lock(mutex_);
    return queue_.size();
  }
  std::size_t dropped() const {
    std::lock_guard lock(mutex_);
    return dropped_;
  }
  bool token_matches(std::string_view token) const {
    return token.size() == desc_.token.size() && sodium_memcmp(token.data(), desc_.token.data(), token.size()) == 0;
  }

 private:
  SourceDescriptor desc_;
  std::size_t capacity_;
  mutable std::mutex mutex_;
  std::condition_variable cv_;
  std::deque<Frame> queue_;
  std::optional<std::uint64_t> last_seq_;
  std::optional<std::int64_t> last_ts_;
  std::size_t dropped_ = 0;
  bool closed_ = false;
};

/// Opens a descriptor. Missing replay directory → not-found.
inline std::unique_ptr<FrameStream> open(const SourceDescriptor& d) {
  validate(d);
  switch (d.kind) {
    case SourceKind::replay: return std::make_unique<ReplayStream>(d);
    case SourceKind::synthetic: return std::make_unique<SyntheticStream>(d);
    case SourceKind::push: return std::make_unique<PushStream>(d);
  }
  fail(ErrorCode::invalid_argument, "unknown source kind");
}

}  // namespace rerender::sources
