#pragma once

// Text hook: find text lines, read their characters with coordinates, and
// expose the whole thing behind a detector adapter so external OCR engines
// can replace the built-in bitmap-font reader.

#include <poll.h>
#include <signal.h>
#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <memory>
#include <mutex>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "rerender/codec.hpp"
#include "rerender/error.hpp"
#include "rerender/font.hpp"
#include "rerender/image.hpp"

extern char** environ;

namespace rerender::text {

struct CharBox {
  char c = '?';
  Region box;

  friend bool operator==(const CharBox&, const CharBox&) = default;
};

struct TextBox {
  Region region;
  std::string text;
  std::vector<CharBox> char_boxes;  // one per character of `text`
  std::string detector_id;

  friend bool operator==(const TextBox&, const TextBox&) = default;
};

// ---------------------------------------------------------------------------
// Binarization and connected components

/// Otsu threshold over a 256-bin histogram of rounded values. Pixels with
/// value > threshold form the bright class. nullopt for single-level images.
inline std::optional<double> otsu_threshold(const GrayImage& g) {
  std::array<double, 256> hist{};
  for (double v : g.values) hist[static_cast<std::size_t>(std::clamp(std::lround(v), 0L, 255L))] += 1.0;
  const double total = static_cast<double>(g.values.size());
  double sum_all = 0.0;
  for (int i = 0; i < 256; ++i) sum_all += i * hist[static_cast<std::size_t>(i)];
  double w0 = 0.0, sum0 = 0.0, best = -1.0;
  int best_t = -1;
  for (int t = 0; t < 255; ++t) {
    w0 += hist[static_cast<std::size_t>(t)];
    sum0 += t * hist[static_cast<std::size_t>(t)];
    const double w1 = total - w0;
    if (w0 == 0.0 || w1 == 0.0) continue;
    const double m0 = sum0 / w0, m1 = (sum_all - sum0) / w1;
    const double between = w0 * w1 * (m0 - m1) * (m0 - m1);
    if (between > best) {
      best = between;
      best_t = t;
    }
  }
  if (best_t < 0) return std::nullopt;
  return best_t + 0.5;
}

struct Component {
  Region box;
  int label = 0;
  int pixels = 0;
};

struct Labeling {
  int width = 0;
  int height = 0;
  std::vector<int> labels;  // 0 = background, otherwise component label
  std::vector<Component> components;
};

/// 8-connected labeling of a binary mask (non-zero = foreground).
inline Labeling label_components(const std::vector<std::uint8_t>& mask, int width, int height) {
  Labeling out;
  out.width = width;
  out.height = height;
  out.labels.assign(mask.size(), 0);
  std::vector<int> stack;
  int next = 1;
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const std::size_t idx = static_cast<std::size_t>(y) * width + x;
      if (!mask[idx] || out.labels[idx]) continue;
      Component c;
      c.label = next;
      int x0 = x, y0 = y, x1 = x, y1 = y;
      stack.clear();
      stack.push_back(static_cast<int>(idx));
      out.labels[idx] = next;
      while (!stack.empty()) {
        const int p = stack.back();
        stack.pop_back();
        const int px = p % width, py = p / width;
        ++c.pixels;
        x0 = std::min(x0, px);
        x1 = std::max(x1, px);
        y0 = std::min(y0, py);
        y1 = std::max(y1, py);
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) {
            const int nx = px + dx, ny = py + dy;
            if (nx < 0 || ny < 0 || nx >= width || ny >= height) continue;
            const std::size_t n = static_cast<std::size_t>(ny) * width + nx;
            if (mask[n] && !out.labels[n]) {
              out.labels[n] = next;
              stack.push_back(static_cast<int>(n));
            }
          }
        }
      }
      c.box = Region{x0, y0, x1 - x0 + 1, y1 - y0 + 1};
      out.components.push_back(c);
      ++next;
    }
  }
  return out;
}

namespace detail {

inline constexpr int kMinGlyphPx = 4;
inline constexpr int kMaxGlyphPx = 64;
inline constexpr double kMaxAspect = 10.0;

// A character cell: one or more components stacked in shared columns.
struct Cell {
  Region box;
  std::vector<int> labels;
  int stroke = 1;  // thinnest horizontal or vertical ink run, ~ one font unit
};

inline int min_run(const Labeling& lab, const Region& box, int label) {
  int best = std::max(box.w, box.h);
  auto is_ink = [&](int x, int y) { return lab.labels[static_cast<std::size_t>(y) * lab.width + x] == label; };
  for (int y = box.y; y < box.bottom(); ++y) {
    int run = 0;
    for (int x = box.x; x <= box.right(); ++x) {
      if (x < box.right() && is_ink(x, y)) {
        ++run;
      } else if (run) {
        best = std::min(best, run);
        run = 0;
      }
    }
  }
  for (int x = box.x; x < box.right(); ++x) {
    int run = 0;
    for (int y = box.y; y <= box.bottom(); ++y) {
      if (y < box.bottom() && is_ink(x, y)) {
        ++run;
      } else if (run) {
        best = std::min(best, run);
        run = 0;
      }
    }
  }
  return best;
}

inline Region bbox_union(const Region& a, const Region& b) {
  const int x0 = std::min(a.x, b.x), y0 = std::min(a.y, b.y);
  const int x1 = std::max(a.right(), b.right()), y1 = std::max(a.bottom(), b.bottom());
  return Region{x0, y0, x1 - x0, y1 - y0};
}

inline int vertical_gap(const Region& a, const Region& b) {
  return std::max(a.y, b.y) - std::min(a.bottom(), b.bottom());  // negative when overlapping
}

inline bool columns_overlap(const Region& a, const Region& b) { return a.x < b.right() && b.x < a.right(); }

// Dots (i, j, !, ?) join the body they sit on: shared columns, the dot at
// most a third of the body's height, separated by no more than its height.
inline bool is_stacked_part(const Region& a, const Region& b) {
  if (!columns_overlap(a, b)) return false;
  const int small = std::min(a.h, b.h), big = std::max(a.h, b.h);
  if (3 * small > big + 1) return false;
  const int gap = vertical_gap(a, b);
  return gap >= 0 && gap <= small;
}

inline std::vector<Cell> merge_cells(const Labeling& lab, const std::vector<Component>& comps) {
  std::vector<int> parent(comps.size());
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&parent](int i) {
    while (parent[static_cast<std::size_t>(i)] != i) i = parent[static_cast<std::size_t>(i)] =
                                                        parent[static_cast<std::size_t>(parent[static_cast<std::size_t>(i)])];
    return i;
  };
  for (std::size_t i = 0; i < comps.size(); ++i)
    for (std::size_t j = i + 1; j < comps.size(); ++j)
      if (is_stacked_part(comps[i].box, comps[j].box))
        parent[static_cast<std::size_t>(find(static_cast<int>(i)))] = find(static_cast<int>(j));
  std::vector<Cell> cells;
  std::vector<int> cell_of(comps.size(), -1);
  for (std::size_t i = 0; i < comps.size(); ++i) {
    const int root = find(static_cast<int>(i));
    auto& slot = cell_of[static_cast<std::size_t>(root)];
    if (slot < 0) {
      slot = static_cast<int>(cells.size());
      cells.push_back(Cell{comps[i].box, {comps[i].label}, min_run(lab, comps[i].box, comps[i].label)});
    } else {
      auto& cell = cells[static_cast<std::size_t>(slot)];
      cell.box = bbox_union(cell.box, comps[i].box);
      cell.labels.push_back(comps[i].label);
      cell.stroke = std::min(cell.stroke, min_run(lab, comps[i].box, comps[i].label));
    }
  }
  return cells;
}

inline double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t mid = v.size() / 2;
  return v.size() % 2 ? v[mid] : 0.5 * (v[mid - 1] + v[mid]);
}

// Greedy horizontal grouping of cells into lines. Cells join the group whose
// right edge is nearest on the left, provided they overlap vertically by at
// least half the smaller height and the gap is within 1.5 x the median cell
// width. Runs of narrow glyphs (i, l, punctuation) would break
// lines at word spaces under that rule alone, so six stroke widths are
// always allowed too.
inline std::vector<std::vector<int>> group_lines(const std::vector<Cell>& cells) {
  std::vector<int> order(cells.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    const auto& ra = cells[static_cast<std::size_t>(a)].box;
    const auto& rb = cells[static_cast<std::size_t>(b)].box;
    return std::tie(ra.x, ra.y) < std::tie(rb.x, rb.y);
  });
  std::vector<double> widths;
  for (const auto& c : cells) widths.push_back(c.box.w);
  const double max_gap = 1.5 * median(widths);

  struct Group {
    Region box;
    std::vector<int> members;
    int stroke;
  };
  std::vector<Group> groups;
  for (int idx : order) {
    const Region& r = cells[static_cast<std::size_t>(idx)].box;
    int best = -1;
    int best_gap = 0;
    bool best_overlaps = false;
    for (std::size_t g = 0; g < groups.size(); ++g) {
      const Region& gb = groups[g].box;
      const int gap = r.x - gb.right();
      const int stroke = std::max(groups[g].stroke, cells[static_cast<std::size_t>(idx)].stroke);
      if (gap > std::max(max_gap, 6.0 * stroke)) continue;
      const int overlap = -vertical_gap(r, gb);
      const bool overlaps = overlap >= 0 && 2 * overlap >= std::min(r.h, gb.h);
      // Punctuation pairs like ".-" or "'," share no rows; let them chain
      // sideways across a small vertical gap.
      if (!overlaps && !(gap >= 0 && -overlap <= 3 * stroke)) continue;
      if (best < 0 || (overlaps && !best_overlaps) || (overlaps == best_overlaps && gap < best_gap)) {
        best = static_cast<int>(g);
        best_gap = gap;
        best_overlaps = overlaps;
      }
    }
    if (best < 0) {
      groups.push_back(Group{r, {idx}, cells[static_cast<std::size_t>(idx)].stroke});
    } else {
      auto& g = groups[static_cast<std::size_t>(best)];
      g.box = bbox_union(g.box, r);
      g.members.push_back(idx);
      g.stroke = std::min(g.stroke, cells[static_cast<std::size_t>(idx)].stroke);
    }
  }
  std::sort(groups.begin(), groups.end(),
            [](const Group& a, const Group& b) { return std::tie(a.box.y, a.box.x) < std::tie(b.box.y, b.box.x); });
  std::vector<std::vector<int>> lines;
  for (auto& g : groups) {
    std::sort(g.members.begin(), g.members.end(), [&](int a, int b) {
      return cells[static_cast<std::size_t>(a)].box.x < cells[static_cast<std::size_t>(b)].box.x;
    });
    lines.push_back(std::move(g.members));
  }
  return lines;
}

inline std::vector<std::uint8_t> polarity_mask(const GrayImage& g, double threshold, bool bright_ink) {
  std::vector<std::uint8_t> m(g.values.size());
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = (g.values[i] > threshold) == bright_ink ? 1 : 0;
  return m;
}

inline bool plausible_glyph(const Region& r) {
  const int big = std::max(r.w, r.h), small = std::min(r.w, r.h);
  return big <= kMaxGlyphPx && big <= kMaxAspect * small;
}

inline int glyph_sized(const Labeling& l) {
  int n = 0;
  for (const auto& c : l.components) {
    const int big = std::max(c.box.w, c.box.h);
    if (big >= kMinGlyphPx && big <= kMaxGlyphPx) ++n;
  }
  return n;
}

struct Recognition {
  char c = '?';
  double score = 0.0;
};

// Classify one cell's ink mask against the glyph set. Each candidate glyph
// sees the cell resampled to its own ink box, scored by NCC minus an aspect
// ratio penalty. Solid cells have no variance and are matched by aspect.
inline Recognition classify_cell(const GrayImage& ink) {
  const double aspect = static_cast<double>(ink.width) / ink.height;
  const bool solid = std::all_of(ink.values.begin(), ink.values.end(), [](double v) { return v > 0.0; });
  Recognition best;
  best.score = -2.0;
  double best_penalty = 0.0;
  for (const auto& g : font::glyphs()) {
    if (g.solid != solid) continue;
    const double penalty = std::abs(std::log(aspect * g.ink.height / g.ink.width));
    double score;
    if (solid) {
      score = 1.0 - penalty;
    } else {
      const GrayImage sampled = resize_bilinear(ink, g.ink.width, g.ink.height);
      score = ncc_score(sampled, g.ink, sampled.bounds()) - 0.5 * penalty;
    }
    if (score > best.score || (score == best.score && penalty < best_penalty)) {
      best = Recognition{g.ch, score};
      best_penalty = penalty;
    }
  }
  if (best.score < 0.5) best.c = '?';
  return best;
}

struct LineRead {
  std::string text;
  std::vector<CharBox> boxes;
  double score = 0.0;
  int known = 0;
};

// Reads the cells of `lab` (coordinates relative to `origin`) as text.
inline LineRead read_cells(const Labeling& lab, const Region& origin) {
  std::vector<Component> comps;
  for (const auto& c : lab.components)
    if (plausible_glyph(c.box)) comps.push_back(c);
  const auto cells = merge_cells(lab, comps);
  const auto lines = group_lines(cells);
  LineRead out;
  for (std::size_t li = 0; li < lines.size(); ++li) {
    const auto& line = lines[li];
    int line_top = cells[static_cast<std::size_t>(line.front())].box.y, line_bottom = 0, unit = 0;
    for (int idx : line) {
      const auto& c = cells[static_cast<std::size_t>(idx)];
      line_top = std::min(line_top, c.box.y);
      line_bottom = std::max(line_bottom, c.box.bottom());
      unit = unit ? std::min(unit, c.stroke) : c.stroke;
    }
    if (li > 0) {
      const auto& first = cells[static_cast<std::size_t>(line.front())].box;
      out.text.push_back(' ');
      out.boxes.push_back(CharBox{' ', Region{origin.x + first.x, origin.y + line_top, 1, line_bottom - line_top}});
    }
    // Letters sit one stroke apart, words five.
    const int space_gap = 3 * unit;
    for (std::size_t k = 0; k < line.size(); ++k) {
      const Cell& cell = cells[static_cast<std::size_t>(line[k])];
      if (k > 0) {
        const auto& prev = cells[static_cast<std::size_t>(line[k - 1])].box;
        const int gap = cell.box.x - prev.right();
        if (gap >= space_gap) {
          out.text.push_back(' ');
          out.boxes.push_back(CharBox{
              ' ', Region{origin.x + prev.right(), origin.y + line_top, gap, line_bottom - line_top}});
        }
      }
      GrayImage ink(cell.box.w, cell.box.h);
      for (int y = 0; y < cell.box.h; ++y) {
        for (int x = 0; x < cell.box.w; ++x) {
          const int l = lab.labels[static_cast<std::size_t>(cell.box.y + y) * lab.width + cell.box.x + x];
          if (l && std::find(cell.labels.begin(), cell.labels.end(), l) != cell.labels.end()) ink.at(x, y) = 255.0;
        }
      }
      const auto rec = classify_cell(ink);
      out.text.push_back(rec.c);
      out.boxes.push_back(CharBox{rec.c, Region{origin.x + cell.box.x, origin.y + cell.box.y, cell.box.w, cell.box.h}});
      out.score += std::max(0.0, rec.score);
      if (rec.c != '?') ++out.known;
    }
  }
  return out;
}

inline constexpr double kMinContrast = 24.0;

}  // namespace detail

/// Built-in text line detector. Returns line regions sorted top-to-bottom,
/// then left-to-right.
inline std::vector<Region> detect_text_regions(const GrayImage& g) {
  const auto [mn, mx] = std::minmax_element(g.values.begin(), g.values.end());
  if (*mx - *mn < detail::kMinContrast) return {};
  const auto t = otsu_threshold(g);
  if (!t) return {};
  auto dark = label_components(detail::polarity_mask(g, *t, false), g.width, g.height);
  auto bright = label_components(detail::polarity_mask(g, *t, true), g.width, g.height);
  const Labeling& lab = detail::glyph_sized(bright) > detail::glyph_sized(dark) ? bright : dark;

  std::vector<Component> comps;
  for (const auto& c : lab.components)
    if (detail::plausible_glyph(c.box)) comps.push_back(c);
  const auto cells = detail::merge_cells(lab, comps);
  std::vector<Region> out;
  for (const auto& line : detail::group_lines(cells)) {
    Region box = cells[static_cast<std::size_t>(line.front())].box;
    for (int idx : line) box = detail::bbox_union(box, cells[static_cast<std::size_t>(idx)].box);
    out.push_back(box);
  }
  std::sort(out.begin(), out.end(), [](const Region& a, const Region& b) { return std::tie(a.y, a.x) < std::tie(b.y, b.x); });
  return out;
}

/// Reads the characters inside `r`. The binarization threshold comes from `r`
/// plus a margin of context, so a region hugging a solid glyph still sees
/// both ink and paper. Paper is whichever class dominates that margin (or
/// the region's own border when there is no margin); on a tie both ink
/// polarities are read and the one with more recognized characters wins.
inline TextBox extract_chars(const GrayImage& g, const Region& r) {
  require(!r.empty() && r.within(g.width, g.height), "text region outside image");
  TextBox box;
  box.region = r;
  box.detector_id = "builtin-bitmap";
  const int margin = std::max(2, std::min(r.w, r.h) / 2);
  const Region context = *clip(Region{r.x - margin, r.y - margin, r.w + 2 * margin, r.h + 2 * margin}, g.width, g.height);
  const GrayImage around = crop(g, context);
  const auto [mn, mx] = std::minmax_element(around.values.begin(), around.values.end());
  if (*mx - *mn < detail::kMinContrast) return box;
  const auto t = otsu_threshold(around);
  if (!t) return box;

  long bright = 0, dark = 0;
  auto vote = [&](int x, int y) { (g.at(x, y) > *t ? bright : dark) += 1; };
  if (context != r) {
    for (int y = context.y; y < context.bottom(); ++y)
      for (int x = context.x; x < context.right(); ++x)
        if (!r.contains(x, y)) vote(x, y);
  } else {
    for (int x = r.x; x < r.right(); ++x) vote(x, r.y), vote(x, r.bottom() - 1);
    for (int y = r.y + 1; y < r.bottom() - 1; ++y) vote(r.x, y), vote(r.right() - 1, y);
  }
  std::vector<bool> polarities;
  if (bright >= dark) polarities.push_back(false);
  if (dark >= bright) polarities.push_back(true);

  const GrayImage sub = crop(g, r);
  std::optional<detail::LineRead> best;
  for (bool bright_ink : polarities) {
    const auto lab = label_components(detail::polarity_mask(sub, *t, bright_ink), sub.width, sub.height);
    auto read = detail::read_cells(lab, r);
    if (!best || read.known > best->known || (read.known == best->known && read.score > best->score))
      best = std::move(read);
  }
  box.text = std::move(best->text);
  box.char_boxes = std::move(best->boxes);
  return box;
}

// ---------------------------------------------------------------------------
// Adapters

struct DetectorCapabilities {
  bool regions = true;
  bool characters = true;
};

/// An engine that finds text in frames. Calls are serialized per instance
/// because external engines may not be reentrant.
class TextDetectorAdapter {
 public:
  virtual ~TextDetectorAdapter() = default;

  virtual std::string id() const = 0;
  virtual DetectorCapabilities capabilities() const = 0;

  std::vector<TextBox> scan(const Frame& f) {
    std::lock_guard lock(mutex_);
    return do_scan(f);
  }

 protected:
  // Engines without character capability may leave `text` empty; scan_text
  // then reads characters with the built-in reader.
  virtual std::vector<TextBox> do_scan(const Frame& f) = 0;

 private:
  std::mutex mutex_;
};

class BuiltinBitmapDetector final : public TextDetectorAdapter {
 public:
  std::string id() const override { return "builtin-bitmap"; }
  DetectorCapabilities capabilities() const override { return {true, true}; }

 protected:
  std::vector<TextBox> do_scan(const Frame& f) override {
    const GrayImage g = to_grayscale(f);
    std::vector<TextBox> out;
    for (const auto& r : detect_text_regions(g)) {
      auto tb = extract_chars(g, r);
      tb.detector_id = id();
      out.push_back(std::move(tb));
    }
    return out;
  }
};

// Wire format shared with external engines:
//   {"boxes":[{"x":..,"y":..,"w":..,"h":..,"text":"..","chars":[{"c":"A","x":..,"y":..,"w":..,"h":..}]}]}
inline nlohmann::json to_wire(const std::vector<TextBox>& boxes) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& b : boxes) {
    nlohmann::json chars = nlohmann::json::array();
    for (const auto& c : b.char_boxes)
      chars.push_back({{"c", std::string(1, c.c)}, {"x", c.box.x}, {"y", c.box.y}, {"w", c.box.w}, {"h", c.box.h}});
    arr.push_back({{"x", b.region.x},
                   {"y", b.region.y},
                   {"w", b.region.w},
                   {"h", b.region.h},
                   {"text", b.text},
                   {"chars", std::move(chars)}});
  }
  return nlohmann::json{{"boxes", std::move(arr)}};
}

inline std::vector<TextBox> from_wire(const nlohmann::json& j, const std::string& detector_id) {
  std::vector<TextBox> out;
  for (const auto& b : j.at("boxes")) {
    TextBox tb;
    tb.region = Region{b.at("x").get<int>(), b.at("y").get<int>(), b.at("w").get<int>(), b.at("h").get<int>()};
    tb.text = b.value("text", std::string());
    tb.detector_id = detector_id;
    if (b.contains("chars")) {
      for (const auto& c : b.at("chars")) {
        const auto s = c.at("c").get<std::string>();
        tb.char_boxes.push_back(CharBox{s.empty() ? '?' : s[0], Region{c.at("x").get<int>(), c.at("y").get<int>(),
                                                                     c.at("w").get<int>(), c.at("h").get<int>()}});
      }
    }
    out.push_back(std::move(tb));
  }
  return out;
}

namespace detail {

inline std::string run_process(const std::vector<std::string>& argv, const Bytes& input,
                               std::chrono::milliseconds timeout) {
  require(!argv.empty(), "external detector command is empty");
  // A child that exits without reading stdin must not kill us with SIGPIPE.
  static const bool sigpipe_ignored = (::signal(SIGPIPE, SIG_IGN), true);
  (void)sigpipe_ignored;
  int in_pipe[2], out_pipe[2];
  if (pipe(in_pipe) != 0) fail(ErrorCode::hook_unavailable, "pipe() failed");
  if (pipe(out_pipe) != 0) {
    close(in_pipe[0]);
    close(in_pipe[1]);
    fail(ErrorCode::hook_unavailable, "pipe() failed");
  }
  posix_spawn_file_actions_t actions;
  posix_spawn_file_actions_init(&actions);
  posix_spawn_file_actions_adddup2(&actions, in_pipe[0], STDIN_FILENO);
  posix_spawn_file_actions_adddup2(&actions, out_pipe[1], STDOUT_FILENO);
  posix_spawn_file_actions_addclose(&actions, in_pipe[1]);
  posix_spawn_file_actions_addclose(&actions, out_pipe[0]);
  std::vector<char*> args;
  for (const auto& a : argv) args.push_back(const_cast<char*>(a.c_str()));
  args.push_back(nullptr);
  pid_t pid = 0;
  const int rc = posix_spawnp(&pid, args[0], &actions, nullptr, args.data(), environ);
  posix_spawn_file_actions_destroy(&actions);
  close(in_pipe[0]);
  close(out_pipe[1]);
  if (rc != 0) {
    close(in_pipe[1]);
    close(out_pipe[0]);
    fail(ErrorCode::hook_unavailable, "cannot start external detector " + argv[0]);
  }

  std::string output;
  std::size_t written = 0;
  int write_fd = in_pipe[1];
  const auto deadline = std::chrono::steady_clock::now() + timeout;
  bool timed_out = false;
  char buf[4096];
  for (;;) {
    pollfd fds[2];
    nfds_t n = 0;
    fds[n++] = pollfd{out_pipe[0], POLLIN, 0};
    if (write_fd >= 0) fds[n++] = pollfd{write_fd, POLLOUT, 0};
    const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
    if (left.count() <= 0) {
      timed_out = true;
      break;
    }
    if (poll(fds, n, static_cast<int>(left.count())) < 0) break;
    if (n > 1 && (fds[1].revents & (POLLOUT | POLLERR | POLLHUP))) {
      const ssize_t w = (fds[1].revents & POLLOUT) ? ::write(write_fd, input.data() + written, input.size() - written) : -1;
      if (w > 0) written += static_cast<std::size_t>(w);
      if (w <= 0 || written == input.size()) {
        close(write_fd);
        write_fd = -1;
      }
    }
    if (fds[0].revents & (POLLIN | POLLHUP | POLLERR)) {
      const ssize_t r = ::read(out_pipe[0], buf, sizeof buf);
      if (r <= 0) break;
      output.append(buf, static_cast<std::size_t>(r));
    }
  }
  if (write_fd >= 0) close(write_fd);
  close(out_pipe[0]);
  if (timed_out) kill(pid, SIGKILL);
  int status = 0;
  waitpid(pid, &status, 0);
  if (timed_out) fail(ErrorCode::hook_unavailable, "external detector timed out");
  if (!WIFEXITED(status) || WEXITSTATUS(status) != 0)
    fail(ErrorCode::hook_unavailable, "external detector exited with failure");
  return output;
}

}  // namespace detail

/// External engine speaking the wire contract: PNG bytes on stdin, JSON
/// TextBoxes on stdout.
class ExternalProcessDetector final : public TextDetectorAdapter {
 public:
  ExternalProcessDetector(std::string id, std::vector<std::string> argv, DetectorCapabilities caps = {true, true},
                          std::chrono::milliseconds timeout = std::chrono::milliseconds(5000))
      : id_(std::move(id)), argv_(std::move(argv)), caps_(caps), timeout_(timeout) {
    require(caps_.regions, "text detectors must at least provide regions");
  }

  std::string id() const override { return id_; }
  DetectorCapabilities capabilities() const override { return caps_; }

 protected:
  std::vector<TextBox> do_scan(const Frame& f) override {
    const std::string out = detail::run_process(argv_, encode_png(f), timeout_);
    try {
      return from_wire(nlohmann::json::parse(out), id_);
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::hook_unavailable, std::string("external detector returned malformed JSON: ") + e.what());
    }
  }

 private:
  std::string id_;
  std::vector<std::string> argv_;
  DetectorCapabilities caps_;
  std::chrono::milliseconds timeout_;
};

/// Runs `adapter` over `f`. Adapter failures surface as hook-unavailable;
/// regions without characters are read by the built-in reader. Boxes are
/// clipped to the frame and returned top-to-bottom, left-to-right.
inline std::vector<TextBox> scan_text(const Frame& f, TextDetectorAdapter& adapter) {
  std::vector<TextBox> raw;
  try {
    raw = adapter.scan(f);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::hook_unavailable) throw;
    fail(ErrorCode::hook_unavailable, adapter.id() + ": " + e.what());
  } catch (const std::exception& e) {
    fail(ErrorCode::hook_unavailable, adapter.id() + ": " + e.what());
  }
  std::optional<GrayImage> gray;
  std::vector<TextBox> out;
  for (auto& tb : raw) {
    auto clipped = clip(tb.region, f.width, f.height);
    if (!clipped) continue;
    const bool needs_chars = !adapter.capabilities().characters || tb.char_boxes.size() != tb.text.size();
    if (needs_chars || *clipped != tb.region) {
      if (!gray) gray = to_grayscale(f);
      auto read = extract_chars(*gray, *clipped);
      read.detector_id = tb.detector_id.empty() ? adapter.id() : tb.detector_id;
      out.push_back(std::move(read));
      continue;
    }
    std::erase_if(tb.char_boxes, [&](const CharBox& c) { return !tb.region.contains(c.box); });
    if (tb.char_boxes.size() != tb.text.size()) {
      tb.text.clear();
      for (const auto& c : tb.char_boxes) tb.text.push_back(c.c);
    }
    out.push_back(std::move(tb));
  }
  std::stable_sort(out.begin(), out.end(), [](const TextBox& a, const TextBox& b) {
    return std::tie(a.region.y, a.region.x) < std::tie(b.region.y, b.region.x);
  });
  return out;
}

}  // namespace rerender::text
