#pragma once

// Embedded 8x8 bitmap font. Every glyph is either one 8-connected shape or a
// body with a one-unit dot stacked in the same columns (i, j, !, ?), so
// connected component segmentation recovers exactly one cell per character.
// Lines should be pitched at least 12 units apart. Caps and
// ascenders use rows 0-6, x-height rows 2-6, descenders reach row 7.

#include <array>
#include <string>
#include <string_view>
#include <vector>

#include "rerender/image.hpp"

namespace rerender::font {

struct GlyphDef {
  char ch;
  std::array<const char*, 8> rows;
};

// clang-format off
inline constexpr GlyphDef kGlyphDefs[] = {
  {'A', {".###.", "#...#", "#...#", "#####", "#...#", "#...#", "#...#", ""}},
  {'B', {"####.", "#...#", "#...#", "####.", "#...#", "#...#", "####.", ""}},
  {'C', {".###.", "#...#", "#....", "#....", "#....", "#...#", ".###.", ""}},
  {'D', {"###..", "#..#.", "#...#", "#...#", "#...#", "#..#.", "###..", ""}},
  {'E', {"#####", "#....", "#....", "####.", "#....", "#....", "#####", ""}},
  {'F', {"#####", "#....", "#....", "####.", "#....", "#....", "#....", ""}},
  {'G', {".###.", "#...#", "#....", "#.###", "#...#", "#...#", ".###.", ""}},
  {'H', {"#...#", "#...#", "#...#", "#####", "#...#", "#...#", "#...#", ""}},
  {'I', {"###", ".#.", ".#.", ".#.", ".#.", ".#.", "###", ""}},
  {'J', {"..###", "...#.", "...#.", "...#.", "#..#.", "#..#.", ".##..", ""}},
  {'K', {"#...#", "#..#.", "#.#..", "##...", "#.#..", "#..#.", "#...#", ""}},
  {'L', {"#....", "#....", "#....", "#....", "#....", "#....", "#####", ""}},
  {'M', {"#...#", "##.##", "#.#.#", "#.#.#", "#...#", "#...#", "#...#", ""}},
  {'N', {"#...#", "##..#", "#.#.#", "#..##", "#...#", "#...#", "#...#", ""}},
  {'O', {".###.", "#...#", "#...#", "#...#", "#...#", "#...#", ".###.", ""}},
  {'P', {"####.", "#...#", "#...#", "####.", "#....", "#....", "#....", ""}},
  {'Q', {".###.", "#...#", "#...#", "#...#", "#.#.#", "#..#.", ".##.#", ""}},
  {'R', {"####.", "#...#", "#...#", "####.", "#.#..", "#..#.", "#...#", ""}},
  {'S', {".####", "#....", "#....", ".###.", "....#", "....#", "####.", ""}},
  {'T', {"#####", "..#..", "..#..", "..#..", "..#..", "..#..", "..#..", ""}},
  {'U', {"#...#", "#...#", "#...#", "#...#", "#...#", "#...#", ".###.", ""}},
  {'V', {"#...#", "#...#", "#...#", "#...#", "#...#", ".#.#.", "..#..", ""}},
  {'W', {"#...#", "#...#", "#...#", "#.#.#", "#.#.#", "##.##", "#...#", ""}},
  {'X', {"#...#", "#...#", ".#.#.", "..#..", ".#.#.", "#...#", "#...#", ""}},
  {'Y', {"#...#", "#...#", ".#.#.", "..#..", "..#..", "..#..", "..#..", ""}},
  {'Z', {"#####", "....#", "...#.", "..#..", ".#...", "#....", "#####", ""}},

  {'a', {"", "", ".###.", "....#", ".####", "#...#", ".####", ""}},
  {'b', {"#....", "#....", "####.", "#...#", "#...#", "#...#", "####.", ""}},
  {'c', {"", "", ".###", "#...", "#...", "#...", ".###", ""}},
  {'d', {"....#", "....#", ".####", "#...#", "#...#", "#...#", ".####", ""}},
  {'e', {"", "", ".###.", "#...#", "#####", "#....", ".###.", ""}},
  {'f', {"..##", ".#..", "####", ".#..", ".#..", ".#..", ".#..", ""}},
  {'g', {"", "", ".####", "#...#", "#...#", ".####", "....#", ".###."}},
  {'h', {"#....", "#....", "####.", "#...#", "#...#", "#...#", "#...#", ""}},
  {'i', {".#.", "...", "##.", ".#.", ".#.", ".#.", "###", ""}},
  {'j', {"...#", "....", "..##", "...#", "...#", "...#", "#..#", ".##."}},
  {'k', {"#....", "#....", "#..#.", "#.#..", "##...", "#.#..", "#..#.", ""}},
  {'l', {"##.", ".#.", ".#.", ".#.", ".#.", ".#.", "###", ""}},
  {'m', {"", "", "##.#.", "#.#.#", "#.#.#", "#.#.#", "#...#", ""}},
  {'n', {"", "", "####.", "#...#", "#...#", "#...#", "#...#", ""}},
  {'o', {"", "", ".###.", "#...#", "#...#", "#...#", ".###.", ""}},
  {'p', {"", "", "####.", "#...#", "#...#", "####.", "#....", "#...."}},
  {'q', {"", "", ".####", "#...#", "#...#", ".####", "....#", "....#"}},
  {'r', {"", "", "#.##.", "##..#", "#....", "#....", "#....", ""}},
  {'s', {"", "", ".####", "#....", ".###.", "....#", "####.", ""}},
  {'t', {".#...", ".#...", "####.", ".#...", ".#...", ".#..#", "..##.", ""}},
  {'u', {"", "", "#...#", "#...#", "#...#", "#..##", ".##.#", ""}},
  {'v', {"", "", "#...#", "#...#", "#...#", ".#.#.", "..#..", ""}},
  {'w', {"", "", "#...#", "#...#", "#.#.#", "#.#.#", ".#.#.", ""}},
  {'x', {"", "", "#...#", ".#.#.", "..#..", ".#.#.", "#...#", ""}},
  {'y', {"", "", "#...#", "#...#", "#...#", ".####", "....#", ".###."}},
  {'z', {"", "", "#####", "...#.", "..#..", ".#...", "#####", ""}},

  {'0', {".###.", "#...#", "#..##", "#.#.#", "##..#", "#...#", ".###.", ""}},
  {'1', {".#.", "##.", ".#.", ".#.", ".#.", ".#.", "###", ""}},
  {'2', {".###.", "#...#", "....#", "...#.", "..#..", ".#...", "#####", ""}},
  {'3', {"####.", "....#", "....#", ".###.", "....#", "....#", "####.", ""}},
  {'4', {"...#.", "..##.", ".#.#.", "#..#.", "#####", "...#.", "...#.", ""}},
  {'5', {"#####", "#....", "####.", "....#", "....#", "#...#", ".###.", ""}},
  {'6', {".###.", "#....", "#....", "####.", "#...#", "#...#", ".###.", ""}},
  {'7', {"#####", "....#", "...#.", "..#..", ".#...", ".#...", ".#...", ""}},
  {'8', {".###.", "#...#", "#...#", ".###.", "#...#", "#...#", ".###.", ""}},
  {'9', {".###.", "#...#", "#...#", ".####", "....#", "....#", ".###.", ""}},

  {'.', {"", "", "", "", "", "##", "##", ""}},
  {',', {"", "", "", "", "", ".#", ".#", "#."}},
  {'!', {"#", "#", "#", "#", "#", ".", "#", ""}},
  {'?', {".###.", "#...#", "....#", "...#.", "..#..", ".....", "..#..", ""}},
  {'-', {"", "", "", "####", "", "", "", ""}},
  {'\'', {"#", "#", "", "", "", "", "", ""}},
  {'(', {".#", "#.", "#.", "#.", "#.", "#.", ".#", ""}},
  {')', {"#.", ".#", ".#", ".#", ".#", ".#", "#.", ""}},
  {'/', {"....#", "....#", "...#.", "..#..", ".#...", "#....", "#....", ""}},
  {'+', {"", ".....", "..#..", "..#..", "#####", "..#..", "..#..", ""}},
};
// clang-format on

inline constexpr int kCell = 8;
inline constexpr int kSpaceAdvance = 4;  // font units
inline constexpr int kLetterGap = 1;     // font units between glyph ink boxes

/// Rasterized glyph: ink bitmap cropped to its bounding box inside the cell.
struct Glyph {
  char ch = '?';
  int ink_x = 0;  // ink box offset inside the 8x8 cell
  int ink_y = 0;
  GrayImage ink;  // 255 = ink, 0 = paper
  bool solid = false;
};

namespace detail {

inline std::vector<Glyph> build_glyphs() {
  std::vector<Glyph> out;
  for (const auto& def : kGlyphDefs) {
    int x0 = kCell, y0 = kCell, x1 = -1, y1 = -1;
    for (int y = 0; y < kCell; ++y) {
      const std::string_view row = def.rows[static_cast<std::size_t>(y)];
      for (int x = 0; x < static_cast<int>(row.size()); ++x) {
        if (row[static_cast<std::size_t>(x)] != '#') continue;
        x0 = std::min(x0, x);
        y0 = std::min(y0, y);
        x1 = std::max(x1, x);
        y1 = std::max(y1, y);
      }
    }
    Glyph g;
    g.ch = def.ch;
    g.ink_x = x0;
    g.ink_y = y0;
    g.ink = GrayImage(x1 - x0 + 1, y1 - y0 + 1);
    bool solid = true;
    for (int y = y0; y <= y1; ++y) {
      const std::string_view row = def.rows[static_cast<std::size_t>(y)];
      for (int x = x0; x <= x1; ++x) {
        const bool on = x < static_cast<int>(row.size()) && row[static_cast<std::size_t>(x)] == '#';
        g.ink.at(x - x0, y - y0) = on ? 255.0 : 0.0;
        solid = solid && on;
      }
    }
    g.solid = solid;
    out.push_back(std::move(g));
  }
  return out;
}

}  // namespace detail

inline const std::vector<Glyph>& glyphs() {
  static const std::vector<Glyph> table = detail::build_glyphs();
  return table;
}

inline const Glyph* find_glyph(char c) {
  for (const auto& g : glyphs())
    if (g.ch == c) return &g;
  return nullptr;
}

/// Characters the renderer and the built-in recognizer agree on (plus space).
inline std::string charset() {
  std::string s;
  for (const auto& g : glyphs()) s.push_back(g.ch);
  return s;
}

/// Ink extent of `text` at integer `scale`, in pixels (width, height of the line cell).
inline std::pair<int, int> measure(std::string_view text, int scale) {
  int cursor = 0;
  bool first = true;
  for (char c : text) {
    if (c == ' ') {
      cursor += kSpaceAdvance * scale;
      continue;
    }
    const Glyph* g = find_glyph(c);
    if (!g) g = find_glyph('?');
    if (!first) cursor += kLetterGap * scale;
    cursor += g->ink.width * scale;
    first = false;
  }
  return {cursor, kCell * scale};
}

/// Draws `text` with its line cell's top-left at (x, y). Glyphs are packed
/// proportionally: one font unit between ink boxes, four units per space.
/// Returns one box per character (spaces get the gap they occupy); boxes are
/// not clipped, pixels outside the frame are skipped.
inline std::vector<Region> draw_text(Frame& f, int x, int y, std::string_view text, int scale, Rgb color) {
  require(scale >= 1, "font scale must be at least 1");
  std::vector<Region> boxes;
  int cursor = x;
  bool first = true;
  for (char c : text) {
    if (c == ' ') {
      boxes.push_back(Region{cursor, y, kSpaceAdvance * scale, kCell * scale});
      cursor += kSpaceAdvance * scale;
      continue;
    }
    const Glyph* g = find_glyph(c);
    if (!g) g = find_glyph('?');
    if (!first) cursor += kLetterGap * scale;
    first = false;
    const int top = y + g->ink_y * scale;
    for (int gy = 0; gy < g->ink.height; ++gy) {
      for (int gx = 0; gx < g->ink.width; ++gx) {
        if (g->ink.at(gx, gy) == 0.0) continue;
        for (int dy = 0; dy < scale; ++dy) {
          for (int dx = 0; dx < scale; ++dx) {
            const int px = cursor + gx * scale + dx, py = top + gy * scale + dy;
            if (px >= 0 && py >= 0 && px < f.width && py < f.height) f.set(px, py, color);
          }
        }
      }
    }
    boxes.push_back(Region{cursor, top, g->ink.width * scale, g->ink.height * scale});
    cursor += g->ink.width * scale;
  }
  return boxes;
}

}  // namespace rerender::font
