#pragma once

// Shared generators and brute-force oracles for the test suites. Oracles are
// written independently of the library code they check.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <unistd.h>
#include <string>
#include <utility>
#include <vector>

#include "rerender/image.hpp"
#include "rerender/random.hpp"

namespace testsupport {

using namespace rerender;

inline GrayImage random_gray(Rng& rng, int w, int h, double lo = 0.0, double hi = 255.0) {
  GrayImage g(w, h);
  for (auto& v : g.values) v = std::floor(rng.uniform(lo, hi));
  return g;
}

inline Frame random_frame(Rng& rng, int w, int h) {
  Frame f(w, h);
  for (auto& b : f.pixels) b = static_cast<std::uint8_t>(rng.uniform_int(0, 255));
  return f;
}

/// Smooth image: sum of a few low-frequency sinusoids.
inline GrayImage smooth_gray(Rng& rng, int w, int h) {
  const double a = rng.uniform(0.02, 0.08), b = rng.uniform(0.02, 0.08), p = rng.uniform(0.0, 6.28);
  GrayImage g(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) g.at(x, y) = 128.0 + 60.0 * std::sin(a * x + p) + 50.0 * std::cos(b * y);
  return g;
}

inline Region random_region(Rng& rng, int w, int h, int min_side = 1) {
  const int rw = static_cast<int>(rng.uniform_int(min_side, w));
  const int rh = static_cast<int>(rng.uniform_int(min_side, h));
  return Region{static_cast<int>(rng.uniform_int(0, w - rw)), static_cast<int>(rng.uniform_int(0, h - rh)), rw, rh};
}

/// Textbook NCC in long double, straight from the definition.
inline double oracle_ncc(const GrayImage& img, const GrayImage& t, int ox, int oy) {
  const long double n = static_cast<long double>(t.width) * t.height;
  long double si = 0, st = 0;
  for (int y = 0; y < t.height; ++y)
    for (int x = 0; x < t.width; ++x) {
      si += img.at(ox + x, oy + y);
      st += t.at(x, y);
    }
  const long double mi = si / n, mt = st / n;
  long double c = 0, vi = 0, vt = 0;
  for (int y = 0; y < t.height; ++y)
    for (int x = 0; x < t.width; ++x) {
      const long double a = img.at(ox + x, oy + y) - mi, b = t.at(x, y) - mt;
      c += a * b;
      vi += a * a;
      vt += b * b;
    }
  if (vi < 1e-12L || vt < 1e-12L) return 0.0;
  return static_cast<double>(c / std::sqrt(vi * vt));
}

/// Bilinear sample with pixel-center alignment.
inline double oracle_bilinear(const GrayImage& img, int new_w, int new_h, int ox, int oy) {
  auto coord = [](int i, int src, int dst) {
    const double s = (i + 0.5) * src / dst - 0.5;
    return std::min(std::max(s, 0.0), static_cast<double>(src - 1));
  };
  const double sx = coord(ox, img.width, new_w), sy = coord(oy, img.height, new_h);
  const int x0 = static_cast<int>(sx), y0 = static_cast<int>(sy);
  const int x1 = std::min(x0 + 1, img.width - 1), y1 = std::min(y0 + 1, img.height - 1);
  const double fx = sx - x0, fy = sy - y0;
  return (1 - fx) * (1 - fy) * img.at(x0, y0) + fx * (1 - fy) * img.at(x1, y0) + (1 - fx) * fy * img.at(x0, y1) +
         fx * fy * img.at(x1, y1);
}

/// Dense 2-D Gaussian convolution of `r`, clamping taps to the region border.
inline GrayImage oracle_blur(const GrayImage& img, const Region& r, double sigma) {
  GrayImage out = img;
  if (sigma == 0.0) return out;
  const int R = static_cast<int>(std::ceil(3 * sigma));
  double norm = 0;
  for (int j = -R; j <= R; ++j)
    for (int i = -R; i <= R; ++i) norm += std::exp(-(i * i + j * j) / (2 * sigma * sigma));
  for (int y = r.y; y < r.bottom(); ++y)
    for (int x = r.x; x < r.right(); ++x) {
      double acc = 0;
      for (int j = -R; j <= R; ++j)
        for (int i = -R; i <= R; ++i) {
          const int sx = std::clamp(x + i, r.x, r.right() - 1), sy = std::clamp(y + j, r.y, r.bottom() - 1);
          acc += std::exp(-(i * i + j * j) / (2 * sigma * sigma)) * img.at(sx, sy);
        }
      out.at(x, y) = acc / norm;
    }
  return out;
}

/// Straightforward O(n^2) greedy suppression.
struct OracleBox {
  Region r;
  double score;
  double scale;
};

inline double oracle_iou(const Region& a, const Region& b) {
  const int ix = std::max(0, std::min(a.x + a.w, b.x + b.w) - std::max(a.x, b.x));
  const int iy = std::max(0, std::min(a.y + a.h, b.y + b.h) - std::max(a.y, b.y));
  const double inter = static_cast<double>(ix) * iy;
  const double uni = static_cast<double>(a.w) * a.h + static_cast<double>(b.w) * b.h - inter;
  return uni > 0 ? inter / uni : 0.0;
}

inline std::vector<OracleBox> oracle_nms(std::vector<OracleBox> boxes, double thr) {
  std::vector<OracleBox> kept;
  std::vector<bool> used(boxes.size(), false);
  for (std::size_t round = 0; round < boxes.size(); ++round) {
    int best = -1;
    for (std::size_t i = 0; i < boxes.size(); ++i) {
      if (used[i]) continue;
      if (best < 0) {
        best = static_cast<int>(i);
        continue;
      }
      const auto& a = boxes[i];
      const auto& b = boxes[static_cast<std::size_t>(best)];
      const bool better = a.score > b.score ||
                          (a.score == b.score && (a.r.y < b.r.y || (a.r.y == b.r.y && (a.r.x < b.r.x ||
                                                                    (a.r.x == b.r.x && a.scale < b.scale)))));
      if (better) best = static_cast<int>(i);
    }
    used[static_cast<std::size_t>(best)] = true;
    bool ok = true;
    for (const auto& k : kept)
      if (oracle_iou(k.r, boxes[static_cast<std::size_t>(best)].r) >= thr) ok = false;
    if (ok) kept.push_back(boxes[static_cast<std::size_t>(best)]);
  }
  return kept;
}

// Brute-force reference: every scale, every position with max(0, ncc) >= thr.
inline std::vector<OracleBox> oracle_windows(const GrayImage& frame, const GrayImage& tmpl, double thr) {
  std::vector<OracleBox> cands;
  for (int k = 0; k < 9; ++k) {
    const double s = 0.5 * std::pow(2.0, k / 4.0);
    const int w = std::max(1, static_cast<int>(std::lround(tmpl.width * s)));
    const int h = std::max(1, static_cast<int>(std::lround(tmpl.height * s)));
    if (w > frame.width || h > frame.height) continue;
    GrayImage scaled(w, h);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) scaled.at(x, y) = oracle_bilinear(tmpl, w, h, x, y);
    for (int y = 0; y + h <= frame.height; ++y)
      for (int x = 0; x + w <= frame.width; ++x) {
        const double v = std::max(0.0, oracle_ncc(frame, scaled, x, y));
        if (v >= thr - 1e-9) cands.push_back({Region{x, y, w, h}, v, s});
      }
  }
  return cands;
}

// Weighted-average reference in long double over an explicitly built ring.
inline Frame oracle_inpaint(const Frame& f, const Region& r) {
  std::vector<std::pair<int, int>> ring;
  for (int y = r.y - 1; y <= r.bottom(); ++y)
    for (int x = r.x - 1; x <= r.right(); ++x) {
      const bool on_ring = !r.contains(x, y);
      if (on_ring && x >= 0 && y >= 0 && x < f.width && y < f.height) ring.emplace_back(x, y);
    }
  Frame out = f;
  for (int y = r.y; y < r.bottom(); ++y)
    for (int x = r.x; x < r.right(); ++x)
      for (int c = 0; c < 3; ++c) {
        long double acc = 0, ws = 0;
        for (auto [rx, ry] : ring) {
          const long double w = 1.0L / std::sqrt(static_cast<long double>((x - rx) * (x - rx) + (y - ry) * (y - ry)));
          acc += w * f.at(rx, ry)[c];
          ws += w;
        }
        out.at(x, y)[c] = static_cast<std::uint8_t>(std::clamp<long>(std::lround(static_cast<double>(acc / ws)), 0, 255));
      }
  return out;
}

/// Temporary directory removed on scope exit.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "rerender") {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            (tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace testsupport
