#pragma once

// Pixel-level primitives shared by every hook and renderer. All functions are
// pure: identical inputs give bit-identical outputs.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "rerender/error.hpp"

namespace rerender {

struct Rgb {
  std::uint8_t r = 0;
  std::uint8_t g = 0;
  std::uint8_t b = 0;

  friend bool operator==(const Rgb&, const Rgb&) = default;
};

/// Axis-aligned pixel rectangle; (x, y) is the top-left corner.
struct Region {
  int x = 0;
  int y = 0;
  int w = 0;
  int h = 0;

  int right() const { return x + w; }   // exclusive
  int bottom() const { return y + h; }  // exclusive
  long long area() const { return static_cast<long long>(w) * h; }
  bool empty() const { return w <= 0 || h <= 0; }

  bool within(int width, int height) const {
    return w >= 1 && h >= 1 && x >= 0 && y >= 0 && right() <= width && bottom() <= height;
  }
  bool contains(int px, int py) const { return px >= x && py >= y && px < right() && py < bottom(); }
  bool contains(const Region& o) const {
    return o.x >= x && o.y >= y && o.right() <= right() && o.bottom() <= bottom();
  }

  friend bool operator==(const Region&, const Region&) = default;
};

inline Region intersect(const Region& a, const Region& b) {
  const int x0 = std::max(a.x, b.x);
  const int y0 = std::max(a.y, b.y);
  const int x1 = std::min(a.right(), b.right());
  const int y1 = std::min(a.bottom(), b.bottom());
  return Region{x0, y0, std::max(0, x1 - x0), std::max(0, y1 - y0)};
}

/// Clip to the [0,width)×[0,height) canvas; nullopt when nothing remains.
inline std::optional<Region> clip(const Region& r, int width, int height) {
  Region c = intersect(r, Region{0, 0, width, height});
  if (c.empty()) return std::nullopt;
  return c;
}

inline double iou(const Region& a, const Region& b) {
  const double inter = static_cast<double>(intersect(a, b).area());
  const double uni = static_cast<double>(a.area()) + static_cast<double>(b.area()) - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

/// One timestamped RGB image from a reality source.
struct Frame {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // row-major RGB, 3 bytes per pixel
  std::int64_t timestamp_ms = 0;
  std::string source_id;
  std::uint64_t seq_no = 0;

  Frame() = default;
  Frame(int w, int h, Rgb fill = {}) : width(w), height(h), pixels(checked_size(w, h)) {
    for (std::size_t i = 0; i < pixels.size(); i += 3) {
      pixels[i] = fill.r;
      pixels[i + 1] = fill.g;
      pixels[i + 2] = fill.b;
    }
  }
  Frame(int w, int h, std::vector<std::uint8_t> rgb) : width(w), height(h), pixels(std::move(rgb)) {
    require(pixels.size() == checked_size(w, h), "frame pixel buffer must hold width*height*3 bytes");
  }

  std::uint8_t* at(int x, int y) { return pixels.data() + (static_cast<std::size_t>(y) * width + x) * 3; }
  const std::uint8_t* at(int x, int y) const {
    return pixels.data() + (static_cast<std::size_t>(y) * width + x) * 3;
  }
  Rgb rgb(int x, int y) const {
    const auto* p = at(x, y);
    return Rgb{p[0], p[1], p[2]};
  }
  void set(int x, int y, Rgb c) {
    auto* p = at(x, y);
    p[0] = c.r;
    p[1] = c.g;
    p[2] = c.b;
  }
  bool valid() const {
    return width >= 1 && height >= 1 && pixels.size() == static_cast<std::size_t>(width) * height * 3;
  }
  Region bounds() const { return Region{0, 0, width, height}; }

 private:
  static std::size_t checked_size(int w, int h) {
    require(w >= 1 && h >= 1, "frame dimensions must be at least 1x1");
    return static_cast<std::size_t>(w) * static_cast<std::size_t>(h) * 3;
  }
};

/// Single-channel real-valued image; luminance in [0,255] by convention.
struct GrayImage {
  int width = 0;
  int height = 0;
  std::vector<double> values;

  GrayImage() = default;
  GrayImage(int w, int h, double fill = 0.0) : width(w), height(h) {
    require(w >= 1 && h >= 1, "image dimensions must be at least 1x1");
    values.assign(static_cast<std::size_t>(w) * h, fill);
  }
  GrayImage(int w, int h, std::vector<double> v) : width(w), height(h), values(std::move(v)) {
    require(w >= 1 && h >= 1, "image dimensions must be at least 1x1");
    require(values.size() == static_cast<std::size_t>(w) * h, "gray buffer must hold width*height values");
  }

  double& at(int x, int y) { return values[static_cast<std::size_t>(y) * width + x]; }
  double at(int x, int y) const { return values[static_cast<std::size_t>(y) * width + x]; }
  Region bounds() const { return Region{0, 0, width, height}; }
};

inline bool same_pixels(const Frame& a, const Frame& b) {
  return a.width == b.width && a.height == b.height && a.pixels == b.pixels;
}

// ---------------------------------------------------------------------------
// Color conversion and cropping

inline double luminance(Rgb c) { return 0.299 * c.r + 0.587 * c.g + 0.114 * c.b; }

inline GrayImage to_grayscale(const Frame& f) {
  GrayImage g(f.width, f.height);
  const std::size_t n = static_cast<std::size_t>(f.width) * f.height;
  for (std::size_t i = 0; i < n; ++i) {
    const auto* p = f.pixels.data() + i * 3;
    g.values[i] = 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2];
  }
  return g;
}

inline GrayImage crop(const GrayImage& img, const Region& r) {
  require(r.within(img.width, img.height), "crop region outside image");
  GrayImage out(r.w, r.h);
  for (int y = 0; y < r.h; ++y) {
    const double* src = img.values.data() + static_cast<std::size_t>(r.y + y) * img.width + r.x;
    std::copy(src, src + r.w, out.values.data() + static_cast<std::size_t>(y) * r.w);
  }
  return out;
}

inline Frame crop(const Frame& f, const Region& r) {
  require(r.within(f.width, f.height), "crop region outside frame");
  Frame out(r.w, r.h);
  for (int y = 0; y < r.h; ++y) {
    const auto* src = f.at(r.x, r.y + y);
    std::copy(src, src + static_cast<std::size_t>(r.w) * 3, out.at(0, y));
  }
  out.timestamp_ms = f.timestamp_ms;
  out.source_id = f.source_id;
  out.seq_no = f.seq_no;
  return out;
}

// ---------------------------------------------------------------------------
// Resampling

namespace detail {

// Pixel-center aligned sample taps along one axis.
struct Taps {
  std::vector<int> lo;
  std::vector<int> hi;
  std::vector<double> frac;
};

inline Taps bilinear_taps(int src, int dst) {
  Taps t;
  t.lo.resize(dst);
  t.hi.resize(dst);
  t.frac.resize(dst);
  const double scale = static_cast<double>(src) / dst;
  for (int i = 0; i < dst; ++i) {
    double s = (i + 0.5) * scale - 0.5;
    s = std::clamp(s, 0.0, static_cast<double>(src - 1));
    int lo = static_cast<int>(std::floor(s));
    int hi = std::min(lo + 1, src - 1);
    t.lo[i] = lo;
    t.hi[i] = hi;
    t.frac[i] = s - lo;
  }
  return t;
}

}  // namespace detail

/// Bilinear resize with pixel-center alignment: output pixel i samples the
/// source at (i + 0.5) * src/dst - 0.5, clamped to the source extent.
inline GrayImage resize_bilinear(const GrayImage& img, int new_w, int new_h) {
  require(new_w >= 1 && new_h >= 1, "resize target dimensions must be at least 1x1");
  if (new_w == img.width && new_h == img.height) return img;
  const auto tx = detail::bilinear_taps(img.width, new_w);
  const auto ty = detail::bilinear_taps(img.height, new_h);
  GrayImage out(new_w, new_h);
  for (int y = 0; y < new_h; ++y) {
    const double* r0 = img.values.data() + static_cast<std::size_t>(ty.lo[y]) * img.width;
    const double* r1 = img.values.data() + static_cast<std::size_t>(ty.hi[y]) * img.width;
    const double fy = ty.frac[y];
    double* dst = out.values.data() + static_cast<std::size_t>(y) * new_w;
    for (int x = 0; x < new_w; ++x) {
      const double fx = tx.frac[x];
      const double top = r0[tx.lo[x]] + (r0[tx.hi[x]] - r0[tx.lo[x]]) * fx;
      const double bot = r1[tx.lo[x]] + (r1[tx.hi[x]] - r1[tx.lo[x]]) * fx;
      dst[x] = top + (bot - top) * fy;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Correlation

/// Zero-normalized cross-correlation between `tmpl` and the window of `img`
/// at `at`. Windows with zero variance (on either side) score 0.
inline double ncc_score(const GrayImage& img, const GrayImage& tmpl, const Region& at) {
  require(at.w == tmpl.width && at.h == tmpl.height, "ncc region must match template dimensions");
  require(at.within(img.width, img.height), "ncc region outside image");
  const double n = static_cast<double>(at.area());

  double sum_i = 0.0, sum_t = 0.0;
  double min_i = img.at(at.x, at.y), max_i = min_i;
  double min_t = tmpl.values[0], max_t = min_t;
  for (int y = 0; y < at.h; ++y) {
    const double* ri = img.values.data() + static_cast<std::size_t>(at.y + y) * img.width + at.x;
    const double* rt = tmpl.values.data() + static_cast<std::size_t>(y) * tmpl.width;
    for (int x = 0; x < at.w; ++x) {
      sum_i += ri[x];
      sum_t += rt[x];
      min_i = std::min(min_i, ri[x]);
      max_i = std::max(max_i, ri[x]);
      min_t = std::min(min_t, rt[x]);
      max_t = std::max(max_t, rt[x]);
    }
  }
  if (min_i == max_i || min_t == max_t) return 0.0;

  const double mean_i = sum_i / n, mean_t = sum_t / n;
  double cross = 0.0, var_i = 0.0, var_t = 0.0;
  for (int y = 0; y < at.h; ++y) {
    const double* ri = img.values.data() + static_cast<std::size_t>(at.y + y) * img.width + at.x;
    const double* rt = tmpl.values.data() + static_cast<std::size_t>(y) * tmpl.width;
    for (int x = 0; x < at.w; ++x) {
      const double di = ri[x] - mean_i;
      const double dt = rt[x] - mean_t;
      cross += di * dt;
      var_i += di * di;
      var_t += dt * dt;
    }
  }
  if (var_i <= 0.0 || var_t <= 0.0) return 0.0;
  return std::clamp(cross / std::sqrt(var_i * var_t), -1.0, 1.0);
}

// ---------------------------------------------------------------------------
// Blur

inline std::vector<double> gaussian_kernel(double sigma) {
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
  double total = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    const double v = std::exp(-(static_cast<double>(i) * i) / (2.0 * sigma * sigma));
    k[static_cast<std::size_t>(i + radius)] = v;
    total += v;
  }
  for (auto& v : k) v /= total;
  return k;
}

namespace detail {

// Separable blur of the sub-rectangle `r` of a single plane; samples outside
// r are clamped to the region border. Returns the r.w*r.h blurred values.
inline std::vector<double> blur_plane(const double* plane, int stride, const Region& r, double sigma) {
  const auto k = gaussian_kernel(sigma);
  const int radius = static_cast<int>(k.size() / 2);
  std::vector<double> tmp(static_cast<std::size_t>(r.w) * r.h);
  std::vector<double> out(tmp.size());
  for (int y = 0; y < r.h; ++y) {
    const double* row = plane + static_cast<std::size_t>(r.y + y) * stride + r.x;
    for (int x = 0; x < r.w; ++x) {
      double acc = 0.0;
      for (int j = -radius; j <= radius; ++j) {
        const int sx = std::clamp(x + j, 0, r.w - 1);
        acc += k[static_cast<std::size_t>(j + radius)] * row[sx];
      }
      tmp[static_cast<std::size_t>(y) * r.w + x] = acc;
    }
  }
  for (int y = 0; y < r.h; ++y) {
    for (int x = 0; x < r.w; ++x) {
      double acc = 0.0;
      for (int j = -radius; j <= radius; ++j) {
        const int sy = std::clamp(y + j, 0, r.h - 1);
        acc += k[static_cast<std::size_t>(j + radius)] * tmp[static_cast<std::size_t>(sy) * r.w + x];
      }
      out[static_cast<std::size_t>(y) * r.w + x] = acc;
    }
  }
  return out;
}

inline std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
}

}  // namespace detail

/// Real-valued blur of region `r`; everything outside r is copied verbatim.
inline GrayImage gaussian_blur(const GrayImage& img, const Region& r, double sigma) {
  require(sigma >= 0.0, "blur sigma must be non-negative");
  require(r.within(img.width, img.height), "blur region outside image");
  if (sigma == 0.0) return img;
  GrayImage out = img;
  const auto blurred = detail::blur_plane(img.values.data(), img.width, r, sigma);
  for (int y = 0; y < r.h; ++y)
    for (int x = 0; x < r.w; ++x) out.at(r.x + x, r.y + y) = blurred[static_cast<std::size_t>(y) * r.w + x];
  return out;
}

/// Per-channel Gaussian blur of region `r` (kernel radius ceil(3*sigma)).
inline Frame gaussian_blur(const Frame& f, const Region& r, double sigma) {
  require(sigma >= 0.0, "blur sigma must be non-negative");
  require(r.within(f.width, f.height), "blur region outside frame");
  Frame out = f;
  if (sigma == 0.0) return out;
  std::vector<double> plane(static_cast<std::size_t>(r.w) * r.h);
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < r.h; ++y)
      for (int x = 0; x < r.w; ++x) plane[static_cast<std::size_t>(y) * r.w + x] = f.at(r.x + x, r.y + y)[c];
    const auto blurred = detail::blur_plane(plane.data(), r.w, Region{0, 0, r.w, r.h}, sigma);
    for (int y = 0; y < r.h; ++y)
      for (int x = 0; x < r.w; ++x)
        out.at(r.x + x, r.y + y)[c] = detail::to_byte(blurred[static_cast<std::size_t>(y) * r.w + x]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Edges

/// Sobel gradient magnitude (replicated borders).
inline GrayImage sobel_magnitude(const GrayImage& img) {
  GrayImage out(img.width, img.height);
  const int w = img.width, h = img.height;
  auto px = [&](int x, int y) { return img.at(std::clamp(x, 0, w - 1), std::clamp(y, 0, h - 1)); };
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double gx = (px(x + 1, y - 1) + 2 * px(x + 1, y) + px(x + 1, y + 1)) -
                        (px(x - 1, y - 1) + 2 * px(x - 1, y) + px(x - 1, y + 1));
      const double gy = (px(x - 1, y + 1) + 2 * px(x, y + 1) + px(x + 1, y + 1)) -
                        (px(x - 1, y - 1) + 2 * px(x, y - 1) + px(x + 1, y - 1));
      out.at(x, y) = std::sqrt(gx * gx + gy * gy);
    }
  }
  return out;
}

/// Binarized edge map: 255 where the Sobel magnitude reaches `threshold`.
inline GrayImage contourize(const GrayImage& img, double threshold) {
  require(threshold >= 0.0, "contour threshold must be non-negative");
  GrayImage out = sobel_magnitude(img);
  for (auto& v : out.values) v = v >= threshold ? 255.0 : 0.0;
  return out;
}

/// FNV-1a over dimensions and pixels; used for regression pinning and logs.
inline std::uint64_t pixel_hash(const Frame& f) {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](std::uint8_t b) {
    h ^= b;
    h *= 1099511628211ULL;
  };
  for (int shift = 0; shift < 32; shift += 8) mix(static_cast<std::uint8_t>(f.width >> shift));
  for (int shift = 0; shift < 32; shift += 8) mix(static_cast<std::uint8_t>(f.height >> shift));
  for (auto b : f.pixels) mix(b);
  return h;
}

}  // namespace rerender
