#pragma once

// Mask hook: one-shot detection of GUI elements by multi-scale, multi-template
// normalized cross-correlation.
//
// Every window position is covered. Correlations come from single precision
// FFTs and only serve to discard windows that provably cannot reach the
// threshold; survivors are rescored with ncc_score, so reported positions
// and scores are the exact stride-1 results.

#include <fftw3.h>

#include <array>
#include <cmath>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "rerender/detection.hpp"
#include "rerender/error.hpp"
#include "rerender/image.hpp"

namespace rerender::mask {

enum class MatchMode { intensity, contour };

inline std::string_view to_string(MatchMode m) { return m == MatchMode::intensity ? "intensity" : "contour"; }

inline MatchMode parse_mode(std::string_view s) {
  if (s == "intensity") return MatchMode::intensity;
  if (s == "contour") return MatchMode::contour;
  fail(ErrorCode::invalid_argument, "unknown match mode '" + std::string(s) + "'");
}

inline constexpr double kDefaultIntensityThreshold = 0.85;
inline constexpr double kDefaultContourThreshold = 0.70;
inline constexpr double kDefaultIouThreshold = 0.3;
inline constexpr double kDefaultEdgeThreshold = 100.0;
inline constexpr int kPyramidSteps = 9;
inline constexpr int kMinTemplateSide = 4;

inline double default_threshold(MatchMode m) {
  return m == MatchMode::intensity ? kDefaultIntensityThreshold : kDefaultContourThreshold;
}

/// Scale k of the pyramid: 0.5 * 2^(k/4), k = 0..8.
inline double pyramid_scale(int k) { return std::pow(2.0, (k - 4) / 4.0); }

struct PyramidLevel {
  int index = 0;
  double scale = 1.0;
  int w = 0;
  int h = 0;
};

inline PyramidLevel pyramid_level(int k, int base_w, int base_h) {
  const double s = pyramid_scale(k);
  return PyramidLevel{k, s, std::max(1, static_cast<int>(std::lround(base_w * s))),
                      std::max(1, static_cast<int>(std::lround(base_h * s)))};
}

/// Pyramid levels whose scaled template fits inside a frame_w x frame_h frame.
inline std::vector<PyramidLevel> pyramid_levels(int base_w, int base_h, int frame_w, int frame_h) {
  require(base_w >= kMinTemplateSide && base_h >= kMinTemplateSide, "template must be at least 4x4");
  std::vector<PyramidLevel> out;
  for (int k = 0; k < kPyramidSteps; ++k) {
    const auto lvl = pyramid_level(k, base_w, base_h);
    if (lvl.w <= frame_w && lvl.h <= frame_h) out.push_back(lvl);
  }
  return out;
}

inline std::vector<double> scale_pyramid(int base_w, int base_h, int frame_w, int frame_h) {
  std::vector<double> out;
  for (const auto& l : pyramid_levels(base_w, base_h, frame_w, frame_h)) out.push_back(l.scale);
  return out;
}

namespace detail {

struct FftwDeleter {
  void operator()(void* p) const { fftwf_free(p); }
};
using RealBuffer = std::unique_ptr<float[], FftwDeleter>;
using ComplexBuffer = std::unique_ptr<fftwf_complex[], FftwDeleter>;

inline RealBuffer alloc_real(std::size_t n) { return RealBuffer(fftwf_alloc_real(n)); }
inline ComplexBuffer alloc_complex(std::size_t n) { return ComplexBuffer(fftwf_alloc_complex(n)); }

inline std::size_t spectrum_size(int w, int h) { return static_cast<std::size_t>(h) * (w / 2 + 1); }

struct Plans {
  fftwf_plan forward = nullptr;
  fftwf_plan inverse = nullptr;
};

// Plans are created once per frame size and live for the whole process.
// Planning is serialized; executing on fresh arrays is thread-safe.
inline const Plans& plans_for(int w, int h) {
  static std::mutex mutex;
  static std::map<std::pair<int, int>, Plans> cache;
  std::lock_guard lock(mutex);
  auto it = cache.find({w, h});
  if (it != cache.end()) return it->second;
  const unsigned flags = static_cast<long>(w) * h >= 100000 ? FFTW_MEASURE : FFTW_ESTIMATE;
  auto real = alloc_real(static_cast<std::size_t>(w) * h);
  auto cplx = alloc_complex(spectrum_size(w, h));
  Plans p;
  p.forward = fftwf_plan_dft_r2c_2d(h, w, real.get(), cplx.get(), flags);
  p.inverse = fftwf_plan_dft_c2r_2d(h, w, cplx.get(), real.get(), flags);
  if (!p.forward || !p.inverse) fail(ErrorCode::io_error, "fftw planning failed");
  return cache.emplace(std::make_pair(w, h), p).first->second;
}

/// One pyramid level of a template, resampled and zero-meaned.
struct ScaledTemplate {
  PyramidLevel level;
  GrayImage image;
  std::vector<float> zero_mean;
  double norm = 0.0;  // ||T - mean(T)||_2
  bool flat = false;
};

inline ScaledTemplate scale_template(const GrayImage& base, const PyramidLevel& lvl) {
  ScaledTemplate st;
  st.level = lvl;
  st.image = resize_bilinear(base, lvl.w, lvl.h);
  const auto [mn, mx] = std::minmax_element(st.image.values.begin(), st.image.values.end());
  st.flat = *mn == *mx;
  double mean = 0.0;
  for (double v : st.image.values) mean += v;
  mean /= static_cast<double>(st.image.values.size());
  st.zero_mean.resize(st.image.values.size());
  double ss = 0.0;
  for (std::size_t i = 0; i < st.image.values.size(); ++i) {
    const double d = st.image.values[i] - mean;
    st.zero_mean[i] = static_cast<float>(d);
    ss += d * d;
  }
  st.norm = std::sqrt(ss);
  return st;
}

struct Spectrum {
  ComplexBuffer data;
};

/// Per-template memo of scaled images and their spectra for each frame size.
/// Shared by copies of the same template.
class TemplateCache {
 public:
  const ScaledTemplate& scaled(const GrayImage& base, const PyramidLevel& lvl) {
    std::lock_guard lock(mutex_);
    auto& slot = scaled_[static_cast<std::size_t>(lvl.index)];
    if (!slot) slot = std::make_unique<ScaledTemplate>(scale_template(base, lvl));
    return *slot;
  }

  std::shared_ptr<const Spectrum> spectrum(const ScaledTemplate& st, int w, int h) {
    const std::array<int, 3> key{st.level.index, w, h};
    {
      std::lock_guard lock(mutex_);
      auto it = spectra_.find(key);
      if (it != spectra_.end()) return it->second;
    }
    auto spec = std::make_shared<Spectrum>();
    auto real = alloc_real(static_cast<std::size_t>(w) * h);
    std::fill(real.get(), real.get() + static_cast<std::size_t>(w) * h, 0.0f);
    for (int y = 0; y < st.level.h; ++y)
      std::copy_n(st.zero_mean.data() + static_cast<std::size_t>(y) * st.level.w, st.level.w,
                  real.get() + static_cast<std::size_t>(y) * w);
    spec->data = alloc_complex(spectrum_size(w, h));
    fftwf_execute_dft_r2c(plans_for(w, h).forward, real.get(), spec->data.get());
    std::lock_guard lock(mutex_);
    if (spectra_.size() >= 3 * kPyramidSteps) spectra_.clear();  // bound memory across frame sizes
    return spectra_.emplace(key, std::move(spec)).first->second;
  }

 private:
  std::mutex mutex_;
  std::array<std::unique_ptr<ScaledTemplate>, kPyramidSteps> scaled_{};
  std::map<std::array<int, 3>, std::shared_ptr<const Spectrum>> spectra_;
};

#if defined(__GNUC__) && defined(__x86_64__) && !defined(__clang__)
#define RERENDER_VECTOR_CLONES __attribute__((target_clones("avx2", "default")))
#else
#define RERENDER_VECTOR_CLONES
#endif

RERENDER_VECTOR_CLONES
inline void multiply_conj(const float* a, const float* b, float* p, std::size_t n_complex) {
  for (std::size_t i = 0; i < 2 * n_complex; i += 2) {
    const float ar = a[i], ai = a[i + 1], br = b[i], bi = b[i + 1];
    p[i] = ar * br + ai * bi;
    p[i + 1] = ai * br - ar * bi;
  }
}

// Integral-image rows bounding one row of windows.
struct RowSums {
  const double* s1t;
  const double* s1b;
  const double* s2t;
  const double* s2b;
  // Edge counts at rows y and y + th - 1. A window is constant exactly when
  // its first (tw-1) x (th-1) pixels all match their right, lower and
  // lower-right neighbours. Windows one pixel thin are never skipped.
  const int* et;
  const int* eb;
  bool thin;
};

// Marks windows of one row that might reach the threshold: not exactly flat,
// and either correlation upper bound `hi` with hi^2 >= k2 * var or variance
// too small to trust.
RERENDER_VECTOR_CLONES
inline unsigned screen_row(const RowSums& rs, const float* __restrict corr, int nx, int tw, double inv_n,
                           double inv_fft, double slack, double k2, double tiny, std::uint8_t* __restrict keep) {
  const double* __restrict s1t = rs.s1t;
  const double* __restrict s1b = rs.s1b;
  const double* __restrict s2t = rs.s2t;
  const double* __restrict s2b = rs.s2b;
  const int* __restrict et = rs.et;
  const int* __restrict eb = rs.eb;
  const int edge_w = tw - 1;
  const int always = rs.thin;
  unsigned any = 0;
  for (int x = 0; x < nx; ++x) {
    const double s1 = (s1b[x + tw] - s1b[x]) - (s1t[x + tw] - s1t[x]);
    const double s2 = (s2b[x + tw] - s2b[x]) - (s2t[x + tw] - s2t[x]);
    const double var = s2 - s1 * s1 * inv_n;
    const double hi = corr[x] * inv_fft + slack;
    const int changes = (eb[x + edge_w] - et[x + edge_w] - eb[x] + et[x]) | always;
    const bool pass = (changes != 0) & ((var < tiny) | ((hi > 0.0) & (hi * hi >= k2 * var)));
    keep[x] = pass;
    any |= pass;
  }
  return any;
}

struct Hit {
  int x = 0;
  int y = 0;
  double score = 0.0;
};

/// Frame-side state for correlating many templates against one gray image.
/// Holds scratch buffers, so one instance must not scan from two threads.
// Per-frame scratch buffers. Large and reused across frames so each new
// frame does not pay fresh page faults.
struct Workspace {
  int w = 0;
  int h = 0;
  RealBuffer corr;
  ComplexBuffer spectrum;
  ComplexBuffer product;
  std::vector<std::uint8_t> keep;
  std::vector<double> sum1, sum2;   // integral images of (I - mean) and its square
  std::vector<int> edges;           // integral count of pixels unlike a right/lower/diagonal neighbour
};

class WorkspacePool {
 public:
  static std::unique_ptr<Workspace> acquire(int w, int h) {
    auto& free = slots();
    for (auto it = free.begin(); it != free.end(); ++it) {
      if ((*it)->w == w && (*it)->h == h) {
        auto ws = std::move(*it);
        free.erase(it);
        return ws;
      }
    }
    auto ws = std::make_unique<Workspace>();
    ws->w = w;
    ws->h = h;
    const std::size_t n = static_cast<std::size_t>(w) * h;
    const std::size_t total = (static_cast<std::size_t>(w) + 1) * (static_cast<std::size_t>(h) + 1);
    ws->corr = alloc_real(n);
    ws->spectrum = alloc_complex(spectrum_size(w, h));
    ws->product = alloc_complex(spectrum_size(w, h));
    ws->keep.resize(static_cast<std::size_t>(w));
    ws->sum1.resize(total);
    ws->sum2.resize(total);
    ws->edges.resize(total);
    return ws;
  }

  static void release(std::unique_ptr<Workspace> ws) {
    auto& free = slots();
    if (free.size() >= kMaxIdle) free.erase(free.begin());
    free.push_back(std::move(ws));
  }

 private:
  static constexpr std::size_t kMaxIdle = 4;
  static std::vector<std::unique_ptr<Workspace>>& slots() {
    thread_local std::vector<std::unique_ptr<Workspace>> free;
    return free;
  }
};

class Correlator {
 public:
  explicit Correlator(std::shared_ptr<const GrayImage> g)
      : img_(std::move(g)), w_(img_->width), h_(img_->height), ws_(WorkspacePool::acquire(w_, h_)) {
    const std::size_t n = img_->values.size();
    const double* v = img_->values.data();
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += v[i];
    mean /= static_cast<double>(n);

    float* real = ws_->corr.get();
    double energy = 0.0;
    const std::size_t stride = static_cast<std::size_t>(w_) + 1;
    // top row and left column of the integral images stay zero
    std::fill_n(ws_->sum1.begin(), stride, 0.0);
    std::fill_n(ws_->sum2.begin(), stride, 0.0);
    std::fill_n(ws_->edges.begin(), stride, 0);
    for (int y = 0; y < h_; ++y) {
      const double* row = v + static_cast<std::size_t>(y) * w_;
      const double* below = y + 1 < h_ ? row + w_ : row;
      double* s1 = ws_->sum1.data() + (y + 1) * stride + 1;
      double* s2 = ws_->sum2.data() + (y + 1) * stride + 1;
      int* ed = ws_->edges.data() + (y + 1) * stride + 1;
      s1[-1] = s2[-1] = 0.0;
      ed[-1] = 0;
      const double* s1u = s1 - stride;
      const double* s2u = s2 - stride;
      const int* edu = ed - stride;
      double r1 = 0.0, r2 = 0.0;
      int re = 0;
      for (int x = 0; x < w_; ++x) {
        const double d = row[x] - mean;
        real[static_cast<std::size_t>(y) * w_ + x] = static_cast<float>(d);
        r1 += d;
        r2 += d * d;
        re += (x + 1 < w_ && (row[x] != row[x + 1] || row[x] != below[x + 1])) | (row[x] != below[x]);
        s1[x] = s1u[x] + r1;
        s2[x] = s2u[x] + r2;
        ed[x] = edu[x] + re;
      }
      energy += r2;
    }
    fftwf_execute_dft_r2c(plans_for(w_, h_).forward, real, ws_->spectrum.get());

    // Single precision FFT correlation error, bounded generously in terms of
    // the signal energies (Cauchy-Schwarz on the roundoff of each stage).
    const double eps = 0x1.0p-24;
    error_scale_ = 2.0 * eps * (3.0 * std::log2(static_cast<double>(n) + 1.0) + 4.0) * std::sqrt(energy);
  }

  explicit Correlator(GrayImage g) : Correlator(std::make_shared<const GrayImage>(std::move(g))) {}

  ~Correlator() {
    if (ws_) WorkspacePool::release(std::move(ws_));
  }
  Correlator(const Correlator&) = delete;
  Correlator& operator=(const Correlator&) = delete;

  const GrayImage& image() const { return *img_; }

  /// Appends every position where max(0, ncc) >= threshold for template `st`.
  void scan(const ScaledTemplate& st, TemplateCache& cache, double threshold, std::vector<Hit>& out) {
    const int tw = st.level.w, th = st.level.h;
    if (tw > w_ || th > h_) return;
    if (threshold <= 0.0) {
      exhaustive(st, out);
      return;
    }
    if (st.flat) return;  // every window scores 0

    const auto spec = cache.spectrum(st, w_, h_);
    const std::size_t ns = spectrum_size(w_, h_);
    multiply_conj(&ws_->spectrum[0][0], &spec->data[0][0], &ws_->product[0][0], ns);
    float* corr = ws_->corr.get();
    fftwf_execute_dft_c2r(plans_for(w_, h_).inverse, ws_->product.get(), corr);

    const double n = static_cast<double>(tw) * th;
    const double inv_n = 1.0 / n;
    const double inv_fft = 1.0 / (static_cast<double>(w_) * h_);
    const double slack = error_scale_ * st.norm;
    const double thr0 = std::max(0.0, threshold - kScreenMargin);
    const double k2 = thr0 * thr0 * st.norm * st.norm;
    const std::size_t stride = static_cast<std::size_t>(w_) + 1;
    const int nx = w_ - tw + 1, ny = h_ - th + 1;
    std::uint8_t* keep = ws_->keep.data();
    const double* sum1 = ws_->sum1.data();
    const double* sum2 = ws_->sum2.data();
    const int* edges = ws_->edges.data();
    const bool thin = tw < 2 || th < 2;
    for (int y = 0; y < ny; ++y) {
      const std::size_t top = y * stride, bottom = (y + th) * stride;
      const RowSums rs{sum1 + top, sum1 + bottom, sum2 + top, sum2 + bottom,
                       edges + top, edges + (thin ? top : bottom - stride), thin};
      const unsigned any = screen_row(rs, corr + static_cast<std::size_t>(y) * w_, nx, tw, inv_n, inv_fft, slack, k2,
                                      kTinyVariance, keep);
      if (!any) continue;
      for (int x = 0; x < nx; ++x) {
        if (!keep[x]) continue;
        const double s = ncc_score(*img_, st.image, Region{x, y, tw, th});
        if (s >= threshold) out.push_back(Hit{x, y, s});
      }
    }
  }

 private:
  // Screening keeps windows within this much of the threshold on top of the
  // roundoff bound; cheap insurance against the variance estimate.
  static constexpr double kScreenMargin = 0.01;
  // Windows whose estimated variance sum is this small are always rescored.
  static constexpr double kTinyVariance = 1e-2;

  void exhaustive(const ScaledTemplate& st, std::vector<Hit>& out) const {
    for (int y = 0; y + st.level.h <= h_; ++y)
      for (int x = 0; x + st.level.w <= w_; ++x)
        out.push_back(Hit{x, y, std::max(0.0, ncc_score(*img_, st.image, Region{x, y, st.level.w, st.level.h}))});
  }

  std::shared_ptr<const GrayImage> img_;
  int w_;
  int h_;
  std::unique_ptr<Workspace> ws_;
  double error_scale_ = 0.0;
};

}  // namespace detail

/// A cropped GUI element used as a one-shot detector.
struct MaskTemplate {
  std::string template_id;
  std::string name;
  GrayImage image;
  GrayImage contour;
  MatchMode mode = MatchMode::intensity;
  double edge_threshold = kDefaultEdgeThreshold;
  std::optional<std::string> origin;  // annotation that created it
  std::shared_ptr<detail::TemplateCache> cache = std::make_shared<detail::TemplateCache>();

  const GrayImage& matched_image() const { return mode == MatchMode::intensity ? image : contour; }
};

inline MaskTemplate make_template(std::string template_id, std::string name, GrayImage image,
                                  MatchMode mode = MatchMode::intensity,
                                  double edge_threshold = kDefaultEdgeThreshold,
                                  std::optional<std::string> origin = std::nullopt) {
  require(image.width >= kMinTemplateSide && image.height >= kMinTemplateSide,
          "mask template must be at least 4x4 pixels");
  MaskTemplate t;
  t.template_id = std::move(template_id);
  t.name = std::move(name);
  t.contour = contourize(image, edge_threshold);
  t.image = std::move(image);
  t.mode = mode;
  t.edge_threshold = edge_threshold;
  t.origin = std::move(origin);
  return t;
}

/// Gray (and contour) views of one frame, prepared lazily and shared by all
/// templates matched against it.
class FrameMatcher {
 public:
  explicit FrameMatcher(const Frame& f) : gray_(std::make_shared<const GrayImage>(to_grayscale(f))) {}
  explicit FrameMatcher(GrayImage g) : gray_(std::make_shared<const GrayImage>(std::move(g))) {}

  detail::Correlator& correlator(MatchMode mode, double edge_threshold) {
    if (mode == MatchMode::intensity) {
      if (!intensity_) intensity_ = std::make_unique<detail::Correlator>(gray_);
      return *intensity_;
    }
    auto& slot = contour_[edge_threshold];
    if (!slot) slot = std::make_unique<detail::Correlator>(contourize(*gray_, edge_threshold));
    return *slot;
  }

  int width() const { return gray_->width; }
  int height() const { return gray_->height; }
  const GrayImage& gray() const { return *gray_; }

 private:
  std::shared_ptr<const GrayImage> gray_;
  std::unique_ptr<detail::Correlator> intensity_;
  std::map<double, std::unique_ptr<detail::Correlator>> contour_;
};

/// All windows (before suppression) with max(0, ncc) >= threshold, across the pyramid.
inline std::vector<Detection> raw_matches(FrameMatcher& fm, const MaskTemplate& t, double threshold) {
  require(threshold >= 0.0 && threshold <= 1.0, "match threshold must be in [0,1]");
  auto& corr = fm.correlator(t.mode, t.edge_threshold);
  const GrayImage& base = t.matched_image();
  std::vector<Detection> out;
  std::vector<detail::Hit> hits;
  for (const auto& lvl : pyramid_levels(base.width, base.height, fm.width(), fm.height())) {
    const auto& st = t.cache->scaled(base, lvl);
    hits.clear();
    corr.scan(st, *t.cache, threshold, hits);
    for (const auto& h : hits)
      out.push_back(Detection{Region{h.x, h.y, lvl.w, lvl.h}, h.score, lvl.scale, t.template_id, HookKind::mask});
  }
  return out;
}

inline std::vector<Detection> match_multiscale(const Frame& f, const MaskTemplate& t, double threshold,
                                               double iou_threshold = kDefaultIouThreshold) {
  FrameMatcher fm(f);
  return nms(raw_matches(fm, t, threshold), iou_threshold);
}

/// Union of every template's matches followed by one global suppression pass.
inline std::vector<Detection> detect_all(FrameMatcher& fm, const std::vector<MaskTemplate>& templates,
                                         double threshold, double iou_threshold = kDefaultIouThreshold) {
  std::vector<Detection> all;
  for (const auto& t : templates) {
    auto m = nms(raw_matches(fm, t, threshold), iou_threshold);
    all.insert(all.end(), std::make_move_iterator(m.begin()), std::make_move_iterator(m.end()));
  }
  return nms(std::move(all), iou_threshold);
}

inline std::vector<Detection> detect_all(const Frame& f, const std::vector<MaskTemplate>& templates, double threshold,
                                         double iou_threshold = kDefaultIouThreshold) {
  FrameMatcher fm(f);
  return detect_all(fm, templates, threshold, iou_threshold);
}

}  // namespace rerender::mask
