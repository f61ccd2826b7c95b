#pragma once

// Pipeline throughput measurement: K mask interventions over synthetic skin
// frames, timing apply_chain and (separately) JPEG encoding.

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <string>
#include <unistd.h>
#include <vector>

#include <json.hpp>

#include "rerender/annotation.hpp"
#include "rerender/codec.hpp"
#include "rerender/frame_sources.hpp"
#include "rerender/intervention.hpp"

namespace rerender::bench {

namespace fs = std::filesystem;

struct Options {
  std::string skin = "desktop-a";
  int masks = 3;
  int templates = 2;  // per mask: this skin's crop, then its sibling skin's
  int frames = 60;
  int warmup = 2;  // untimed; the first match pays for FFT planning
  int jpeg_quality = 85;
  std::uint64_t seed = 1;
};

struct Report {
  std::string skin;
  int width = 0, height = 0;
  int masks = 0, templates = 0, frames = 0;
  double apply_seconds = 0.0;
  double encode_seconds = 0.0;
  double apply_fps = 0.0;     // apply_chain only
  double pipeline_fps = 0.0;  // apply_chain + JPEG encode
  double mean_ms = 0.0, p95_ms = 0.0, max_ms = 0.0;
  double detections_per_frame = 0.0;
};

inline nlohmann::json to_json(const Report& r) {
  return {{"skin", r.skin},
          {"width", r.width},
          {"height", r.height},
          {"masks", r.masks},
          {"templates_per_mask", r.templates},
          {"frames", r.frames},
          {"apply_seconds", r.apply_seconds},
          {"encode_seconds", r.encode_seconds},
          {"apply_fps", r.apply_fps},
          {"pipeline_fps", r.pipeline_fps},
          {"mean_ms", r.mean_ms},
          {"p95_ms", r.p95_ms},
          {"max_ms", r.max_ms},
          {"detections_per_frame", r.detections_per_frame}};
}

/// The skin of the same device style with the other scale.
inline std::string sibling_skin(const std::string& skin) {
  const auto& style = sources::skin_style(skin);
  for (const auto& id : sources::skin_ids())
    if (id != skin && sources::skin_style(id).device == style.device) return id;
  return skin;
}

inline Report run(const Options& o) {
  require(o.frames >= 1, "frames must be at least 1");
  require(o.masks >= 0, "masks must be non-negative");
  require(o.templates == 1 || o.templates == 2, "templates per mask must be 1 or 2");
  require(o.warmup >= 0, "warmup must be non-negative");
  const auto& style = sources::skin_style(o.skin);
  std::vector<int> elements;
  for (int e = 1; e < sources::kElementCount; ++e)
    if (sources::element_present(style, e)) elements.push_back(e);
  require(o.masks <= static_cast<int>(elements.size()),
          "skin " + o.skin + " has only " + std::to_string(elements.size()) + " maskable elements");

  const fs::path dir = fs::temp_directory_path() / ("rerender-bench-" + std::to_string(::getpid()));
  fs::remove_all(dir);
  struct Cleanup {
    fs::path p;
    ~Cleanup() {
      std::error_code ec;
      fs::remove_all(p, ec);
    }
  } cleanup{dir};

  engine::Registry reg(dir);
  reg.register_user("bench");
  const std::vector<std::string> template_skins{o.skin, sibling_skin(o.skin)};
  std::vector<std::string> ids;
  for (int m = 0; m < o.masks; ++m) {
    const std::string name = sources::kElementNames[elements[static_cast<std::size_t>(m)]];
    for (int t = 0; t < o.templates; ++t) {
      const auto ref = sources::synth_skin(template_skins[static_cast<std::size_t>(t)], 0, 0);
      const auto* el = ref.find(name);
      Annotation a{"bench-" + std::to_string(m) + "-" + std::to_string(t), "bench", el->region, "mask-" + name, "bench", 0};
      ids.push_back(reg.compile_annotation(a, ref.frame).intervention_id);
    }
  }
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  const auto chain = engine::snapshot(reg, ids);

  Report r;
  r.skin = o.skin;
  r.width = style.width;
  r.height = style.height;
  r.masks = o.masks;
  r.templates = o.templates;
  r.frames = o.frames;
  std::vector<double> per_frame;
  std::size_t detections = 0;
  using clk = std::chrono::steady_clock;
  for (int i = 0; i < o.warmup + o.frames; ++i) {
    Frame f = sources::synth_skin(o.skin, o.seed, i).frame;
    std::vector<engine::StepReport> steps;
    const auto t0 = clk::now();
    Frame out = engine::apply_chain(std::move(f), chain, reg, &steps);
    const auto t1 = clk::now();
    const Bytes jpeg = encode_jpeg(out, o.jpeg_quality);
    const auto t2 = clk::now();
    if (i < o.warmup) continue;
    const double apply_s = std::chrono::duration<double>(t1 - t0).count();
    r.apply_seconds += apply_s;
    r.encode_seconds += std::chrono::duration<double>(t2 - t1).count();
    per_frame.push_back(apply_s * 1000.0);
    for (const auto& s : steps) detections += s.detections.size();
  }
  r.apply_fps = r.apply_seconds > 0 ? o.frames / r.apply_seconds : 0.0;
  r.pipeline_fps = o.frames / std::max(1e-12, r.apply_seconds + r.encode_seconds);
  r.mean_ms = r.apply_seconds * 1000.0 / o.frames;
  std::sort(per_frame.begin(), per_frame.end());
  r.p95_ms = per_frame[std::min(per_frame.size() - 1, static_cast<std::size_t>(0.95 * static_cast<double>(per_frame.size())))];
  r.max_ms = per_frame.back();
  r.detections_per_frame = static_cast<double>(detections) / o.frames;
  return r;
}

}  // namespace rerender::bench
