#pragma once

#include <algorithm>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "rerender/error.hpp"
#include "rerender/image.hpp"

namespace rerender {

enum class HookKind { mask, text, model };

inline std::string_view to_string(HookKind k) {
  switch (k) {
    case HookKind::mask: return "mask";
    case HookKind::text: return "text";
    case HookKind::model: return "model";
  }
  return "mask";
}

/// A scored region produced by a hook; what renderers consume.
struct Detection {
  Region region;
  double score = 0.0;  // [0, 1]
  double scale = 1.0;
  std::string label;   // template id or model label
  HookKind kind = HookKind::mask;

  friend bool operator==(const Detection&, const Detection&) = default;
};

/// Canonical detection order: score descending, then (y, x, scale) ascending.
inline bool detection_before(const Detection& a, const Detection& b) {
  if (a.score != b.score) return a.score > b.score;
  return std::tie(a.region.y, a.region.x, a.scale, a.region.w, a.region.h, a.label) <
         std::tie(b.region.y, b.region.x, b.scale, b.region.w, b.region.h, b.label);
}

/// Greedy non-maximum suppression. A detection survives iff its IoU with
/// every previously kept detection is below `iou_threshold`.
inline std::vector<Detection> nms(std::vector<Detection> dets, double iou_threshold) {
  require(iou_threshold >= 0.0 && iou_threshold <= 1.0, "iou threshold must be in [0,1]");
  std::sort(dets.begin(), dets.end(), detection_before);
  std::vector<Detection> kept;
  for (auto& d : dets) {
    const bool clear = std::none_of(kept.begin(), kept.end(),
                                    [&](const Detection& k) { return iou(k.region, d.region) >= iou_threshold; });
    if (clear) kept.push_back(std::move(d));
  }
  return kept;
}

}  // namespace rerender
