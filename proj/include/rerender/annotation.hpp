#pragma once

// User annotations on history frames and the label convention that names
// interventions: mask-<name>, text-<name>, image-<name>.

#include <cstdint>
#include <regex>
#include <string>
#include <string_view>

#include <json.hpp>

#include "rerender/error.hpp"
#include "rerender/image.hpp"

namespace rerender {

enum class InterventionKind { mask, text, image };

inline std::string_view to_string(InterventionKind k) {
  switch (k) {
    case InterventionKind::mask: return "mask";
    case InterventionKind::text: return "text";
    case InterventionKind::image: return "image";
  }
  return "mask";
}

inline InterventionKind parse_intervention_kind(std::string_view s) {
  if (s == "mask") return InterventionKind::mask;
  if (s == "text") return InterventionKind::text;
  if (s == "image") return InterventionKind::image;
  fail(ErrorCode::invalid_argument, "unknown intervention kind '" + std::string(s) + "'");
}

inline constexpr std::size_t kMaxLabelLength = 64;

inline bool valid_label(std::string_view label) {
  static const std::regex pattern("(mask|text|image)-[a-z0-9-]+");
  return label.size() <= kMaxLabelLength && std::regex_match(label.begin(), label.end(), pattern);
}

/// Kind encoded in a well-formed label; invalid-argument otherwise.
inline InterventionKind label_kind(std::string_view label) {
  if (!valid_label(label))
    fail(ErrorCode::invalid_argument,
         "label '" + std::string(label) + "' must match (mask|text|image)-[a-z0-9-]+ (at most 64 characters)");
  return parse_intervention_kind(label.substr(0, label.find('-')));
}

struct Annotation {
  std::string annotation_id;
  std::string record_id;
  Region region;
  std::string label;
  std::string annotator;
  std::int64_t created_ms = 0;
};

inline nlohmann::json region_json(const Region& r) { return {{"x", r.x}, {"y", r.y}, {"w", r.w}, {"h", r.h}}; }

inline Region region_from_json(const nlohmann::json& j) {
  try {
    return Region{j.at("x").get<int>(), j.at("y").get<int>(), j.at("w").get<int>(), j.at("h").get<int>()};
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::invalid_argument, std::string("region needs integer x, y, w, h: ") + e.what());
  }
}

inline nlohmann::json to_json(const Annotation& a) {
  return {{"annotation_id", a.annotation_id}, {"record_id", a.record_id}, {"region", region_json(a.region)},
          {"label", a.label},                 {"annotator", a.annotator}, {"created_ms", a.created_ms}};
}

inline Annotation annotation_from_json(const nlohmann::json& j) {
  try {
    return Annotation{j.at("annotation_id").get<std::string>(), j.at("record_id").get<std::string>(),
                      region_from_json(j.at("region")),         j.at("label").get<std::string>(),
                      j.at("annotator").get<std::string>(),     j.at("created_ms").get<std::int64_t>()};
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::invalid_argument, std::string("bad annotation: ") + e.what());
  }
}

}  // namespace rerender
