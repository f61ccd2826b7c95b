#pragma once

// Intervention registry and the per-frame chain. An intervention pairs a hook
// (mask templates, a text classifier, or a patch model) with a render action.
// Specs live on disk under <root>/<owner>/<name>/ and are compiled from user
// annotations.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <shared_mutex>
#include <string>
#include <vector>

#include <json.hpp>
#include <spdlog/spdlog.h>

#include "rerender/annotation.hpp"
#include "rerender/codec.hpp"
#include "rerender/detection.hpp"
#include "rerender/error.hpp"
#include "rerender/image.hpp"
#include "rerender/mask_hook.hpp"
#include "rerender/model_hook.hpp"
#include "rerender/random.hpp"
#include "rerender/render.hpp"
#include "rerender/text_hook.hpp"

namespace rerender::engine {

namespace fs = std::filesystem;

inline constexpr int kNegativesPerPatch = 4;
inline constexpr int kNeutralPerText = 4;
inline constexpr std::uint64_t kNeutralSeed = 11;
inline constexpr double kDefaultTextCutoff = 0.5;

inline bool valid_user_id(std::string_view id) {
  return !id.empty() && id.size() <= 32 && std::all_of(id.begin(), id.end(), [](char c) {
    return (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '_' || c == '-';
  });
}

inline std::string intervention_id(std::string_view owner, std::string_view name) {
  return std::string(owner) + "." + std::string(name);
}

struct MaskConfig {
  double threshold = mask::kDefaultIntensityThreshold;
  mask::MatchMode mode = mask::MatchMode::intensity;
  double iou = mask::kDefaultIouThreshold;
  double edge_threshold = mask::kDefaultEdgeThreshold;
  std::vector<std::string> template_ids;
};

struct TextConfig {
  double cutoff = kDefaultTextCutoff;
  std::string detector = "builtin-bitmap";
};

struct ImageConfig {
  int window = 0;  // derived from the annotated crops unless overridden
  int stride = 0;
  double min_score = 0.0;
  std::int64_t side_sum = 0;
  std::int64_t side_count = 0;
  bool window_override = false;
};

struct InterventionSpec {
  std::string intervention_id;
  std::string name;
  InterventionKind kind = InterventionKind::mask;
  std::string owner;
  bool shared = false;
  std::int64_t version = 0;
  std::vector<std::string> created_from;
  render::Action action;
  MaskConfig mask;
  TextConfig text;
  ImageConfig image;
};

inline render::Action default_action(InterventionKind k) {
  switch (k) {
    case InterventionKind::mask: return render::Action::solid();
    case InterventionKind::text: return render::Action::solid();
    case InterventionKind::image: return render::Action::blur();
  }
  return render::Action::solid();
}

inline nlohmann::json hook_json(const InterventionSpec& s) {
  switch (s.kind) {
    case InterventionKind::mask:
      return {{"threshold", s.mask.threshold},
              {"mode", mask::to_string(s.mask.mode)},
              {"iou", s.mask.iou},
              {"edge_threshold", s.mask.edge_threshold},
              {"templates", s.mask.template_ids}};
    case InterventionKind::text:
      return {{"cutoff", s.text.cutoff}, {"detector", s.text.detector}, {"model", s.intervention_id}};
    case InterventionKind::image:
      return {{"window", s.image.window},       {"stride", s.image.stride},         {"min_score", s.image.min_score},
              {"side_sum", s.image.side_sum},   {"side_count", s.image.side_count}, {"window_override", s.image.window_override},
              {"model", s.intervention_id}};
  }
  return nlohmann::json::object();
}

inline nlohmann::json to_json(const InterventionSpec& s) {
  return {{"intervention_id", s.intervention_id},
          {"name", s.name},
          {"kind", to_string(s.kind)},
          {"owner", s.owner},
          {"shared", s.shared},
          {"version", s.version},
          {"created_from", s.created_from},
          {"render", render::to_json(s.action)},
          {"hook", hook_json(s)}};
}

inline InterventionSpec spec_from_json(const nlohmann::json& j) {
  try {
    InterventionSpec s;
    s.intervention_id = j.at("intervention_id").get<std::string>();
    s.name = j.at("name").get<std::string>();
    s.kind = parse_intervention_kind(j.at("kind").get<std::string>());
    require(label_kind(s.name) == s.kind, "intervention name does not match its kind");
    s.owner = j.at("owner").get<std::string>();
    s.shared = j.at("shared").get<bool>();
    s.version = j.at("version").get<std::int64_t>();
    s.created_from = j.at("created_from").get<std::vector<std::string>>();
    s.action = render::action_from_json(j.at("render"));
    const auto& h = j.at("hook");
    switch (s.kind) {
      case InterventionKind::mask:
        s.mask.threshold = h.at("threshold").get<double>();
        s.mask.mode = mask::parse_mode(h.at("mode").get<std::string>());
        s.mask.iou = h.at("iou").get<double>();
        s.mask.edge_threshold = h.at("edge_threshold").get<double>();
        s.mask.template_ids = h.at("templates").get<std::vector<std::string>>();
        break;
      case InterventionKind::text:
        s.text.cutoff = h.at("cutoff").get<double>();
        s.text.detector = h.at("detector").get<std::string>();
        break;
      case InterventionKind::image:
        s.image.window = h.at("window").get<int>();
        s.image.stride = h.at("stride").get<int>();
        s.image.min_score = h.at("min_score").get<double>();
        s.image.side_sum = h.at("side_sum").get<std::int64_t>();
        s.image.side_count = h.at("side_count").get<std::int64_t>();
        s.image.window_override = h.value("window_override", false);
        break;
    }
    return s;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::invalid_argument, std::string("bad intervention spec: ") + e.what());
  }
}

/// A spec with its payload loaded; immutable once published.
struct Entry {
  InterventionSpec spec;
  std::vector<mask::MaskTemplate> templates;
  std::optional<model::ModelArtifact> model;
};

namespace detail {

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) h = (h ^ c) * 1099511628211ULL;
  return h;
}

inline bool safe_file_stem(std::string_view s) {
  return !s.empty() && s.size() <= 64 && std::all_of(s.begin(), s.end(), [](char c) {
    return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '_' || c == '-';
  });
}

inline void write_json_atomic(const fs::path& path, const nlohmann::json& j) {
  const auto tmp = fs::path(path.string() + ".tmp");
  const std::string text = j.dump(2) + "\n";
  write_file_bytes(tmp, Bytes(text.begin(), text.end()));
  fs::rename(tmp, path);
}

inline nlohmann::json read_json(const fs::path& path) {
  const Bytes b = read_file_bytes(path);
  try {
    return nlohmann::json::parse(b.begin(), b.end());
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::io_error, path.string() + ": " + e.what());
  }
}

/// Up to `count` crops the size of `r`, each disjoint from `r`, drawn from a
/// generator seeded by `seed`.
inline std::vector<Region> background_crops(const Region& r, int width, int height, int count, std::uint64_t seed) {
  std::vector<Region> out;
  if (r.w > width || r.h > height) return out;
  Rng rng(seed);
  for (int attempt = 0; attempt < 200 && static_cast<int>(out.size()) < count; ++attempt) {
    const Region c{static_cast<int>(rng.uniform_int(0, width - r.w)), static_cast<int>(rng.uniform_int(0, height - r.h)),
                   r.w, r.h};
    if (intersect(c, r).area() == 0) out.push_back(c);
  }
  return out;
}

inline bool has_word_char(std::string_view s) {
  return std::any_of(s.begin(), s.end(), [](char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; });
}

}  // namespace detail

/// Registry of interventions for all users. Readers take immutable
/// snapshots; writers are serialized per intervention.
class Registry {
 public:
  explicit Registry(fs::path root) : root_(std::move(root)) {
    fs::create_directories(root_);
    detectors_["builtin-bitmap"] = std::make_shared<text::BuiltinBitmapDetector>();
    for (const auto& user_dir : fs::directory_iterator(root_)) {
      if (!user_dir.is_directory() || !valid_user_id(user_dir.path().filename().string())) continue;
      users_.insert(user_dir.path().filename().string());
      for (const auto& dir : fs::directory_iterator(user_dir.path())) {
        if (!dir.is_directory() || !fs::exists(dir.path() / "spec.json")) continue;
        try {
          auto e = load_entry(dir.path());
          entries_[e->spec.intervention_id] = std::move(e);
        } catch (const std::exception& ex) {
          spdlog::warn("skipping intervention at {}: {}", dir.path().string(), ex.what());
        }
      }
    }
  }

  const fs::path& root() const { return root_; }

  void register_user(const std::string& user) {
    require(valid_user_id(user), "user id must be 1-32 characters of [a-z0-9_-]");
    std::unique_lock lock(mutex_);
    fs::create_directories(root_ / user);
    users_.insert(user);
  }

  bool has_user(const std::string& user) const {
    std::shared_lock lock(mutex_);
    return users_.count(user) > 0;
  }

  void register_detector(std::shared_ptr<text::TextDetectorAdapter> d) {
    std::unique_lock lock(mutex_);
    const auto id = d->id();
    detectors_[id] = std::move(d);
  }

  std::shared_ptr<text::TextDetectorAdapter> detector(const std::string& id) const {
    std::shared_lock lock(mutex_);
    auto it = detectors_.find(id);
    return it == detectors_.end() ? nullptr : it->second;
  }

  std::shared_ptr<const Entry> find(const std::string& id) const {
    std::shared_lock lock(mutex_);
    auto it = entries_.find(id);
    return it == entries_.end() ? nullptr : it->second;
  }

  /// The user's own specs plus every shared spec, sorted by (kind, name),
  /// then owner. Unknown user → not-found.
  /// Every intervention id, sorted.
  std::vector<std::string> ids() const {
    std::shared_lock lock(mutex_);
    std::vector<std::string> out;
    for (const auto& [id, e] : entries_) out.push_back(id);
    std::sort(out.begin(), out.end());
    return out;
  }

  std::vector<InterventionSpec> list_available(const std::string& user) const {
    std::shared_lock lock(mutex_);
    if (!users_.count(user)) fail(ErrorCode::not_found, "unknown user '" + user + "'");
    std::vector<InterventionSpec> out;
    for (const auto& [id, e] : entries_)
      if (e->spec.owner == user || e->spec.shared) out.push_back(e->spec);
    std::sort(out.begin(), out.end(), [](const InterventionSpec& a, const InterventionSpec& b) {
      return std::tie(a.kind, a.name, a.owner) < std::tie(b.kind, b.name, b.owner);
    });
    return out;
  }

  /// Checks an activation list for `user`: ids exist, are visible to the
  /// user and appear once.
  void validate_activation(const std::string& user, const std::vector<std::string>& ids) const {
    std::set<std::string> seen;
    for (const auto& id : ids) {
      if (!seen.insert(id).second) fail(ErrorCode::invalid_argument, "intervention '" + id + "' activated twice");
      const auto e = find(id);
      if (!e) fail(ErrorCode::not_found, "unknown intervention '" + id + "'");
      if (e->spec.owner != user && !e->spec.shared)
        fail(ErrorCode::permission_denied, "intervention '" + id + "' is not shared");
    }
  }

  /// Sets the shared flag. Only the owner may; the version moves only when
  /// the flag actually changes.
  InterventionSpec share(const std::string& user, const std::string& id, bool flag) {
    return modify(user, id, [&](Entry& e) {
      if (e.spec.shared == flag) return false;
      e.spec.shared = flag;
      return true;
    });
  }

  /// Owner-only settings update. Accepted keys: render (action object),
  /// threshold, iou, mode (mask); cutoff, detector (text); window, stride,
  /// min_score (image).
  InterventionSpec update_settings(const std::string& user, const std::string& id, const nlohmann::json& patch) {
    require(patch.is_object(), "settings must be a JSON object");
    return modify(user, id, [&](Entry& e) {
      auto& s = e.spec;
      try {
        for (const auto& [key, value] : patch.items()) {
          if (key == "render") {
            s.action = render::action_from_json(value);
          } else if (key == "threshold" && s.kind == InterventionKind::mask) {
            s.mask.threshold = value.get<double>();
            require(s.mask.threshold >= 0.0 && s.mask.threshold <= 1.0, "threshold must be in [0,1]");
          } else if (key == "iou" && s.kind == InterventionKind::mask) {
            s.mask.iou = value.get<double>();
            require(s.mask.iou >= 0.0 && s.mask.iou <= 1.0, "iou must be in [0,1]");
          } else if (key == "mode" && s.kind == InterventionKind::mask) {
            s.mask.mode = mask::parse_mode(value.get<std::string>());
            if (!patch.contains("threshold")) s.mask.threshold = mask::default_threshold(s.mask.mode);
            rebuild_templates(e);
          } else if (key == "cutoff" && s.kind == InterventionKind::text) {
            s.text.cutoff = value.get<double>();
            require(s.text.cutoff >= 0.0 && s.text.cutoff <= 1.0, "cutoff must be in [0,1]");
          } else if (key == "detector" && s.kind == InterventionKind::text) {
            s.text.detector = value.get<std::string>();
          } else if (key == "window" && s.kind == InterventionKind::image) {
            s.image.window = value.get<int>();
            require(s.image.window >= model::kMinPatchSide, "window must be at least 8");
            s.image.window_override = true;
          } else if (key == "stride" && s.kind == InterventionKind::image) {
            s.image.stride = value.get<int>();
            require(s.image.stride >= 1, "stride must be at least 1");
          } else if (key == "min_score" && s.kind == InterventionKind::image) {
            s.image.min_score = value.get<double>();
          } else {
            fail(ErrorCode::invalid_argument, "setting '" + key + "' does not apply to " + std::string(to_string(s.kind)) +
                                                  " interventions");
          }
        }
      } catch (const nlohmann::json::exception& ex) {
        fail(ErrorCode::invalid_argument, std::string("bad setting value: ") + ex.what());
      }
      return true;
    });
  }

  /// Turns an annotation on `frame` into a new or updated intervention owned
  /// by the annotator and named by the label.
  InterventionSpec compile_annotation(const Annotation& a, const Frame& frame) {
    const InterventionKind kind = label_kind(a.label);
    require(frame.valid(), "annotation frame is empty");
    require(a.region.within(frame.width, frame.height), "annotation region must lie inside the frame");
    if (!has_user(a.annotator)) fail(ErrorCode::not_found, "unknown user '" + a.annotator + "'");
    const std::string id = intervention_id(a.annotator, a.label);
    std::lock_guard writer(writer_lock(id));

    auto current = find(id);
    Entry next;
    if (current) {
      next = *current;
    } else {
      next.spec.intervention_id = id;
      next.spec.name = a.label;
      next.spec.kind = kind;
      next.spec.owner = a.annotator;
      next.spec.action = default_action(kind);
    }
    auto& spec = next.spec;
    const fs::path dir = spec_dir(spec);
    fs::create_directories(dir);

    switch (kind) {
      case InterventionKind::mask: {
        std::string tid = detail::safe_file_stem(a.annotation_id) ? a.annotation_id
                                                                   : "t" + std::to_string(spec.mask.template_ids.size());
        while (std::find(spec.mask.template_ids.begin(), spec.mask.template_ids.end(), tid) != spec.mask.template_ids.end())
          tid += "x";
        const Frame patch = crop(frame, a.region);
        auto t = mask::make_template(tid, spec.name, to_grayscale(patch), spec.mask.mode, spec.mask.edge_threshold,
                                     a.annotation_id);
        write_png(dir / (tid + ".png"), patch);
        detail::write_json_atomic(dir / (tid + ".json"), {{"template_id", tid},
                                                         {"mode", mask::to_string(spec.mask.mode)},
                                                         {"edge_threshold", spec.mask.edge_threshold},
                                                         {"threshold", spec.mask.threshold},
                                                         {"origin", a.annotation_id}});
        spec.mask.template_ids.push_back(tid);
        next.templates.push_back(std::move(t));
        break;
      }
      case InterventionKind::text: {
        const auto box = text::extract_chars(to_grayscale(frame), a.region);
        if (!detail::has_word_char(box.text))
          fail(ErrorCode::annotation_rejected, "no text recognized in the annotated region");
        const std::int64_t step = next.model ? static_cast<std::int64_t>(next.model->meta.num_positive) : 0;
        std::vector<model::LabeledExample> ex{model::LabeledExample::text(box.text, model::Label::positive, a.annotator, step)};
        const auto neutral = model::neutral_corpus(static_cast<std::size_t>((step + 1) * kNeutralPerText), kNeutralSeed);
        for (std::size_t i = static_cast<std::size_t>(step * kNeutralPerText); i < neutral.size(); ++i)
          ex.push_back(model::LabeledExample::text(neutral[i], model::Label::negative, "corpus", step));
        next.model = next.model ? model::incremental_update(*next.model, ex, nullptr, a.created_ms)
                                : model::train_text(ex, id, nullptr, a.created_ms);
        model::save_artifact(dir / "model", *next.model);
        break;
      }
      case InterventionKind::image: {
        require(a.region.w >= model::kMinPatchSide && a.region.h >= model::kMinPatchSide,
                "image annotations must be at least 8x8 pixels");
        const GrayImage gray = to_grayscale(frame);
        const std::int64_t step = next.model ? static_cast<std::int64_t>(next.model->meta.num_positive) : 0;
        std::vector<model::LabeledExample> ex{
            model::LabeledExample::patch(crop(gray, a.region), model::Label::positive, a.annotator, step)};
        for (const auto& r : detail::background_crops(a.region, frame.width, frame.height, kNegativesPerPatch,
                                                      mix_seed(detail::fnv1a(a.annotation_id), 0x4e6)))
          ex.push_back(model::LabeledExample::patch(crop(gray, r), model::Label::negative, a.annotator, step));
        if (!next.model && ex.size() < 2)
          fail(ErrorCode::annotation_rejected, "no background left in the frame to sample negatives from");
        next.model = next.model ? model::incremental_update(*next.model, ex, nullptr, a.created_ms)
                                : model::train_patch(ex, id, a.created_ms);
        model::save_artifact(dir / "model", *next.model);
        spec.image.side_sum += std::lround(std::sqrt(static_cast<double>(a.region.area())));
        spec.image.side_count += 1;
        if (!spec.image.window_override) {
          spec.image.window = std::max<int>(model::kMinPatchSide,
                                            static_cast<int>(std::lround(static_cast<double>(spec.image.side_sum) /
                                                                         static_cast<double>(spec.image.side_count))));
          spec.image.stride = std::max(1, spec.image.window / 8);
        }
        break;
      }
    }
    spec.created_from.push_back(a.annotation_id);
    spec.version += 1;
    detail::write_json_atomic(dir / "spec.json", to_json(spec));
    publish(std::make_shared<const Entry>(std::move(next)));
    return find(id)->spec;
  }

 private:
  fs::path spec_dir(const InterventionSpec& s) const { return root_ / s.owner / s.name; }

  std::mutex& writer_lock(const std::string& id) {
    std::lock_guard lock(writers_mutex_);
    auto& m = writers_[id];
    if (!m) m = std::make_unique<std::mutex>();
    return *m;
  }

  void publish(std::shared_ptr<const Entry> e) {
    std::unique_lock lock(mutex_);
    entries_[e->spec.intervention_id] = std::move(e);
  }

  template <class Fn>
  InterventionSpec modify(const std::string& user, const std::string& id, Fn&& fn) {
    std::lock_guard writer(writer_lock(id));
    auto current = find(id);
    if (!current) fail(ErrorCode::not_found, "unknown intervention '" + id + "'");
    if (current->spec.owner != user) fail(ErrorCode::permission_denied, "only the owner may change '" + id + "'");
    Entry next = *current;
    if (!fn(next)) return current->spec;
    next.spec.version += 1;
    detail::write_json_atomic(spec_dir(next.spec) / "spec.json", to_json(next.spec));
    publish(std::make_shared<const Entry>(std::move(next)));
    return find(id)->spec;
  }

  void rebuild_templates(Entry& e) const {
    for (auto& t : e.templates)
      t = mask::make_template(t.template_id, t.name, t.image, e.spec.mask.mode, e.spec.mask.edge_threshold, t.origin);
  }

  std::shared_ptr<const Entry> load_entry(const fs::path& dir) const {
    auto e = std::make_shared<Entry>();
    e->spec = spec_from_json(detail::read_json(dir / "spec.json"));
    require(e->spec.intervention_id == intervention_id(e->spec.owner, e->spec.name), "intervention id mismatch");
    switch (e->spec.kind) {
      case InterventionKind::mask:
        for (const auto& tid : e->spec.mask.template_ids) {
          const auto side = detail::read_json(dir / (tid + ".json"));
          std::optional<std::string> origin;
          if (side.contains("origin") && side["origin"].is_string()) origin = side["origin"].get<std::string>();
          e->templates.push_back(mask::make_template(tid, e->spec.name, to_grayscale(read_png(dir / (tid + ".png"))),
                                                     e->spec.mask.mode, e->spec.mask.edge_threshold, origin));
        }
        break;
      case InterventionKind::text:
      case InterventionKind::image:
        e->model = model::load_latest(dir / "model");
        if (!e->model) fail(ErrorCode::not_found, "model missing for " + e->spec.intervention_id);
        break;
    }
    return e;
  }

  fs::path root_;
  mutable std::shared_mutex mutex_;
  std::set<std::string> users_;
  std::map<std::string, std::shared_ptr<const Entry>> entries_;
  std::map<std::string, std::shared_ptr<text::TextDetectorAdapter>> detectors_;
  std::mutex writers_mutex_;
  std::map<std::string, std::unique_ptr<std::mutex>> writers_;
};

// ---------------------------------------------------------------------------
// Applying interventions

/// Prepared per-frame state shared between consecutive hooks while the frame
/// is unchanged.
class FrameState {
 public:
  explicit FrameState(const Frame& f) : frame_(&f) {}
  mask::FrameMatcher& matcher() {
    if (!matcher_) matcher_.emplace(*frame_);
    return *matcher_;
  }
  const GrayImage& gray() {
    if (!gray_) gray_ = to_grayscale(*frame_);
    return *gray_;
  }

 private:
  const Frame* frame_;
  std::optional<mask::FrameMatcher> matcher_;
  std::optional<GrayImage> gray_;
};

/// Detections of one intervention's hook on `f`. Throws on hook failure.
inline std::vector<Detection> run_hook(const Entry& e, const Frame& f, FrameState& state, const Registry& reg) {
  const auto& s = e.spec;
  switch (s.kind) {
    case InterventionKind::mask: return mask::detect_all(state.matcher(), e.templates, s.mask.threshold, s.mask.iou);
    case InterventionKind::text: {
      if (!e.model) fail(ErrorCode::hook_unavailable, "no text model");
      auto adapter = reg.detector(s.text.detector);
      if (!adapter) fail(ErrorCode::hook_unavailable, "text detector '" + s.text.detector + "' is not registered");
      std::vector<Detection> out;
      for (const auto& tb : text::scan_text(f, *adapter)) {
        if (!detail::has_word_char(tb.text)) continue;
        const auto p = model::predict_text(*e.model, tb.text);
        if (p.confidence >= s.text.cutoff) out.push_back(Detection{tb.region, p.confidence, 1.0, s.name, HookKind::text});
      }
      return out;
    }
    case InterventionKind::image: {
      if (!e.model) fail(ErrorCode::hook_unavailable, "no patch model");
      auto dets = model::detect_patches(state.gray(), *e.model, s.image.window, std::max(1, s.image.stride));
      std::erase_if(dets, [&](const Detection& d) { return d.score < s.image.min_score; });
      for (auto& d : dets) d.label = s.name;
      return dets;
    }
  }
  return {};
}

struct StepReport {
  std::string intervention_id;
  bool applied = false;
  std::string error;
  std::vector<Detection> detections;
};

/// Runs each intervention in order on the current (already perturbed)
/// frame. Unknown ids and failing hooks are skipped with a warning.
inline Frame apply_chain(Frame f, const std::vector<std::shared_ptr<const Entry>>& chain, const Registry& reg,
                         std::vector<StepReport>* report = nullptr) {
  auto state = std::make_unique<FrameState>(f);
  for (const auto& e : chain) {
    StepReport step;
    if (!e) {
      step.error = "unknown intervention";
      if (report) report->push_back(std::move(step));
      continue;
    }
    step.intervention_id = e->spec.intervention_id;
    try {
      step.detections = run_hook(*e, f, *state, reg);
      step.applied = true;
    } catch (const std::exception& ex) {
      step.error = ex.what();
      spdlog::warn("intervention {} skipped: {}", e->spec.intervention_id, ex.what());
    }
    if (!step.detections.empty()) {
      for (const auto& d : step.detections) f = render::apply(std::move(f), d.region, e->spec.action);
      state = std::make_unique<FrameState>(f);
    }
    if (report) report->push_back(std::move(step));
  }
  return f;
}

/// Snapshot of the entries named by `ids`; unknown ids become null and are
/// skipped by apply_chain.
inline std::vector<std::shared_ptr<const Entry>> snapshot(const Registry& reg, const std::vector<std::string>& ids) {
  std::vector<std::shared_ptr<const Entry>> out;
  for (const auto& id : ids) {
    auto e = reg.find(id);
    if (!e) spdlog::warn("intervention {} not found; skipping", id);
    out.push_back(std::move(e));
  }
  return out;
}

inline Frame apply_chain(Frame f, const std::vector<std::string>& ids, const Registry& reg,
                         std::vector<StepReport>* report = nullptr) {
  return apply_chain(std::move(f), snapshot(reg, ids), reg, report);
}

}  // namespace rerender::engine
