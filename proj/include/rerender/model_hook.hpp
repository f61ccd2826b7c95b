#pragma once

// Model hook: incrementally trainable classifiers.
//
// Text: bag-of-words logistic regression trained by full-batch gradient
// descent. Patches: nearest-centroid over 16x16 normalized gray features,
// used as a sliding-window detector.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <tuple>
#include <utility>
#include <variant>
#include <vector>

#include <json.hpp>

#include "rerender/codec.hpp"
#include "rerender/detection.hpp"
#include "rerender/error.hpp"
#include "rerender/image.hpp"
#include "rerender/random.hpp"

namespace rerender::model {

enum class ModelKind { text, patch };
enum class Label { negative, positive };

inline std::string_view to_string(ModelKind k) { return k == ModelKind::text ? "text" : "patch"; }
inline std::string_view to_string(Label l) { return l == Label::positive ? "positive" : "negative"; }

inline ModelKind parse_kind(std::string_view s) {
  if (s == "text") return ModelKind::text;
  if (s == "patch") return ModelKind::patch;
  fail(ErrorCode::invalid_argument, "unknown model kind '" + std::string(s) + "'");
}

inline Label parse_label(std::string_view s) {
  if (s == "positive") return Label::positive;
  if (s == "negative") return Label::negative;
  fail(ErrorCode::invalid_argument, "unknown label '" + std::string(s) + "'");
}

inline constexpr int kPatchSide = 16;
inline constexpr int kPatchFeatures = kPatchSide * kPatchSide;
inline constexpr int kMinPatchSide = 8;
inline constexpr double kLearningRate = 0.1;
inline constexpr double kL2 = 1e-4;
inline constexpr double kStopLoss = 0.1;
inline constexpr int kMaxEpochs = 500;
inline constexpr double kPatchIou = 0.3;

struct LabeledExample {
  ModelKind kind = ModelKind::text;
  std::variant<std::string, GrayImage> payload;
  Label label = Label::positive;
  std::string contributor;
  std::int64_t timestep = 0;

  static LabeledExample text(std::string s, Label l, std::string contributor = "", std::int64_t t = 0) {
    return LabeledExample{ModelKind::text, std::move(s), l, std::move(contributor), t};
  }
  static LabeledExample patch(GrayImage g, Label l, std::string contributor = "", std::int64_t t = 0) {
    return LabeledExample{ModelKind::patch, std::move(g), l, std::move(contributor), t};
  }
};

/// Example as retained in an artifact: text verbatim, patches as features.
struct StoredExample {
  Label label = Label::positive;
  std::string contributor;
  std::int64_t timestep = 0;
  std::string text;
  std::vector<double> feature;

  friend bool operator==(const StoredExample&, const StoredExample&) = default;
};

struct TextParams {
  std::vector<std::string> vocabulary;  // sorted
  std::vector<double> weights;
  double bias = 0.0;

  friend bool operator==(const TextParams&, const TextParams&) = default;
};

struct PatchParams {
  std::vector<double> positive_centroid;
  std::vector<double> negative_centroid;
  double margin = 0.0;  // half the distance between the centroids

  friend bool operator==(const PatchParams&, const PatchParams&) = default;
};

struct TrainingMeta {
  std::size_t num_positive = 0;
  std::size_t num_negative = 0;
  double final_loss = 0.0;
  std::int64_t trained_at = 0;  // unix ms
  int epochs = 0;
};

struct ModelArtifact {
  std::string model_id;
  ModelKind kind = ModelKind::text;
  std::int64_t version = 0;
  TextParams text;
  PatchParams patch;
  TrainingMeta meta;
  std::vector<StoredExample> examples;  // full training ledger
};

/// Per-epoch record of training, for inspection and tests.
struct TrainTrace {
  std::vector<double> objective;  // summed loss + L2 before each step
  std::vector<double> mean_loss;
  double final_learning_rate = kLearningRate;
};

inline std::int64_t unix_ms() {
  return std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::system_clock::now().time_since_epoch())
      .count();
}

// ---------------------------------------------------------------------------
// Text

/// Lowercased runs of ASCII letters and digits.
inline std::vector<std::string> tokenize(std::string_view s) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : s) {
    const auto c = static_cast<unsigned char>(ch);
    if (c < 0x80 && std::isalnum(c)) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

namespace detail {

inline double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

// log(1 + e^z) without overflow
inline double softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }

inline bool example_before(const StoredExample& a, const StoredExample& b) {
  return std::tie(a.contributor, a.timestep, a.text, a.label, a.feature) <
         std::tie(b.contributor, b.timestep, b.text, b.label, b.feature);
}

inline void check_both_classes(const std::vector<StoredExample>& ex) {
  const bool pos = std::any_of(ex.begin(), ex.end(), [](const auto& e) { return e.label == Label::positive; });
  const bool neg = std::any_of(ex.begin(), ex.end(), [](const auto& e) { return e.label == Label::negative; });
  if (!pos) fail(ErrorCode::invalid_argument, "training needs at least one positive example");
  if (!neg) fail(ErrorCode::invalid_argument, "training needs at least one negative example");
}

using Sparse = std::vector<std::pair<std::size_t, double>>;

inline Sparse featurize(const std::vector<std::string>& vocab, std::string_view s) {
  std::map<std::size_t, double> counts;
  for (const auto& tok : tokenize(s)) {
    auto it = std::lower_bound(vocab.begin(), vocab.end(), tok);
    if (it != vocab.end() && *it == tok) counts[static_cast<std::size_t>(it - vocab.begin())] += 1.0;
  }
  return Sparse(counts.begin(), counts.end());
}

inline double dot(const Sparse& x, const std::vector<double>& w) {
  double z = 0.0;
  for (const auto& [i, v] : x) z += w[i] * v;
  return z;
}

struct Fit {
  int epochs = 0;
  double mean_loss = 0.0;
};

// Full-batch gradient descent from the given parameters on the summed
// log-loss plus L2 (bias unpenalized). A step that would raise that objective
// is retried at half the learning rate, which then stays halved. Stops once
// the mean log-loss reaches kStopLoss or after kMaxEpochs.
inline Fit gradient_descent(const std::vector<Sparse>& xs, const std::vector<double>& ys, std::vector<double>& w,
                            double& b, TrainTrace* trace) {
  const double n = static_cast<double>(xs.size());
  auto evaluate = [&](const std::vector<double>& wv, double bv) {
    double loss = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      const double z = dot(xs[i], wv) + bv;
      loss += softplus(z) - ys[i] * z;
    }
    double reg = 0.0;
    for (double v : wv) reg += v * v;
    return std::pair{loss / n, loss + 0.5 * kL2 * reg};
  };

  double lr = kLearningRate;
  auto [mean, objective] = evaluate(w, b);
  std::vector<double> grad(w.size()), next(w.size());
  int epoch = 0;
  for (; epoch < kMaxEpochs && mean > kStopLoss; ++epoch) {
    if (trace) {
      trace->objective.push_back(objective);
      trace->mean_loss.push_back(mean);
    }
    std::fill(grad.begin(), grad.end(), 0.0);
    double gb = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      const double r = sigmoid(dot(xs[i], w) + b) - ys[i];
      for (const auto& [j, v] : xs[i]) grad[j] += r * v;
      gb += r;
    }
    for (;;) {
      for (std::size_t j = 0; j < w.size(); ++j) next[j] = w[j] - lr * (grad[j] + kL2 * w[j]);
      const double nb = b - lr * gb;
      const auto [m2, o2] = evaluate(next, nb);
      if (o2 <= objective + 1e-12 * std::max(1.0, std::abs(objective)) || lr < 1e-15) {
        w.swap(next);
        b = nb;
        mean = m2;
        objective = o2;
        break;
      }
      lr *= 0.5;
    }
  }
  if (trace) {
    trace->objective.push_back(objective);
    trace->mean_loss.push_back(mean);
    trace->final_learning_rate = lr;
  }
  return Fit{epoch, mean};
}

inline StoredExample store(const LabeledExample& e, ModelKind kind);

inline void fit_text(ModelArtifact& m, TrainTrace* trace) {
  std::sort(m.examples.begin(), m.examples.end(), example_before);
  std::set<std::string> tokens;
  for (const auto& e : m.examples)
    for (auto& t : tokenize(e.text)) tokens.insert(std::move(t));
  // carry learned weights over to the (possibly larger) vocabulary
  std::vector<std::string> vocab(tokens.begin(), tokens.end());
  std::vector<double> w(vocab.size(), 0.0);
  for (std::size_t i = 0; i < m.text.vocabulary.size(); ++i) {
    auto it = std::lower_bound(vocab.begin(), vocab.end(), m.text.vocabulary[i]);
    if (it != vocab.end() && *it == m.text.vocabulary[i]) w[static_cast<std::size_t>(it - vocab.begin())] = m.text.weights[i];
  }
  std::vector<Sparse> xs;
  std::vector<double> ys;
  xs.reserve(m.examples.size());
  for (const auto& e : m.examples) {
    xs.push_back(featurize(vocab, e.text));
    ys.push_back(e.label == Label::positive ? 1.0 : 0.0);
  }
  double b = m.text.bias;
  const auto fit = gradient_descent(xs, ys, w, b, trace);
  m.text = TextParams{std::move(vocab), std::move(w), b};
  m.meta.final_loss = fit.mean_loss;
  m.meta.epochs = fit.epochs;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Patches

/// 16x16 bilinear resample of `r` in `g`, mean-subtracted and scaled to unit
/// length (all zeros for a flat patch).
inline std::vector<double> patch_feature(const GrayImage& g, const Region& r) {
  require(r.within(g.width, g.height), "patch region must lie inside the image");
  require(r.w >= kMinPatchSide && r.h >= kMinPatchSide, "patches must be at least 8x8");
  const auto tx = rerender::detail::bilinear_taps(r.w, kPatchSide);
  const auto ty = rerender::detail::bilinear_taps(r.h, kPatchSide);
  std::vector<double> f(kPatchFeatures);
  double mean = 0.0;
  for (int y = 0; y < kPatchSide; ++y) {
    const double* r0 = g.values.data() + static_cast<std::size_t>(r.y + ty.lo[y]) * g.width + r.x;
    const double* r1 = g.values.data() + static_cast<std::size_t>(r.y + ty.hi[y]) * g.width + r.x;
    for (int x = 0; x < kPatchSide; ++x) {
      const double top = r0[tx.lo[x]] + (r0[tx.hi[x]] - r0[tx.lo[x]]) * tx.frac[x];
      const double bot = r1[tx.lo[x]] + (r1[tx.hi[x]] - r1[tx.lo[x]]) * tx.frac[x];
      const double v = top + (bot - top) * ty.frac[y];
      f[static_cast<std::size_t>(y * kPatchSide + x)] = v;
      mean += v;
    }
  }
  mean /= kPatchFeatures;
  double ss = 0.0;
  for (double& v : f) {
    v -= mean;
    ss += v * v;
  }
  const double norm = std::sqrt(ss);
  if (norm < 1e-9) {
    std::fill(f.begin(), f.end(), 0.0);
  } else {
    for (double& v : f) v /= norm;
  }
  return f;
}

inline std::vector<double> patch_feature(const GrayImage& g) { return patch_feature(g, g.bounds()); }

inline double distance(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return std::sqrt(s);
}

namespace detail {

inline StoredExample store(const LabeledExample& e, ModelKind kind) {
  if (e.kind != kind) fail(ErrorCode::invalid_argument, "example kind does not match the model kind");
  StoredExample s{e.label, e.contributor, e.timestep, {}, {}};
  if (kind == ModelKind::text) {
    const auto* t = std::get_if<std::string>(&e.payload);
    require(t != nullptr, "text example needs a string payload");
    s.text = *t;
  } else {
    const auto* g = std::get_if<GrayImage>(&e.payload);
    require(g != nullptr, "patch example needs an image payload");
    s.feature = patch_feature(*g);
  }
  return s;
}

// Examples are summed in canonical order so centroids do not depend on the
// order they were supplied in.
inline void fit_patch(ModelArtifact& m) {
  std::sort(m.examples.begin(), m.examples.end(), [](const StoredExample& a, const StoredExample& b) {
    return std::tie(a.feature, a.label, a.contributor, a.timestep) <
           std::tie(b.feature, b.label, b.contributor, b.timestep);
  });
  std::vector<double> pos(kPatchFeatures, 0.0), neg(kPatchFeatures, 0.0);
  double np = 0, nn = 0;
  for (const auto& e : m.examples) {
    auto& acc = e.label == Label::positive ? pos : neg;
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += e.feature[i];
    (e.label == Label::positive ? np : nn) += 1.0;
  }
  for (double& v : pos) v /= np;
  for (double& v : neg) v /= nn;
  const double margin = 0.5 * distance(pos, neg);
  m.patch = PatchParams{std::move(pos), std::move(neg), margin};
  m.meta.final_loss = 0.0;
  m.meta.epochs = 0;
}

inline void count_classes(ModelArtifact& m) {
  m.meta.num_positive = static_cast<std::size_t>(
      std::count_if(m.examples.begin(), m.examples.end(), [](const auto& e) { return e.label == Label::positive; }));
  m.meta.num_negative = m.examples.size() - m.meta.num_positive;
}

inline ModelArtifact train(ModelKind kind, const std::vector<LabeledExample>& examples, std::string model_id,
                           TrainTrace* trace, std::optional<std::int64_t> now) {
  ModelArtifact m;
  m.model_id = std::move(model_id);
  m.kind = kind;
  m.version = 1;
  m.examples.reserve(examples.size());
  for (const auto& e : examples) m.examples.push_back(store(e, kind));
  check_both_classes(m.examples);
  if (kind == ModelKind::text) {
    fit_text(m, trace);
  } else {
    fit_patch(m);
  }
  count_classes(m);
  m.meta.trained_at = now.value_or(unix_ms());
  return m;
}

}  // namespace detail

inline ModelArtifact train_text(const std::vector<LabeledExample>& examples, std::string model_id = "text-model",
                                TrainTrace* trace = nullptr, std::optional<std::int64_t> now = std::nullopt) {
  return detail::train(ModelKind::text, examples, std::move(model_id), trace, now);
}

inline ModelArtifact train_patch(const std::vector<LabeledExample>& examples, std::string model_id = "patch-model",
                                 std::optional<std::int64_t> now = std::nullopt) {
  return detail::train(ModelKind::patch, examples, std::move(model_id), nullptr, now);
}

struct Prediction {
  Label label = Label::negative;
  double confidence = 0.0;  // probability of the positive class
};

inline Prediction predict_text(const ModelArtifact& m, std::string_view s) {
  if (m.kind != ModelKind::text) fail(ErrorCode::invalid_argument, "predict_text needs a text model");
  const double p = detail::sigmoid(detail::dot(detail::featurize(m.text.vocabulary, s), m.text.weights) + m.text.bias);
  return Prediction{p >= 0.5 ? Label::positive : Label::negative, p};
}

/// Nearest-centroid decision for one feature vector; score in (0, 1] for positives.
inline std::optional<double> classify_feature(const ModelArtifact& m, const std::vector<double>& f) {
  const double dp = distance(f, m.patch.positive_centroid);
  const double dn = distance(f, m.patch.negative_centroid);
  if (!(dp < dn)) return std::nullopt;
  if (m.patch.margin <= 0.0) return 1.0;
  return std::clamp((dn - dp) / (2.0 * m.patch.margin), 0.0, 1.0);
}

inline Prediction predict_patch(const ModelArtifact& m, const GrayImage& patch) {
  if (m.kind != ModelKind::patch) fail(ErrorCode::invalid_argument, "predict_patch needs a patch model");
  const auto s = classify_feature(m, patch_feature(patch));
  return s ? Prediction{Label::positive, *s} : Prediction{Label::negative, 0.0};
}

/// Sliding square windows, every `stride` pixels; positives survive NMS.
inline std::vector<Detection> detect_patches(const GrayImage& g, const ModelArtifact& m, int window, int stride) {
  if (m.kind != ModelKind::patch) fail(ErrorCode::invalid_argument, "detect_patches needs a patch model");
  require(window >= kMinPatchSide, "window must be at least 8 pixels");
  require(stride >= 1, "stride must be at least 1");
  std::vector<Detection> out;
  if (window > g.width || window > g.height) return out;
  for (int y = 0; y + window <= g.height; y += stride)
    for (int x = 0; x + window <= g.width; x += stride) {
      const Region r{x, y, window, window};
      if (auto s = classify_feature(m, patch_feature(g, r)))
        out.push_back(Detection{r, *s, 1.0, m.model_id, HookKind::model});
    }
  return nms(std::move(out), kPatchIou);
}

inline std::vector<Detection> detect_patches(const Frame& f, const ModelArtifact& m, int window, int stride) {
  return detect_patches(to_grayscale(f), m, window, stride);
}

/// Retrains on stored + new examples and bumps the version. Text continues
/// descent from the current weights; patches recompute centroids.
inline ModelArtifact incremental_update(const ModelArtifact& m, const std::vector<LabeledExample>& new_examples,
                                        TrainTrace* trace = nullptr, std::optional<std::int64_t> now = std::nullopt) {
  for (const auto& e : new_examples)
    if (e.kind != m.kind) fail(ErrorCode::invalid_argument, "example kind does not match the model kind");
  if (new_examples.empty()) return m;
  ModelArtifact next = m;
  for (const auto& e : new_examples) next.examples.push_back(detail::store(e, m.kind));
  detail::check_both_classes(next.examples);
  if (m.kind == ModelKind::text) {
    detail::fit_text(next, trace);
  } else {
    detail::fit_patch(next);
  }
  detail::count_classes(next);
  next.version = m.version + 1;
  next.meta.trained_at = now.value_or(unix_ms());
  return next;
}

// ---------------------------------------------------------------------------
// Persistence

inline nlohmann::json to_json(const ModelArtifact& m) {
  nlohmann::json params;
  if (m.kind == ModelKind::text) {
    params = {{"vocabulary", m.text.vocabulary}, {"weights", m.text.weights}, {"bias", m.text.bias}};
  } else {
    params = {{"positive_centroid", m.patch.positive_centroid},
              {"negative_centroid", m.patch.negative_centroid},
              {"margin", m.patch.margin}};
  }
  nlohmann::json ex = nlohmann::json::array();
  for (const auto& e : m.examples) {
    nlohmann::json j{{"label", to_string(e.label)}, {"contributor", e.contributor}, {"timestep", e.timestep}};
    if (m.kind == ModelKind::text) {
      j["text"] = e.text;
    } else {
      j["feature"] = e.feature;
    }
    ex.push_back(std::move(j));
  }
  return {{"model_id", m.model_id},
          {"kind", to_string(m.kind)},
          {"version", m.version},
          {"parameters", std::move(params)},
          {"training_meta",
           {{"num_positive", m.meta.num_positive},
            {"num_negative", m.meta.num_negative},
            {"final_loss", m.meta.final_loss},
            {"trained_at", m.meta.trained_at},
            {"epochs", m.meta.epochs}}},
          {"examples", std::move(ex)}};
}

inline ModelArtifact from_json(const nlohmann::json& j) {
  try {
    ModelArtifact m;
    m.model_id = j.at("model_id").get<std::string>();
    m.kind = parse_kind(j.at("kind").get<std::string>());
    m.version = j.at("version").get<std::int64_t>();
    const auto& p = j.at("parameters");
    if (m.kind == ModelKind::text) {
      m.text.vocabulary = p.at("vocabulary").get<std::vector<std::string>>();
      m.text.weights = p.at("weights").get<std::vector<double>>();
      m.text.bias = p.at("bias").get<double>();
      require(m.text.vocabulary.size() == m.text.weights.size(), "vocabulary and weights differ in length");
      require(std::is_sorted(m.text.vocabulary.begin(), m.text.vocabulary.end()), "vocabulary must be sorted");
    } else {
      m.patch.positive_centroid = p.at("positive_centroid").get<std::vector<double>>();
      m.patch.negative_centroid = p.at("negative_centroid").get<std::vector<double>>();
      m.patch.margin = p.at("margin").get<double>();
      require(m.patch.positive_centroid.size() == kPatchFeatures && m.patch.negative_centroid.size() == kPatchFeatures,
              "centroids must have 256 entries");
    }
    const auto& meta = j.at("training_meta");
    m.meta.num_positive = meta.at("num_positive").get<std::size_t>();
    m.meta.num_negative = meta.at("num_negative").get<std::size_t>();
    m.meta.final_loss = meta.at("final_loss").get<double>();
    m.meta.trained_at = meta.at("trained_at").get<std::int64_t>();
    m.meta.epochs = meta.value("epochs", 0);
    for (const auto& e : j.at("examples")) {
      StoredExample s;
      s.label = parse_label(e.at("label").get<std::string>());
      s.contributor = e.at("contributor").get<std::string>();
      s.timestep = e.at("timestep").get<std::int64_t>();
      if (m.kind == ModelKind::text) {
        s.text = e.at("text").get<std::string>();
      } else {
        s.feature = e.at("feature").get<std::vector<double>>();
      }
      m.examples.push_back(std::move(s));
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::invalid_argument, std::string("malformed model artifact: ") + e.what());
  }
}

inline std::filesystem::path artifact_path(const std::filesystem::path& dir, std::int64_t version) {
  return dir / ("model_v" + std::to_string(version) + ".json");
}

/// Writes `dir/model_v<version>.json` atomically (temp file + rename).
inline std::filesystem::path save_artifact(const std::filesystem::path& dir, const ModelArtifact& m) {
  std::filesystem::create_directories(dir);
  const auto path = artifact_path(dir, m.version);
  const auto tmp = path.string() + ".tmp";
  const auto text = to_json(m).dump();
  write_file_bytes(tmp, Bytes(text.begin(), text.end()));
  std::filesystem::rename(tmp, path);
  return path;
}

inline ModelArtifact load_artifact(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  try {
    return from_json(nlohmann::json::parse(bytes.begin(), bytes.end()));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::invalid_argument, "cannot parse " + path.string() + ": " + e.what());
  }
}

/// Highest-version artifact in `dir`, if any.
inline std::optional<ModelArtifact> load_latest(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) return std::nullopt;
  std::optional<std::pair<std::int64_t, std::filesystem::path>> best;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    const auto name = entry.path().filename().string();
    if (name.rfind("model_v", 0) != 0 || entry.path().extension() != ".json") continue;
    try {
      const auto v = std::stoll(name.substr(7, name.size() - 7 - 5));
      if (!best || v > best->first) best = std::pair{v, entry.path()};
    } catch (const std::exception&) {
    }
  }
  if (!best) return std::nullopt;
  return load_artifact(best->second);
}

// ---------------------------------------------------------------------------
// Collaborative labelling simulation

struct CorpusEntry {
  std::string text;
  Label label = Label::positive;
};

using Corpus = std::vector<CorpusEntry>;

struct CurvePoint {
  std::int64_t timestep = 0;
  std::size_t accumulated_positives = 0;
  double accuracy = 0.0;
};

inline double accuracy(const ModelArtifact& m, const Corpus& holdout) {
  require(!holdout.empty(), "holdout corpus is empty");
  std::size_t ok = 0;
  for (const auto& e : holdout) ok += predict_text(m, e.text).label == e.label;
  return static_cast<double>(ok) / static_cast<double>(holdout.size());
}

namespace detail {

inline std::pair<std::vector<const CorpusEntry*>, std::vector<const CorpusEntry*>> split(const Corpus& c) {
  std::vector<const CorpusEntry*> pos, neg;
  for (const auto& e : c) (e.label == Label::positive ? pos : neg).push_back(&e);
  if (pos.empty()) fail(ErrorCode::invalid_argument, "corpus has no positive sentences");
  if (neg.empty()) fail(ErrorCode::invalid_argument, "corpus has no negative sentences");
  return {pos, neg};
}

inline std::vector<LabeledExample> negatives_as_examples(const std::vector<const CorpusEntry*>& neg) {
  std::vector<LabeledExample> out;
  out.reserve(neg.size());
  for (const auto* e : neg) out.push_back(LabeledExample::text(e->text, Label::negative, "corpus", 0));
  return out;
}

}  // namespace detail

/// Holdout accuracy of a model trained on the whole corpus.
inline double baseline_accuracy(const Corpus& corpus, const Corpus& holdout) {
  const auto [pos, neg] = detail::split(corpus);
  auto ex = detail::negatives_as_examples(neg);
  for (const auto* e : pos) ex.push_back(LabeledExample::text(e->text, Label::positive, "corpus", 0));
  return accuracy(train_text(ex, "baseline", nullptr, 0), holdout);
}

/// M users each contribute N unseen positives per timestep (disjoint draws
/// from a seeded shuffle); every negative is available from the start. The
/// model is retrained on the accumulated set at each step.
inline std::vector<CurvePoint> simulate_collaboration(int users, int per_user, std::int64_t timesteps,
                                                      const Corpus& corpus, const Corpus& holdout,
                                                      std::uint64_t seed) {
  require(users >= 1, "number of users must be at least 1");
  require(per_user >= 1, "inputs per user must be at least 1");
  require(timesteps >= 1, "number of timesteps must be at least 1");
  require(!holdout.empty(), "holdout corpus is empty");
  auto [pos, neg] = detail::split(corpus);
  Rng rng(seed);
  rng.shuffle(pos);

  auto examples = detail::negatives_as_examples(neg);
  std::vector<CurvePoint> curve;
  std::size_t drawn = 0;
  std::optional<double> last;
  for (std::int64_t t = 1; t <= timesteps; ++t) {
    const std::size_t before = drawn;
    for (int u = 0; u < users; ++u)
      for (int k = 0; k < per_user && drawn < pos.size(); ++k, ++drawn)
        examples.push_back(LabeledExample::text(pos[drawn]->text, Label::positive, "user" + std::to_string(u), t));
    // training is deterministic, so an unchanged set keeps its accuracy
    if (drawn != before || !last) last = accuracy(train_text(examples, "simulation", nullptr, 0), holdout);
    curve.push_back(CurvePoint{t, drawn, *last});
  }
  return curve;
}

inline std::string curve_csv(const std::vector<CurvePoint>& curve) {
  std::string out = "timestep,accumulated_positives,accuracy\n";
  char buf[64];
  for (const auto& p : curve) {
    std::snprintf(buf, sizeof buf, "%.6f", p.accuracy);
    out += std::to_string(p.timestep) + "," + std::to_string(p.accumulated_positives) + "," + buf + "\n";
  }
  return out;
}

/// First timestep whose accuracy reaches `fraction` of `baseline`.
inline std::optional<std::int64_t> first_reaching(const std::vector<CurvePoint>& curve, double baseline,
                                                  double fraction = 0.95) {
  for (const auto& p : curve)
    if (p.accuracy >= fraction * baseline) return p.timestep;
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Synthetic corpora

namespace detail {

inline const std::vector<std::string>& neutral_words() {
  static const std::vector<std::string> words = {
      "the",     "a",       "and",     "to",      "of",      "in",      "is",      "it",      "you",     "that",
      "was",     "for",     "on",      "are",     "with",    "as",      "they",    "be",      "at",      "one",
      "have",    "this",    "from",    "by",      "hot",     "word",    "but",     "what",    "some",    "we",
      "can",     "out",     "other",   "were",    "all",     "there",   "when",    "up",      "use",     "your",
      "how",     "said",    "an",      "each",    "she",     "which",   "do",      "their",   "time",    "if",
      "will",    "way",     "about",   "many",    "then",    "them",    "write",   "would",   "like",    "so",
      "these",   "her",     "long",    "make",    "thing",   "see",     "him",     "two",     "has",     "look",
      "more",    "day",     "could",   "go",      "come",    "did",     "number",  "sound",   "no",      "most",
      "people",  "my",      "over",    "know",    "water",   "than",    "call",    "first",   "who",     "may",
      "down",    "side",    "been",    "now",     "find",    "any",     "new",     "work",    "part",    "take",
      "get",     "place",   "made",    "live",    "where",   "after",   "back",    "little",  "only",    "round",
      "man",     "year",    "came",    "show",    "every",   "good",    "me",      "give",    "our",     "under",
      "name",    "very",    "through", "just",    "form",    "great",   "think",   "say",     "help",    "low",
      "line",    "before",  "turn",    "cause",   "same",    "mean",    "differ",  "move",    "right",   "boy",
      "old",     "too",     "does",    "tell",    "sentence", "set",    "three",   "want",    "air",     "well",
      "also",    "play",    "small",   "end",     "put",     "home",    "read",    "hand",    "port",    "large",
      "spell",   "add",     "even",    "land",    "here",    "must",    "big",     "high",    "such",    "follow",
      "act",     "why",     "ask",     "men",     "change",  "went",    "light",   "kind",    "off",     "need",
      "house",   "picture", "try",     "us",      "again",   "animal",  "point",   "mother",  "world",   "near",
      "build",   "self",    "earth",   "father",  "head",    "stand",   "own",     "page",    "should",  "country",
      "found",   "answer",  "school",  "grow",    "study",   "still",   "learn",   "plant",   "cover",   "food",
      "sun",     "four",    "thought", "let",     "keep",    "eye",     "never",   "last",    "door",    "between",
      "city",    "tree",    "cross",   "since",   "hard",    "start",   "might",   "story",   "saw",     "far",
      "sea",     "draw",    "left",    "late",    "run",     "while",   "press",   "close",   "night",   "real",
      "life",    "few",     "stop",    "open",    "seem",    "together", "next",   "white",   "children", "begin",
      "got",     "walk",    "example", "ease",    "paper",   "often",   "always",  "music",   "those",   "both",
      "mark",    "book",    "letter",  "until",   "mile",    "river",   "car",     "feet",    "care",    "second",
      "group",   "carry",   "took",    "rain",    "eat",     "room",    "friend",  "began",   "idea",    "fish",
      "mountain", "north",  "once",    "base",    "hear",    "horse",   "cut",     "sure",    "watch",   "color",
      "face",    "wood",    "main",    "enough",  "plain",   "girl",    "usual",   "young",   "ready",   "above",
  };
  return words;
}

// Pronounceable made-up tokens standing in for one niche class of content.
inline std::vector<std::string> marker_words(std::size_t count, Rng& rng) {
  static const char* onsets[] = {"b", "d", "g", "k", "v", "z", "gr", "kr", "th", "sk", "bl", "dr"};
  static const char* vowels[] = {"a", "o", "u", "e", "i", "oo", "au"};
  static const char* codas[] = {"x", "k", "sh", "rn", "g", "z", "th", "mp"};
  std::set<std::string> seen;
  std::vector<std::string> out;
  while (out.size() < count) {
    std::string w;
    const int syll = static_cast<int>(rng.uniform_int(1, 2));
    for (int s = 0; s < syll; ++s) {
      w += onsets[rng.uniform_int(0, 11)];
      w += vowels[rng.uniform_int(0, 6)];
    }
    w += codas[rng.uniform_int(0, 7)];
    if (seen.insert(w).second) out.push_back(w);
  }
  return out;
}

inline std::string neutral_sentence(Rng& rng, int min_words, int max_words) {
  const auto& words = neutral_words();
  const int n = static_cast<int>(rng.uniform_int(min_words, max_words));
  std::string s;
  for (int i = 0; i < n; ++i) {
    if (i) s += ' ';
    s += words[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(words.size()) - 1))];
  }
  return s;
}

}  // namespace detail

struct SyntheticCorpusOptions {
  std::size_t positives = 1000;
  std::size_t negatives = 5000;
  std::size_t holdout_positives = 200;
  std::size_t holdout_negatives = 0;
  std::size_t markers = 400;  // distinct class-specific tokens
  // Marker popularity falls off as 1/(rank+1)^skew, so rare markers need
  // many contributed sentences before they are covered.
  double skew = 1.0;
  std::uint64_t seed = 7;
};

struct SyntheticCorpus {
  Corpus train;
  Corpus holdout;
  std::vector<std::string> markers;
};

/// Positives carry one or two class markers amid ordinary words; negatives
/// are ordinary words only.
inline SyntheticCorpus make_synthetic_corpus(const SyntheticCorpusOptions& o) {
  require(o.markers >= 1, "synthetic corpus needs at least one marker word");
  Rng rng(o.seed);
  SyntheticCorpus c;
  c.markers = detail::marker_words(o.markers, rng);
  std::vector<double> cdf;
  double total = 0.0;
  for (std::size_t i = 0; i < o.markers; ++i) {
    total += 1.0 / std::pow(static_cast<double>(i + 1), o.skew);
    cdf.push_back(total);
  }
  auto marker = [&] {
    const double u = rng.uniform() * total;
    const auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
    return c.markers[std::min(static_cast<std::size_t>(it - cdf.begin()), o.markers - 1)];
  };
  auto positive = [&] {
    auto s = detail::neutral_sentence(rng, 3, 9);
    const int k = static_cast<int>(rng.uniform_int(1, 2));
    for (int i = 0; i < k; ++i) {
      // insert at a word boundary
      std::vector<std::string> words;
      std::string cur;
      for (char ch : s) {
        if (ch == ' ') {
          words.push_back(cur);
          cur.clear();
        } else {
          cur += ch;
        }
      }
      words.push_back(cur);
      const auto at = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(words.size())));
      words.insert(words.begin() + static_cast<std::ptrdiff_t>(at), marker());
      s.clear();
      for (std::size_t w = 0; w < words.size(); ++w) s += (w ? " " : "") + words[w];
    }
    return s;
  };
  for (std::size_t i = 0; i < o.positives; ++i) c.train.push_back({positive(), Label::positive});
  for (std::size_t i = 0; i < o.negatives; ++i) c.train.push_back({detail::neutral_sentence(rng, 3, 10), Label::negative});
  for (std::size_t i = 0; i < o.holdout_positives; ++i) c.holdout.push_back({positive(), Label::positive});
  for (std::size_t i = 0; i < o.holdout_negatives; ++i)
    c.holdout.push_back({detail::neutral_sentence(rng, 3, 10), Label::negative});
  return c;
}

/// Ordinary sentences used as negatives when a text intervention has none.
inline std::vector<std::string> neutral_corpus(std::size_t count, std::uint64_t seed = 11) {
  Rng rng(seed);
  std::vector<std::string> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(detail::neutral_sentence(rng, 2, 8));
  return out;
}

// ---------------------------------------------------------------------------
// Corpus files: JSON lines {"text": ..., "label": "positive"|"negative"}

inline Corpus read_corpus(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::not_found, "cannot open corpus " + path.string());
  Corpus out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      out.push_back({j.at("text").get<std::string>(), parse_label(j.at("label").get<std::string>())});
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::invalid_argument, path.string() + ":" + std::to_string(n) + ": " + e.what());
    }
  }
  return out;
}

inline void write_corpus(const std::filesystem::path& path, const Corpus& c) {
  std::string out;
  for (const auto& e : c) out += nlohmann::json{{"text", e.text}, {"label", to_string(e.label)}}.dump() + "\n";
  write_file_bytes(path, Bytes(out.begin(), out.end()));
}

}  // namespace rerender::model
