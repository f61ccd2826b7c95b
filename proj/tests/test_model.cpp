#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "rerender/model_hook.hpp"
#include "support.hpp"

using namespace rerender;
using namespace rerender::model;

namespace {

std::vector<LabeledExample> toy_text_set() {
  const std::vector<std::string> pos_tail = {"now", "today", "cheap", "fast", "here", "online", "quick", "deal", "sale", "offer"};
  const std::vector<std::string> neg_tail = {"then", "soon", "later", "friend", "mate", "all", "again", "there", "bye", "pal"};
  std::vector<LabeledExample> ex;
  for (int i = 0; i < 10; ++i) {
    ex.push_back(LabeledExample::text("buy pills " + pos_tail[static_cast<std::size_t>(i)], Label::positive, "u", i));
    ex.push_back(LabeledExample::text("see you tomorrow " + neg_tail[static_cast<std::size_t>(i)], Label::negative, "u", i));
  }
  return ex;
}

// Token sets of the two classes never meet, so some weight vector separates them.
bool disjoint_vocabularies(const std::vector<LabeledExample>& ex) {
  std::set<std::string> pos, neg;
  for (const auto& e : ex)
    for (const auto& t : tokenize(std::get<std::string>(e.payload))) (e.label == Label::positive ? pos : neg).insert(t);
  for (const auto& t : pos)
    if (neg.count(t)) return false;
  return true;
}

GrayImage disk(Rng& rng, int side) {
  GrayImage g(side, side, 160.0 + rng.uniform(-10, 10));
  const double cx = side / 2.0 + rng.uniform(-2, 2), cy = side / 2.0 + rng.uniform(-2, 2);
  const double r = side * rng.uniform(0.25, 0.35);
  for (int y = 0; y < side; ++y)
    for (int x = 0; x < side; ++x)
      if (std::hypot(x + 0.5 - cx, y + 0.5 - cy) <= r) g.at(x, y) = 30.0 + rng.uniform(0, 10);
  return g;
}

GrayImage square(Rng& rng, int side) {
  GrayImage g(side, side, 90.0 + rng.uniform(-10, 10));
  const int a = static_cast<int>(rng.uniform_int(1, side / 4)), b = static_cast<int>(rng.uniform_int(side / 2, side - 2));
  for (int y = a; y <= b; ++y)
    for (int x = a; x <= b; ++x) g.at(x, y) = 230.0 + rng.uniform(0, 10);
  return g;
}

std::vector<LabeledExample> disk_square_set(std::uint64_t seed, int n = 20) {
  Rng rng(seed);
  std::vector<LabeledExample> ex;
  for (int i = 0; i < n; ++i) {
    ex.push_back(LabeledExample::patch(disk(rng, static_cast<int>(rng.uniform_int(16, 32))), Label::positive));
    ex.push_back(LabeledExample::patch(square(rng, static_cast<int>(rng.uniform_int(16, 32))), Label::negative));
  }
  return ex;
}

// Independent feature: dense bilinear resample, centered, unit length.
std::vector<double> oracle_feature(const GrayImage& g) {
  std::vector<double> f;
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 16; ++x) f.push_back(testsupport::oracle_bilinear(g, 16, 16, x, y));
  double mean = 0;
  for (double v : f) mean += v;
  mean /= 256;
  double ss = 0;
  for (double& v : f) {
    v -= mean;
    ss += v * v;
  }
  for (double& v : f) v = ss > 1e-18 ? v / std::sqrt(ss) : 0.0;
  return f;
}

double oracle_dist(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

Corpus small_corpus(std::uint64_t seed, std::size_t pos = 60, std::size_t neg = 300) {
  SyntheticCorpusOptions o;
  o.positives = pos;
  o.negatives = neg;
  o.holdout_positives = 40;
  o.markers = 30;
  o.seed = seed;
  return make_synthetic_corpus(o).train;
}

}  // namespace

TEST(Tokenize, LowercasesAndSplitsOnNonAlphanumerics) {
  EXPECT_EQ(tokenize("Buy PILLS,now!! 24/7"), (std::vector<std::string>{"buy", "pills", "now", "24", "7"}));
  EXPECT_TRUE(tokenize("  ...  ").empty());
}

TEST(TrainText, SeparableToySetIsLearned) {
  const auto ex = toy_text_set();
  ASSERT_TRUE(disjoint_vocabularies(ex));
  const auto m = train_text(ex);
  EXPECT_EQ(m.kind, ModelKind::text);
  EXPECT_EQ(m.version, 1);
  EXPECT_EQ(m.text.vocabulary.size(), m.text.weights.size());
  EXPECT_EQ(m.meta.num_positive, 10u);
  EXPECT_EQ(m.meta.num_negative, 10u);
  EXPECT_LE(m.meta.final_loss, kStopLoss);
  for (const auto& e : ex) EXPECT_EQ(predict_text(m, std::get<std::string>(e.payload)).label, e.label);
}

TEST(TrainText, SingleClassNamesTheMissingClass) {
  std::vector<LabeledExample> ex;
  for (const auto& e : toy_text_set())
    if (e.label == Label::positive) ex.push_back(e);
  try {
    train_text(ex);
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::invalid_argument);
    EXPECT_NE(std::string(e.what()).find("negative"), std::string::npos);
  }
}

TEST(TrainText, RetrainingIsBitIdentical) {
  auto ex = toy_text_set();
  const auto a = train_text(ex, "m", nullptr, 0);
  std::reverse(ex.begin(), ex.end());  // supplied order does not matter either
  const auto b = train_text(ex, "m", nullptr, 0);
  EXPECT_EQ(a.text, b.text);
  EXPECT_EQ(a.examples, b.examples);
}

TEST(TrainText, ObjectiveNeverIncreases) {
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    const auto corpus = small_corpus(seed);
    std::vector<LabeledExample> ex;
    for (const auto& e : corpus) ex.push_back(LabeledExample::text(e.text, e.label));
    TrainTrace trace;
    train_text(ex, "m", &trace, 0);
    ASSERT_GE(trace.objective.size(), 2u);
    for (std::size_t i = 1; i < trace.objective.size(); ++i)
      EXPECT_LE(trace.objective[i], trace.objective[i - 1] + 1e-12 * std::abs(trace.objective[i - 1]));
  }
}

TEST(PredictText, NoKnownTokensGiveSigmoidOfBias) {
  const auto m = train_text(toy_text_set());
  const double expect = 1.0 / (1.0 + std::exp(-m.text.bias));
  EXPECT_NEAR(predict_text(m, "").confidence, expect, 1e-15);
  EXPECT_NEAR(predict_text(m, "zzz qqq").confidence, expect, 1e-15);
  const auto p = predict_text(m, "buy");
  EXPECT_EQ(p.label == Label::positive, p.confidence >= 0.5);
}

TEST(PredictText, KindMismatchRejected) {
  const auto m = train_patch(disk_square_set(1));
  EXPECT_THROW(predict_text(m, "x"), Error);
  EXPECT_THROW(predict_patch(train_text(toy_text_set()), GrayImage(8, 8)), Error);
}

TEST(TrainPatch, DisksVersusSquaresMatchesCentroidOracle) {
  const auto ex = disk_square_set(2);
  const auto m = train_patch(ex);
  // independent centroids
  std::vector<double> cp(256, 0.0), cn(256, 0.0);
  for (const auto& e : ex) {
    const auto f = oracle_feature(std::get<GrayImage>(e.payload));
    auto& c = e.label == Label::positive ? cp : cn;
    for (std::size_t i = 0; i < 256; ++i) c[i] += f[i] / 20.0;
  }
  for (std::size_t i = 0; i < 256; ++i) {
    EXPECT_NEAR(m.patch.positive_centroid[i], cp[i], 1e-12);
    EXPECT_NEAR(m.patch.negative_centroid[i], cn[i], 1e-12);
  }
  EXPECT_NEAR(m.patch.margin, oracle_dist(cp, cn) / 2.0, 1e-12);
  int correct = 0;
  for (const auto& e : ex) {
    const auto f = oracle_feature(std::get<GrayImage>(e.payload));
    const bool oracle_pos = oracle_dist(f, cp) < oracle_dist(f, cn);
    const auto p = predict_patch(m, std::get<GrayImage>(e.payload));
    EXPECT_EQ(p.label == Label::positive, oracle_pos);
    correct += (p.label == e.label);
  }
  EXPECT_EQ(correct, 40);
}

TEST(TrainPatch, CentroidsArePermutationInvariant) {
  auto ex = disk_square_set(3);
  const auto a = train_patch(ex);
  Rng rng(9);
  for (int i = 0; i < 5; ++i) {
    rng.shuffle(ex);
    EXPECT_EQ(train_patch(ex).patch, a.patch);
  }
}

TEST(TrainPatch, DuplicatedSetKeepsCentroids) {
  auto ex = disk_square_set(4);
  const auto a = train_patch(ex);
  auto doubled = ex;
  doubled.insert(doubled.end(), ex.begin(), ex.end());
  const auto b = train_patch(doubled);
  for (std::size_t i = 0; i < 256; ++i) EXPECT_NEAR(a.patch.positive_centroid[i], b.patch.positive_centroid[i], 1e-15);
}

TEST(TrainPatch, TinyPatchRejected) {
  auto ex = disk_square_set(5, 2);
  ex.push_back(LabeledExample::patch(GrayImage(4, 4, 1.0), Label::positive));
  EXPECT_THROW(train_patch(ex), Error);
}

TEST(DetectPatches, FindsPlantedExemplar) {
  const auto m = train_patch(disk_square_set(6), "image-disk");
  Rng rng(7);
  GrayImage frame(120, 90, 90.0);
  for (double& v : frame.values) v += rng.uniform(-3, 3);
  const auto d = disk(rng, 24);
  for (int y = 0; y < 24; ++y)
    for (int x = 0; x < 24; ++x) frame.at(50 + x, 30 + y) = d.at(x, y);
  const auto dets = detect_patches(frame, m, 24, 2);
  ASSERT_FALSE(dets.empty());
  EXPECT_GE(iou(dets.front().region, Region{50, 30, 24, 24}), 0.5);
  EXPECT_EQ(dets.front().kind, HookKind::model);
  EXPECT_EQ(dets.front().label, "image-disk");

  // exhaustive window oracle
  std::vector<testsupport::OracleBox> boxes;
  for (int y = 0; y + 24 <= 90; y += 2)
    for (int x = 0; x + 24 <= 120; x += 2) {
      const auto f = oracle_feature(crop(frame, Region{x, y, 24, 24}));
      const double dp = oracle_dist(f, m.patch.positive_centroid), dn = oracle_dist(f, m.patch.negative_centroid);
      if (dp < dn) boxes.push_back({Region{x, y, 24, 24}, std::min(1.0, (dn - dp) / (2 * m.patch.margin)), 1.0});
    }
  const auto want = testsupport::oracle_nms(boxes, 0.3);
  ASSERT_EQ(dets.size(), want.size());
  for (std::size_t i = 0; i < want.size(); ++i) {
    EXPECT_EQ(dets[i].region, want[i].r);
    EXPECT_NEAR(dets[i].score, want[i].score, 1e-9);
  }
}

TEST(DetectPatches, ContractOnBlankFrame) {
  const auto m = train_patch(disk_square_set(8));
  const GrayImage blank(100, 80, 128.0);
  const auto a = detect_patches(blank, m, 16, 4);
  EXPECT_EQ(a, detect_patches(blank, m, 16, 4));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = i + 1; j < a.size(); ++j) EXPECT_LT(iou(a[i].region, a[j].region), 0.3);
}

TEST(DetectPatches, StrideEqualToWindowIsGridAligned) {
  const auto m = train_patch(disk_square_set(9));
  Rng rng(10);
  const auto g = testsupport::random_gray(rng, 100, 70);
  for (const auto& d : detect_patches(g, m, 10, 10)) {
    EXPECT_EQ(d.region.x % 10, 0);
    EXPECT_EQ(d.region.y % 10, 0);
  }
}

TEST(DetectPatches, Preconditions) {
  const auto m = train_patch(disk_square_set(11));
  EXPECT_TRUE(detect_patches(GrayImage(20, 20), m, 32, 1).empty());
  EXPECT_THROW(detect_patches(GrayImage(20, 20), m, 7, 1), Error);
  EXPECT_THROW(detect_patches(GrayImage(20, 20), m, 8, 0), Error);
}

TEST(IncrementalUpdate, EmptyIsNoOp) {
  const auto m = train_text(toy_text_set());
  const auto u = incremental_update(m, {});
  EXPECT_EQ(u.version, m.version);
  EXPECT_EQ(u.text, m.text);
}

TEST(IncrementalUpdate, PatchUnionMatchesOneShot) {
  const auto a = disk_square_set(12), b = disk_square_set(13);
  auto all = a;
  all.insert(all.end(), b.begin(), b.end());
  const auto oneshot = train_patch(all);
  const auto upd = incremental_update(train_patch(a), b);
  EXPECT_EQ(upd.version, 2);
  EXPECT_EQ(upd.patch, oneshot.patch);
  // batch order does not matter
  EXPECT_EQ(incremental_update(train_patch(b), a).patch, upd.patch);
}

TEST(IncrementalUpdate, TextGrowsVocabularyAndVersion) {
  const auto m = train_text(toy_text_set());
  const auto u = incremental_update(m, {LabeledExample::text("huge discount pills", Label::positive, "v", 1)});
  EXPECT_EQ(u.version, 2);
  EXPECT_EQ(u.examples.size(), m.examples.size() + 1);
  EXPECT_EQ(u.text.vocabulary.size(), u.text.weights.size());
  EXPECT_TRUE(std::binary_search(u.text.vocabulary.begin(), u.text.vocabulary.end(), "discount"));
  EXPECT_EQ(predict_text(u, "huge discount pills").label, Label::positive);
  EXPECT_THROW(incremental_update(m, {LabeledExample::patch(GrayImage(8, 8), Label::positive)}), Error);
}

TEST(Persistence, RoundTripsExactly) {
  testsupport::TempDir dir;
  auto m = train_text(toy_text_set(), "text-spam", nullptr, 1234);
  const auto path = save_artifact(dir.path() / "interventions" / "text-spam", m);
  EXPECT_EQ(path.filename(), "model_v1.json");
  const auto back = load_artifact(path);
  EXPECT_EQ(back.text, m.text);
  EXPECT_EQ(back.examples, m.examples);
  EXPECT_EQ(back.meta.trained_at, 1234);

  const auto p = train_patch(disk_square_set(14), "image-x");
  const auto pback = from_json(nlohmann::json::parse(to_json(p).dump()));
  EXPECT_EQ(pback.patch, p.patch);

  m = incremental_update(m, {LabeledExample::text("pills pills", Label::positive)});
  save_artifact(dir.path() / "interventions" / "text-spam", m);
  const auto latest = load_latest(dir.path() / "interventions" / "text-spam");
  ASSERT_TRUE(latest);
  EXPECT_EQ(latest->version, 2);
  EXPECT_FALSE(load_latest(dir.path() / "nothing"));

  write_file_bytes(dir.path() / "bad.json", Bytes{'{', '}'});
  EXPECT_THROW(load_artifact(dir.path() / "bad.json"), Error);
}

TEST(Simulation, Preconditions) {
  const auto c = small_corpus(1);
  EXPECT_THROW(simulate_collaboration(1, 1, 0, c, c, 1), Error);
  EXPECT_THROW(simulate_collaboration(0, 1, 1, c, c, 1), Error);
  Corpus only_neg;
  for (const auto& e : c)
    if (e.label == Label::negative) only_neg.push_back(e);
  EXPECT_THROW(simulate_collaboration(1, 1, 1, only_neg, c, 1), Error);
}

TEST(Simulation, DeterministicAndAccumulating) {
  SyntheticCorpusOptions o;
  o.positives = 40;
  o.negatives = 200;
  o.holdout_positives = 30;
  o.markers = 25;
  const auto c = make_synthetic_corpus(o);
  const auto a = simulate_collaboration(2, 3, 10, c.train, c.holdout, 5);
  EXPECT_EQ(a.size(), 10u);
  const auto b = simulate_collaboration(2, 3, 10, c.train, c.holdout, 5);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].accuracy, b[i].accuracy);
    EXPECT_EQ(a[i].accumulated_positives, std::min<std::size_t>(6 * (i + 1), 40));
  }
  // exhausting the positives reproduces full-data training
  EXPECT_NEAR(a.back().accuracy, baseline_accuracy(c.train, c.holdout), 1e-9);
  // everything drawn at once reaches the baseline immediately
  const auto full = simulate_collaboration(10, 10, 2, c.train, c.holdout, 5);
  EXPECT_NEAR(full.front().accuracy, baseline_accuracy(c.train, c.holdout), 1e-9);
}

TEST(Simulation, MoreContributorsConvergeNoLater) {
  SyntheticCorpusOptions o;
  o.positives = 60;
  o.negatives = 300;
  o.holdout_positives = 40;
  o.markers = 30;
  const auto c = make_synthetic_corpus(o);
  const double base = baseline_accuracy(c.train, c.holdout);
  ASSERT_GT(base, 0.3);
  const auto slow = simulate_collaboration(1, 1, 60, c.train, c.holdout, 3);
  const auto fast = simulate_collaboration(5, 5, 60, c.train, c.holdout, 3);
  const auto ts = first_reaching(slow, base), tf = first_reaching(fast, base);
  ASSERT_TRUE(ts && tf);
  EXPECT_LE(*tf, *ts);
}

TEST(Simulation, CsvLayout) {
  const std::vector<CurvePoint> c{{1, 5, 0.25}, {2, 10, 0.5}};
  EXPECT_EQ(curve_csv(c), "timestep,accumulated_positives,accuracy\n1,5,0.250000\n2,10,0.500000\n");
}

TEST(Corpus, SyntheticIsDeterministicAndSized) {
  SyntheticCorpusOptions o;
  o.positives = 30;
  o.negatives = 50;
  o.holdout_positives = 10;
  o.holdout_negatives = 5;
  const auto a = make_synthetic_corpus(o), b = make_synthetic_corpus(o);
  EXPECT_EQ(a.train.size(), 80u);
  EXPECT_EQ(a.holdout.size(), 15u);
  for (std::size_t i = 0; i < a.train.size(); ++i) EXPECT_EQ(a.train[i].text, b.train[i].text);

  testsupport::TempDir dir;
  write_corpus(dir.path() / "c.jsonl", a.train);
  const auto back = read_corpus(dir.path() / "c.jsonl");
  ASSERT_EQ(back.size(), a.train.size());
  EXPECT_EQ(back[3].text, a.train[3].text);
  EXPECT_EQ(back[3].label, a.train[3].label);
}
