#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <thread>

#include "rerender/codec.hpp"
#include "rerender/frame_sources.hpp"
#include "rerender/mask_hook.hpp"
#include "support.hpp"

using namespace rerender;
using namespace rerender::sources;

namespace {

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected an error";
  return ErrorCode::io_error;
}

Frame numbered_frame(std::uint64_t seq, std::int64_t ts) {
  Frame f(4, 4, Rgb{static_cast<std::uint8_t>(seq), 0, 0});
  f.seq_no = seq;
  f.timestamp_ms = ts;
  return f;
}

double mean_rgb_distance(const Frame& a, const Frame& b) {
  double s = 0;
  for (std::size_t i = 0; i < std::min(a.pixels.size(), b.pixels.size()); ++i) s += std::abs(a.pixels[i] - b.pixels[i]);
  return s / static_cast<double>(a.pixels.size());
}

SourceDescriptor push_desc(const std::string& token = "secret-token") {
  SourceDescriptor d;
  d.source_id = "cam";
  d.kind = SourceKind::push;
  d.token = token;
  return d;
}

}  // namespace

TEST(Skins, SameInputsSamePixels) {
  for (const auto& id : skin_ids()) {
    const auto a = synth_skin(id, 42, 7);
    const auto b = synth_skin(id, 42, 7);
    EXPECT_TRUE(same_pixels(a.frame, b.frame)) << id;
    ASSERT_EQ(a.elements.size(), b.elements.size());
    for (std::size_t i = 0; i < a.elements.size(); ++i) EXPECT_EQ(a.elements[i].region, b.elements[i].region);
  }
}

TEST(Skins, FrameIndexScrollsOnlyTheFeed) {
  const auto a = synth_skin("mobile-a", 1, 0);
  const auto b = synth_skin("mobile-a", 1, 3);
  EXPECT_FALSE(same_pixels(a.frame, b.frame));
  for (std::size_t i = 0; i < a.elements.size(); ++i) {
    EXPECT_EQ(a.elements[i].region, b.elements[i].region);
    EXPECT_TRUE(same_pixels(crop(a.frame, a.elements[i].region), crop(b.frame, b.elements[i].region)))
        << a.elements[i].name;
  }
}

TEST(Skins, DesktopHasNoStoriesBar) {
  for (std::uint64_t seed : {0u, 5u, 99u})
    for (std::int64_t t : {0, 17, 400}) {
      EXPECT_EQ(synth_skin("desktop-a", seed, t).find("stories-bar"), nullptr);
      EXPECT_EQ(synth_skin("desktop-b", seed, t).find("stories-bar"), nullptr);
      EXPECT_NE(synth_skin("mobile-a", seed, t).find("stories-bar"), nullptr);
      EXPECT_NE(synth_skin("mobile-b", seed, t).find("stories-bar"), nullptr);
    }
  EXPECT_EQ(synth_skin("mobile-a", 0, 0).elements.size(), 10u);
  EXPECT_EQ(synth_skin("desktop-a", 0, 0).elements.size(), 9u);
}

TEST(Skins, UnknownSkinRejected) {
  EXPECT_EQ(code_of([] { synth_skin("tablet-z", 0, 0); }), ErrorCode::invalid_argument);
}

TEST(Skins, ElementsInsideFrameAndDisjoint) {
  for (const auto& id : skin_ids())
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      const auto s = synth_skin(id, seed, static_cast<std::int64_t>(seed) * 3);
      for (std::size_t i = 0; i < s.elements.size(); ++i) {
        EXPECT_TRUE(s.elements[i].region.within(s.frame.width, s.frame.height)) << id << " " << s.elements[i].name;
        for (std::size_t j = i + 1; j < s.elements.size(); ++j)
          EXPECT_EQ(intersect(s.elements[i].region, s.elements[j].region).area(), 0)
              << id << " " << s.elements[i].name << " vs " << s.elements[j].name;
      }
    }
}

// Variants of one device style share the layout: positions and sizes agree
// after dividing out the scale, and the scale ratio stays within 10%.
TEST(Skins, VariantsAreRescaledAndRecolored) {
  for (auto [a, b] : {std::pair{"mobile-a", "mobile-b"}, std::pair{"desktop-a", "desktop-b"}}) {
    const auto& sa = skin_style(a);
    const auto& sb = skin_style(b);
    const double ratio = sb.scale / sa.scale;
    EXPECT_GE(ratio, 0.9);
    EXPECT_LE(ratio, 1.1);
    EXPECT_NE(ratio, 1.0);
    const auto fa = synth_skin(a, 3, 0);
    const auto fb = synth_skin(b, 3, 0);
    ASSERT_EQ(fa.elements.size(), fb.elements.size());
    for (std::size_t i = 0; i < fa.elements.size(); ++i) {
      const auto& ra = fa.elements[i].region;
      const auto& rb = fb.elements[i].region;
      EXPECT_NEAR(rb.w, ra.w * ratio, 1.5) << fa.elements[i].name;
      EXPECT_NEAR(rb.h, ra.h * ratio, 1.5) << fa.elements[i].name;
      // Same seed → same layout offset, so anchors scale about the origin
      // up to the offset (at most 6 px) and rounding.
      EXPECT_NEAR(rb.x, ra.x * ratio, 8.0);
      EXPECT_NEAR(rb.y, ra.y * ratio, 8.0);
      // Recolored: the element's pixel histogram differs.
      EXPECT_NE(mean_rgb_distance(crop(fa.frame, ra), crop(fb.frame, rb)), 0.0);
    }
  }
}

// The pyramid contract the skins are built on: every element on every skin
// is an exact pyramid level away from a crop taken on one of the two
// reference skins of matching device style, or of the other style, so that
// at most two masks reach it with exact box size.
TEST(Skins, EveryElementReachableFromTwoReferences) {
  const auto ma = synth_skin("mobile-a", 0, 0);
  const auto mb = synth_skin("mobile-b", 0, 0);
  const auto da = synth_skin("desktop-a", 0, 0);
  for (const auto& id : skin_ids()) {
    const auto s = synth_skin(id, 0, 0);
    for (const auto& e : s.elements) {
      // The stories bar exists only on mobile, so its references are the two mobile skins.
      const std::vector<const SkinFrame*> refs =
          e.name == "stories-bar" ? std::vector<const SkinFrame*>{&ma, &mb} : std::vector<const SkinFrame*>{&ma, &da};
      bool reachable = false;
      for (const auto* ref : refs) {
        const auto* re = ref->find(e.name);
        ASSERT_NE(re, nullptr);
        for (int k = 0; k < mask::kPyramidSteps; ++k) {
          const auto lvl = mask::pyramid_level(k, re->region.w, re->region.h);
          if (lvl.w == e.region.w && lvl.h == e.region.h) reachable = true;
        }
      }
      EXPECT_TRUE(reachable) << id << " " << e.name << " " << e.region.w << "x" << e.region.h;
    }
  }
}

TEST(Skins, ReferenceCropsFindEveryElement) {
  const auto ma = synth_skin("mobile-a", 2, 0);
  const auto mb = synth_skin("mobile-b", 2, 0);
  const auto da = synth_skin("desktop-a", 2, 0);
  for (int e = 0; e < kElementCount; ++e) {
    const std::string name = kElementNames[e];
    std::vector<mask::MaskTemplate> ts;
    for (const auto* ref : name == "stories-bar" ? std::vector{&ma, &mb} : std::vector{&ma, &da})
      ts.push_back(mask::make_template(name, name, crop(to_grayscale(ref->frame), ref->find(name)->region)));
    for (const auto& id : skin_ids()) {
      const auto s = synth_skin(id, 11, 4);
      const auto dets = mask::detect_all(s.frame, ts, mask::kDefaultIntensityThreshold);
      const auto* gt = s.find(name);
      if (!gt) {
        EXPECT_TRUE(dets.empty()) << name << " on " << id;
        continue;
      }
      double best = 0.0;
      for (const auto& d : dets) best = std::max(best, iou(d.region, gt->region));
      EXPECT_GE(best, 0.8) << name << " on " << id;
    }
  }
}

TEST(ObjectScenes, DeterministicWithObjectInside) {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const auto a = synth_object_scene(seed, true);
    const auto b = synth_object_scene(seed, true);
    EXPECT_TRUE(same_pixels(a.frame, b.frame));
    ASSERT_TRUE(a.object.has_value());
    EXPECT_TRUE(a.object->within(a.frame.width, a.frame.height));
    EXPECT_EQ(a.object->w, kObjectSide);
    EXPECT_FALSE(synth_object_scene(seed, false).object.has_value());
  }
}

TEST(ObjectScenes, ObjectOnlyChangesItsBox) {
  // The background is drawn before the object from the same generator
  // stream, so the object-free scene matches outside the object box.
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto with = synth_object_scene(seed, true);
    const auto without = synth_object_scene(seed, false);
    for (int y = 0; y < with.frame.height; ++y)
      for (int x = 0; x < with.frame.width; ++x) {
        if (!with.object->contains(x, y)) {
          ASSERT_EQ(with.frame.rgb(x, y), without.frame.rgb(x, y));
        }
      }
  }
}

// ---------------------------------------------------------------------------
// Streams

TEST(Replay, YieldsFilesInLexicographicOrderThenEnds) {
  testsupport::TempDir dir;
  // Names chosen so lexicographic and numeric order differ.
  for (int i = 0; i < 10; ++i) write_png(dir.path() / ("f" + std::to_string(i * 7) + ".png"), numbered_frame(i, 0));
  write_file_bytes(dir.path() / "notes.txt", Bytes{'x'});
  std::vector<std::string> names;
  for (int i = 0; i < 10; ++i) names.push_back("f" + std::to_string(i * 7));
  std::sort(names.begin(), names.end());

  SourceDescriptor d;
  d.source_id = "replay";
  d.kind = SourceKind::replay;
  d.directory = dir.path();
  d.fps = 10.0;
  auto s = open(d);
  for (int i = 0; i < 10; ++i) {
    auto f = s->next();
    ASSERT_TRUE(f.has_value());
    const int expected = std::stoi(names[static_cast<std::size_t>(i)].substr(1)) / 7;
    EXPECT_EQ(f->rgb(0, 0).r, expected);
    EXPECT_EQ(f->seq_no, static_cast<std::uint64_t>(i));
    EXPECT_EQ(f->timestamp_ms, i * 100);
    EXPECT_EQ(f->source_id, "replay");
  }
  EXPECT_FALSE(s->next().has_value());
  EXPECT_TRUE(s->finished());
}

TEST(Replay, LoopKeepsSeqIncreasing) {
  testsupport::TempDir dir;
  for (int i = 0; i < 3; ++i) write_png(dir.path() / (std::to_string(i) + ".png"), numbered_frame(i, 0));
  SourceDescriptor d;
  d.source_id = "loop";
  d.kind = SourceKind::replay;
  d.directory = dir.path();
  d.loop = true;
  auto s = open(d);
  std::int64_t last_ts = -1;
  for (std::uint64_t i = 0; i < 10; ++i) {
    auto f = s->next();
    ASSERT_TRUE(f.has_value());
    EXPECT_EQ(f->seq_no, i);
    EXPECT_EQ(f->rgb(0, 0).r, i % 3);
    EXPECT_GE(f->timestamp_ms, last_ts);
    last_ts = f->timestamp_ms;
  }
  EXPECT_FALSE(s->finished());
}

TEST(Replay, MissingDirectoryIsNotFound) {
  SourceDescriptor d;
  d.source_id = "gone";
  d.kind = SourceKind::replay;
  d.directory = "/nonexistent/rerender/dir";
  EXPECT_EQ(code_of([&] { open(d); }), ErrorCode::not_found);
}

TEST(Synthetic, OpenedTwiceIdentical) {
  SourceDescriptor d;
  d.source_id = "syn";
  d.kind = SourceKind::synthetic;
  d.skin = "desktop-b";
  d.seed = 77;
  auto a = open(d);
  auto b = open(d);
  for (int i = 0; i < 5; ++i) {
    const auto fa = a->next();
    const auto fb = b->next();
    ASSERT_TRUE(fa && fb);
    EXPECT_TRUE(same_pixels(*fa, *fb));
    EXPECT_EQ(fa->seq_no, static_cast<std::uint64_t>(i));
    EXPECT_EQ(fa->timestamp_ms, fb->timestamp_ms);
    EXPECT_TRUE(same_pixels(*fa, synth_skin("desktop-b", 77, i).frame));
  }
}

TEST(Synthetic, BadSkinRejectedAtOpen) {
  SourceDescriptor d;
  d.source_id = "syn";
  d.kind = SourceKind::synthetic;
  d.skin = "nope";
  EXPECT_EQ(code_of([&] { open(d); }), ErrorCode::invalid_argument);
}

TEST(Push, WrongTokenDenied) {
  PushStream s(push_desc());
  EXPECT_EQ(code_of([&] { s.push("secret-tokeN", numbered_frame(1, 1)); }), ErrorCode::permission_denied);
  EXPECT_EQ(code_of([&] { s.push("", numbered_frame(1, 1)); }), ErrorCode::permission_denied);
  EXPECT_EQ(s.size(), 0u);
}

TEST(Push, MonotoneSeqsAcceptedReplayConflicts) {
  PushStream s(push_desc(), 100);
  for (std::uint64_t i = 1; i <= 10; ++i) s.push("secret-token", numbered_frame(i, static_cast<std::int64_t>(i) * 10));
  EXPECT_EQ(s.size(), 10u);
  EXPECT_EQ(code_of([&] { s.push("secret-token", numbered_frame(10, 200)); }), ErrorCode::conflict);
  EXPECT_EQ(code_of([&] { s.push("secret-token", numbered_frame(3, 200)); }), ErrorCode::conflict);
  EXPECT_EQ(code_of([&] { s.push("secret-token", numbered_frame(11, 5)); }), ErrorCode::conflict);
  for (std::uint64_t i = 1; i <= 10; ++i) EXPECT_EQ(s.next()->seq_no, i);
}

TEST(Push, BurstKeepsLatestFour) {
  PushStream s(push_desc());
  for (std::uint64_t i = 1; i <= 10; ++i) s.push("secret-token", numbered_frame(i, static_cast<std::int64_t>(i)));
  EXPECT_EQ(s.size(), 4u);
  EXPECT_EQ(s.dropped(), 6u);
  for (std::uint64_t i = 7; i <= 10; ++i) EXPECT_EQ(s.next()->seq_no, i);
  EXPECT_FALSE(s.next().has_value());
}

TEST(Push, ConsumerWakesOnPushAndClose) {
  PushStream s(push_desc());
  std::thread producer([&] {
    std::this_thread::sleep_for(std::chrono::milliseconds(20));
    s.push("secret-token", numbered_frame(5, 5));
    std::this_thread::sleep_for(std::chrono::milliseconds(20));
    s.close();
  });
  auto f = s.next(std::chrono::seconds(5));
  ASSERT_TRUE(f.has_value());
  EXPECT_EQ(f->seq_no, 5u);
  EXPECT_FALSE(s.next(std::chrono::seconds(5)).has_value());
  EXPECT_TRUE(s.finished());
  producer.join();
}

TEST(Descriptors, JsonRoundTripHidesTokenByDefault) {
  SourceDescriptor d = push_desc();
  d.registered_user = "ann";
  EXPECT_FALSE(to_json(d).contains("token"));
  const auto back = source_from_json(to_json(d, true));
  EXPECT_EQ(back.token, d.token);
  EXPECT_EQ(back.kind, SourceKind::push);
  EXPECT_EQ(back.registered_user, "ann");

  SourceDescriptor syn;
  syn.source_id = "s1";
  syn.skin = "mobile-b";
  syn.seed = 9;
  syn.scroll = 3;
  const auto s2 = source_from_json(to_json(syn));
  EXPECT_EQ(s2.skin, "mobile-b");
  EXPECT_EQ(s2.seed, 9u);
  EXPECT_EQ(s2.scroll, 3);
}

TEST(Descriptors, Validation) {
  SourceDescriptor d;
  d.source_id = "bad id!";
  EXPECT_EQ(code_of([&] { validate(d); }), ErrorCode::invalid_argument);
  d.source_id = "ok";
  d.fps = 0;
  EXPECT_EQ(code_of([&] { validate(d); }), ErrorCode::invalid_argument);
  d.fps = 30;
  d.kind = SourceKind::push;
  EXPECT_EQ(code_of([&] { validate(d); }), ErrorCode::invalid_argument);
  EXPECT_EQ(code_of([] { source_from_json(nlohmann::json{{"kind", "replay"}}); }), ErrorCode::invalid_argument);
}
