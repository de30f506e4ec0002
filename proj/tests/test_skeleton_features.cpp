#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstring>
#include <sstream>

#include "rems/skeleton.hpp"
#include "rems/skf.hpp"
#include "support/test_util.hpp"

using namespace rems;

namespace {

SkeletonFrame uniform_frame(double x, double y, double z) {
  SkeletonFrame f;
  for (auto& j : f.joints) j = {x, y, z};
  return f;
}

SkeletonFrame translated(const SkeletonFrame& f, double tx, double ty, double tz) {
  SkeletonFrame out = f;
  for (auto& j : out.joints) {
    j.x += tx;
    j.y += ty;
    j.z += tz;
  }
  return out;
}

}  // namespace

TEST_CASE("center_frame subtracts the hip from joints 2..20") {
  SECTION("coincident skeleton gives all-zero deltas") {
    const CenteredFrame c = center_frame(uniform_frame(1.0, 2.0, 3.0));
    for (const auto& d : c.deltas) {
      CHECK(d[0] == 0.0);
      CHECK(d[1] == 0.0);
      CHECK(d[2] == 0.0);
    }
  }

  SECTION("single displaced joint") {
    SkeletonFrame f = uniform_frame(1.0, 2.0, 3.0);
    f.joints[3] = {1.5, 2.0, 2.0};  // joint label 4
    const CenteredFrame c = center_frame(f);
    CHECK(c.deltas[2][0] == 0.5);
    CHECK(c.deltas[2][1] == 0.0);
    CHECK(c.deltas[2][2] == -1.0);
    for (int n = 0; n < kCenteredJointCount; ++n) {
      if (n == 2) continue;
      CHECK(c.deltas[n][0] == 0.0);
    }
  }

  SECTION("translation cancels exactly") {
    Rng rng(7);
    const SkeletonFrame f = testutil::random_skeleton(rng);
    const SkeletonFrame g = translated(f, 10.0, -4.0, 2.0);
    const CenteredFrame cf = center_frame(f);
    const CenteredFrame cg = center_frame(g);
    for (int n = 0; n < kCenteredJointCount; ++n)
      for (int a = 0; a < 3; ++a) CHECK(cf.deltas[n][a] == cg.deltas[n][a]);
  }

  SECTION("non-finite joints are rejected") {
    SkeletonFrame f = uniform_frame(0, 1, 2);
    f.joints[7].y = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(center_frame(f), ValidationError);
    f.joints[7].y = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(center_frame(f), ValidationError);
  }
}

TEST_CASE("compute_scale ratio and modes") {
  SkeletonFrame f = uniform_frame(0.0, 0.0, 0.0);
  f.joints[1] = {0.0, 0.25, 0.0};

  FeatureConfig ref_mode;  // defaults: reference-normalized, halfspine 0.25
  FeatureConfig lit_mode;
  lit_mode.scale_mode = ScaleMode::kPaperLiteral;

  SECTION("equal lengths give scale 1 in both modes") {
    CHECK(compute_scale(f, ref_mode).value == 1.0);
    CHECK(compute_scale(f, lit_mode).value == 1.0);
  }

  SECTION("half-meter spine distance") {
    f.joints[1] = {0.0, 0.5, 0.0};
    CHECK(compute_scale(f, ref_mode).value == 0.5);
    CHECK(compute_scale(f, lit_mode).value == 2.0);
  }

  SECTION("degenerate skeleton is rejected") {
    f.joints[1] = {0.0, 5e-7, 0.0};
    CHECK_THROWS_AS(compute_scale(f, ref_mode), DegenerateSkeleton);
    f.joints[1] = f.joints[0];
    CHECK_THROWS_AS(compute_scale(f, ref_mode), DegenerateSkeleton);
  }
}

TEST_CASE("normalize_features layout and scaling") {
  SECTION("identity scale flattens axis-blocked") {
    CenteredFrame c;
    for (int n = 0; n < kCenteredJointCount; ++n) {
      c.deltas[n][0] = 100.0 + n;  // dx block
      c.deltas[n][1] = 200.0 + n;  // dy block
      c.deltas[n][2] = 300.0 + n;  // dz block
    }
    const FeatureFrame f = normalize_features(c, ScaleFactor{1.0});
    for (int n = 0; n < kCenteredJointCount; ++n) {
      CHECK(f.values[n] == 100.0 + n);
      CHECK(f.values[kCenteredJointCount + n] == 200.0 + n);
      CHECK(f.values[2 * kCenteredJointCount + n] == 300.0 + n);
    }
  }

  SECTION("zero input stays zero under any scale") {
    CenteredFrame c{};
    const FeatureFrame f = normalize_features(c, ScaleFactor{123.456});
    for (double v : f.values) CHECK(v == 0.0);
  }

  SECTION("uniform 2x dilation about the hip cancels in reference mode") {
    Rng rng(21);
    const SkeletonFrame f = testutil::random_skeleton(rng);
    SkeletonFrame g = f;
    for (int j = 1; j < kJointCount; ++j) {
      g.joints[j].x = f.joints[0].x + 2.0 * (f.joints[j].x - f.joints[0].x);
      g.joints[j].y = f.joints[0].y + 2.0 * (f.joints[j].y - f.joints[0].y);
      g.joints[j].z = f.joints[0].z + 2.0 * (f.joints[j].z - f.joints[0].z);
    }
    FeatureConfig cfg;
    const FeatureFrame a = normalize_features(center_frame(f), compute_scale(f, cfg));
    const FeatureFrame b = normalize_features(center_frame(g), compute_scale(g, cfg));
    for (int i = 0; i < kFeatureDim; ++i) CHECK(a.values[i] == b.values[i]);
  }
}

TEST_CASE("build_clip_features composes the per-frame pipeline") {
  FeatureConfig cfg;

  SECTION("static clip gives identical frames") {
    SkeletonFrame f = uniform_frame(0.3, 0.9, 2.5);
    f.joints[1].y += 0.25;
    f.joints[4].x -= 0.2;
    const FeatureClip clip = build_clip_features(std::vector<SkeletonFrame>(20, f), cfg);
    REQUIRE(clip.length() == 20);
    for (const auto& frame : clip.frames)
      for (int i = 0; i < kFeatureDim; ++i) CHECK(frame.values[i] == clip.frames[0].values[i]);
  }

  SECTION("single frame clip") {
    Rng rng(3);
    const FeatureClip clip = build_clip_features({testutil::random_skeleton(rng)}, cfg);
    CHECK(clip.length() == 1);
  }

  SECTION("matches the manual per-frame loop") {
    Rng rng(11);
    const auto frames = testutil::random_clip(rng, 20);
    const FeatureClip clip = build_clip_features(frames, cfg);
    REQUIRE(clip.length() == frames.size());
    for (std::size_t t = 0; t < frames.size(); ++t) {
      const FeatureFrame manual =
          normalize_features(center_frame(frames[t]), compute_scale(frames[t], cfg));
      for (int i = 0; i < kFeatureDim; ++i) CHECK(clip.frames[t].values[i] == manual.values[i]);
    }
  }

  SECTION("degenerate frame reuses the previous scale") {
    Rng rng(13);
    auto frames = testutil::random_clip(rng, 3);
    frames[1].joints[1] = frames[1].joints[0];  // collapse the spine
    const FeatureClip clip = build_clip_features(frames, cfg);
    const ScaleFactor carried = compute_scale(frames[0], cfg);
    const FeatureFrame expect = normalize_features(center_frame(frames[1]), carried);
    for (int i = 0; i < kFeatureDim; ++i) CHECK(clip.frames[1].values[i] == expect.values[i]);
  }

  SECTION("first-frame degenerate and empty input are errors") {
    Rng rng(17);
    auto frames = testutil::random_clip(rng, 2);
    frames[0].joints[1] = frames[0].joints[0];
    CHECK_THROWS_AS(build_clip_features(frames, cfg), DegenerateSkeleton);
    CHECK_THROWS_AS(build_clip_features({}, cfg), ValidationError);
  }
}

TEST_CASE("sample_clip index selection") {
  auto make = [](std::size_t n) {
    std::vector<SkeletonFrame> frames(n);
    for (std::size_t i = 0; i < n; ++i) frames[i].frame_index = i;
    return frames;
  };

  SECTION("uniform coverage for long clips") {
    const auto out = sample_clip(make(100), 20);
    REQUIRE(out.size() == 20);
    for (int i = 0; i < 20; ++i) CHECK(out[i].frame_index == static_cast<std::uint64_t>(5 * i));
  }

  SECTION("identity when lengths match") {
    const auto out = sample_clip(make(20), 20);
    for (int i = 0; i < 20; ++i) CHECK(out[i].frame_index == static_cast<std::uint64_t>(i));
  }

  SECTION("short clips repeat the last frame") {
    const auto out = sample_clip(make(7), 20);
    REQUIRE(out.size() == 20);
    for (int i = 0; i < 7; ++i) CHECK(out[i].frame_index == static_cast<std::uint64_t>(i));
    for (int i = 7; i < 20; ++i) CHECK(out[i].frame_index == 6);
  }

  SECTION("empty input is an error") {
    CHECK_THROWS_AS(sample_clip({}, 20), ValidationError);
  }
}

TEST_CASE("feature invariances") {
  FeatureConfig cfg;
  Rng rng(2024);

  SECTION("translation invariance is bitwise") {
    for (int iter = 0; iter < 100; ++iter) {
      const auto frames = testutil::random_clip(rng, 5);
      const double tx = quantize_f32(rng.uniform(-50.0, 50.0));
      const double ty = quantize_f32(rng.uniform(-50.0, 50.0));
      const double tz = quantize_f32(rng.uniform(-50.0, 50.0));
      std::vector<SkeletonFrame> moved;
      for (const auto& f : frames) moved.push_back(translated(f, tx, ty, tz));
      const FeatureClip a = build_clip_features(frames, cfg);
      const FeatureClip b = build_clip_features(moved, cfg);
      for (std::size_t t = 0; t < a.length(); ++t)
        for (int i = 0; i < kFeatureDim; ++i) REQUIRE(a.frames[t].values[i] == b.frames[t].values[i]);
    }
  }

  SECTION("uniform dilation invariance within 1e-9 relative") {
    for (int iter = 0; iter < 100; ++iter) {
      const SkeletonFrame f = testutil::random_skeleton(rng);
      const double lambda = rng.uniform(0.5, 2.5);
      SkeletonFrame g = f;
      for (int j = 1; j < kJointCount; ++j) {
        g.joints[j].x = f.joints[0].x + lambda * (f.joints[j].x - f.joints[0].x);
        g.joints[j].y = f.joints[0].y + lambda * (f.joints[j].y - f.joints[0].y);
        g.joints[j].z = f.joints[0].z + lambda * (f.joints[j].z - f.joints[0].z);
      }
      const FeatureFrame a = normalize_features(center_frame(f), compute_scale(f, cfg));
      const FeatureFrame b = normalize_features(center_frame(g), compute_scale(g, cfg));
      for (int i = 0; i < kFeatureDim; ++i)
        REQUIRE(a.values[i] == Catch::Approx(b.values[i]).epsilon(1e-9).margin(1e-12));
    }
  }

  SECTION("shape: sample then build always yields 20 x 57") {
    for (std::size_t n : {1ul, 7ul, 20ul, 33ul, 100ul}) {
      const auto frames = testutil::random_clip(rng, n);
      const FeatureClip clip = build_clip_features(sample_clip(frames, 20), cfg);
      REQUIRE(clip.length() == 20);
      for (const auto& fr : clip.frames)
        REQUIRE(fr.values.size() == static_cast<std::size_t>(kFeatureDim));
    }
  }
}

TEST_CASE("SKF1 serialization") {
  SECTION("golden bytes for a one-frame clip") {
    FeatureClip clip;
    clip.frames.resize(1);
    for (int i = 0; i < kFeatureDim; ++i) clip.frames[0].values[i] = static_cast<double>(i);

    std::ostringstream os(std::ios::binary);
    write_skf(os, clip);
    const std::string bytes = os.str();

    // header: magic, M=1, dim=57, label=-1, then 57 little-endian f32
    std::string expect = "SKF1";
    auto push_u32 = [&](std::uint32_t v) {
      for (int k = 0; k < 4; ++k) expect.push_back(static_cast<char>((v >> (8 * k)) & 0xff));
    };
    push_u32(1);
    push_u32(57);
    push_u32(0xffffffffu);
    for (int i = 0; i < kFeatureDim; ++i) {
      const float f = static_cast<float>(i);
      std::uint32_t bits;
      std::memcpy(&bits, &f, 4);
      push_u32(bits);
    }
    REQUIRE(bytes.size() == expect.size());
    CHECK(bytes == expect);
  }

  SECTION("round trip preserves values, label and length") {
    Rng rng(5);
    FeatureClip clip = testutil::random_feature_clip(rng, 20);
    clip.label = 43;
    std::stringstream ss(std::ios::in | std::ios::out | std::ios::binary);
    write_skf(ss, clip);
    const FeatureClip back = read_skf(ss);
    REQUIRE(back.length() == clip.length());
    CHECK(back.label == 43);
    for (std::size_t t = 0; t < clip.length(); ++t)
      for (int i = 0; i < kFeatureDim; ++i)
        CHECK(back.frames[t].values[i] == clip.frames[t].values[i]);
  }

  SECTION("a 20-frame clip serializes to 4576 bytes, well under 10KB") {
    Rng rng(6);
    const FeatureClip clip = testutil::random_feature_clip(rng, 20);
    std::ostringstream os(std::ios::binary);
    write_skf(os, clip);
    CHECK(os.str().size() == 16u + 20u * 57u * 4u);
    CHECK(os.str().size() == 4576u);
    CHECK(os.str().size() <= 10240u);
  }

  SECTION("malformed streams are rejected") {
    std::istringstream bad_magic("SKF2aaaaaaaaaaaaaaaa");
    CHECK_THROWS_AS(read_skf(bad_magic), ParseError);
    std::istringstream truncated("SKF1\x01\x00");
    CHECK_THROWS_AS(read_skf(truncated), ParseError);

    FeatureClip clip;
    clip.frames.resize(1);
    std::ostringstream os(std::ios::binary);
    write_skf(os, clip);
    std::string bytes = os.str();
    bytes[8] = 17;  // dim -> garbage
    std::istringstream bad_dim(bytes);
    CHECK_THROWS_AS(read_skf(bad_dim), ParseError);
  }
}
