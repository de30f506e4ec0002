#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "rems/binio.hpp"
#include "rems/class_names.hpp"
#include "rems/dataset.hpp"
#include "rems/error.hpp"
#include "rems/rng.hpp"
#include "rems/skeleton.hpp"

namespace rems {

// Desk-scale synthetic data: each class is a documented analytic pose
// trajectory sampled at the nominal camera rate, plus Gaussian joint noise.
//
// Periodic templates repeat every kTemplatePeriod raw frames. The period
// divides both the clip sampling stride (sample_clip of a 100-frame clip
// picks every 5th frame) and the streaming window spacing (windows start at
// multiples of hop*stride = 25 raw frames), so a window anywhere inside a
// spliced action segment sees exactly the frame sequence the classifier was
// trained on.
inline constexpr int kTemplatePeriod = 25;

struct SynthSpec {
  int num_classes = 3;
  int clips_per_class = 200;
  int frames_per_clip = 100;
  double noise_stddev = 0.01;  // meters
  std::uint64_t seed = 0;
};

// Class templates, in order:
//   0 arm-wave (label 23): right arm rises sinusoidally above the shoulder
//   1 fall     (label 43): whole body pitches about the ankle line to supine
//   2 sit      (label  8): static seated pose (also the idle filler)
//   3 stagger  (label 42): lateral hip sway of the whole upper body
//   4 clap     (label 10): both hands oscillate toward the body midline
inline constexpr std::array<int, 5> kTemplateLabels = {23, 43, 8, 42, 10};
inline constexpr std::array<const char*, 5> kTemplateNames = {"arm-wave", "fall", "sit-still",
                                                              "stagger", "clap"};
inline constexpr int kMaxTemplates = 5;

namespace synth_detail {

inline std::array<Joint3D, kJointCount> standing_pose() {
  return {{{0.00, 0.90, 2.50},  {0.00, 1.15, 2.50},  {0.00, 1.40, 2.50},  {0.00, 1.60, 2.50},
           {-0.20, 1.35, 2.50}, {-0.25, 1.10, 2.50}, {-0.25, 0.85, 2.50}, {-0.25, 0.78, 2.50},
           {0.20, 1.35, 2.50},  {0.25, 1.10, 2.50},  {0.25, 0.85, 2.50},  {0.25, 0.78, 2.50},
           {-0.10, 0.85, 2.50}, {-0.10, 0.50, 2.50}, {-0.10, 0.10, 2.50}, {-0.10, 0.05, 2.40},
           {0.10, 0.85, 2.50},  {0.10, 0.50, 2.50},  {0.10, 0.10, 2.50},  {0.10, 0.05, 2.40}}};
}

inline std::array<Joint3D, kJointCount> seated_pose() {
  return {{{0.00, 0.50, 2.55},  {0.00, 0.75, 2.57},  {0.00, 1.00, 2.60},  {0.00, 1.20, 2.60},
           {-0.20, 0.95, 2.60}, {-0.22, 0.75, 2.50}, {-0.18, 0.55, 2.40}, {-0.16, 0.52, 2.37},
           {0.20, 0.95, 2.60},  {0.22, 0.75, 2.50},  {0.18, 0.55, 2.40},  {0.16, 0.52, 2.37},
           {-0.10, 0.45, 2.55}, {-0.10, 0.48, 2.10}, {-0.10, 0.10, 2.10}, {-0.10, 0.05, 2.00},
           {0.10, 0.45, 2.55},  {0.10, 0.48, 2.10},  {0.10, 0.10, 2.10},  {0.10, 0.05, 2.00}}};
}

// Raised-cosine ramp in [0, 1], period kTemplatePeriod.
inline double cycle(std::uint64_t t) {
  const double phase =
      6.283185307179586476925286766559 * static_cast<double>(t % kTemplatePeriod) /
      static_cast<double>(kTemplatePeriod);
  return 0.5 * (1.0 - std::cos(phase));
}

}  // namespace synth_detail

// Noise-free template pose for class template `k` at raw time t.
inline std::array<Joint3D, kJointCount> template_pose(int k, std::uint64_t t) {
  using namespace synth_detail;
  if (k < 0 || k >= kMaxTemplates)
    throw ValidationError("synthetic template " + std::to_string(k) + " undefined (0.." +
                          std::to_string(kMaxTemplates - 1) + ")");
  const double c = cycle(t);
  switch (k) {
    case 0: {  // right arm rises above the shoulder
      auto pose = standing_pose();
      pose[9].y += 0.25 * c;   // right elbow
      pose[10].y += 0.55 * c;  // right wrist, 0.85 -> 1.40 vs shoulder 1.35
      pose[11].y += 0.58 * c;  // right hand
      return pose;
    }
    case 1: {  // rigid pitch about the ankle line, upright -> supine -> upright
      auto pose = standing_pose();
      const double theta = 1.5707963267948966 * c;
      const double s = std::sin(theta), co = std::cos(theta);
      for (auto& j : pose) {
        const double dy = j.y - 0.10;
        const double dz = j.z - 2.50;
        j.y = 0.10 + dy * co - dz * s;
        j.z = 2.50 + dy * s + dz * co;
      }
      return pose;
    }
    case 2:
      return seated_pose();
    case 3: {  // lateral sway of everything above the knees
      auto pose = standing_pose();
      const double sway = 0.25 * (2.0 * c - 1.0);
      for (int j = 0; j < kJointCount; ++j)
        if (j != 13 && j != 14 && j != 15 && j != 17 && j != 18 && j != 19) pose[j].x += sway;
      return pose;
    }
    default: {  // clap: wrists and hands meet at the midline
      auto pose = standing_pose();
      const double pull = 0.20 * c;
      for (int j : {6, 7}) pose[j].x += pull;    // left wrist/hand move right
      for (int j : {10, 11}) pose[j].x -= pull;  // right wrist/hand move left
      return pose;
    }
  }
}

inline int template_label(int k) {
  if (k < 0 || k >= kMaxTemplates)
    throw ValidationError("synthetic template " + std::to_string(k) + " undefined");
  return kTemplateLabels[static_cast<std::size_t>(k)];
}

namespace synth_detail {

inline SkeletonFrame noisy_frame(const std::array<Joint3D, kJointCount>& pose,
                                 std::uint64_t frame_index, double noise, Rng& rng) {
  SkeletonFrame f;
  f.frame_index = frame_index;
  for (int j = 0; j < kJointCount; ++j) {
    // quantize like an f32 sensor stream so downstream math is exact
    f.joints[j].x = quantize_f32(pose[j].x + (noise > 0.0 ? rng.gaussian(0.0, noise) : 0.0));
    f.joints[j].y = quantize_f32(pose[j].y + (noise > 0.0 ? rng.gaussian(0.0, noise) : 0.0));
    f.joints[j].z = quantize_f32(pose[j].z + (noise > 0.0 ? rng.gaussian(0.0, noise) : 0.0));
  }
  return f;
}

}  // namespace synth_detail

// Labeled raw clips, a pure function of the SynthSpec. Clip i of every class
// gets subject (i mod 40) + 1 and camera (i mod 3) + 1 so the standard split
// rules apply unchanged.
inline std::vector<ActionClip> generate_synthetic(const SynthSpec& spec) {
  if (spec.num_classes <= 0 || spec.clips_per_class <= 0 || spec.frames_per_clip <= 0)
    throw ValidationError("synthetic spec fields must be positive");
  if (spec.num_classes > kMaxTemplates)
    throw ValidationError("at most " + std::to_string(kMaxTemplates) +
                          " synthetic classes are defined");
  if (spec.noise_stddev < 0.0) throw ValidationError("noise_stddev must be non-negative");
  Rng rng(spec.seed);
  std::vector<ActionClip> clips;
  clips.reserve(static_cast<std::size_t>(spec.num_classes) *
                static_cast<std::size_t>(spec.clips_per_class));
  for (int k = 0; k < spec.num_classes; ++k) {
    for (int i = 0; i < spec.clips_per_class; ++i) {
      ActionClip clip;
      clip.label = template_label(k);
      clip.subject_id = (i % 40) + 1;
      clip.camera_id = (i % 3) + 1;
      clip.setup_id = 1;
      clip.replication_id = 1;
      clip.frames.reserve(static_cast<std::size_t>(spec.frames_per_clip));
      for (int t = 0; t < spec.frames_per_clip; ++t)
        clip.frames.push_back(synth_detail::noisy_frame(
            template_pose(k, static_cast<std::uint64_t>(t)), static_cast<std::uint64_t>(t),
            spec.noise_stddev, rng));
      clips.push_back(std::move(clip));
    }
  }
  return clips;
}

struct SpliceInterval {
  int label = 0;
  std::uint64_t start_raw = 0;
  std::uint64_t end_raw = 0;  // last raw frame of the action
};

struct SplicedStream {
  std::vector<SkeletonFrame> frames;
  std::vector<SpliceInterval> truth;
};

// Continuous stream: idle (seated, static) segments alternating with action
// instances drawn from the moving templates, every segment kSegmentLen raw
// frames. Segment boundaries are multiples of the detector's default group
// period, so each instance is covered by exactly one full window group.
inline constexpr int kSpliceSegmentLen = 250;

inline SplicedStream splice_stream(const SynthSpec& spec, int instances = 5) {
  if (instances < 1) throw ValidationError("need at least one action instance");
  if (spec.num_classes <= 0) throw ValidationError("num_classes must be positive");
  Rng rng(spec.seed ^ 0x9e3779b97f4a7c15ull);
  // moving templates only; the static sit class is indistinguishable from
  // idle. The fall goes first so a one-instance stream is a fall stream.
  std::vector<int> moving;
  if (spec.num_classes >= 2) moving.push_back(1);
  moving.push_back(0);
  for (int k = 3; k < std::min(spec.num_classes, kMaxTemplates); ++k) moving.push_back(k);

  SplicedStream out;
  std::uint64_t raw = 0;
  auto push_segment = [&](int template_or_idle) {
    for (int t = 0; t < kSpliceSegmentLen; ++t, ++raw) {
      const auto pose = template_or_idle < 0
                            ? synth_detail::seated_pose()
                            : template_pose(template_or_idle, static_cast<std::uint64_t>(t));
      out.frames.push_back(synth_detail::noisy_frame(pose, raw, spec.noise_stddev, rng));
    }
  };

  push_segment(-1);
  for (int i = 0; i < instances; ++i) {
    const int k = moving[static_cast<std::size_t>(i) % moving.size()];
    SpliceInterval iv;
    iv.label = template_label(k);
    iv.start_raw = raw;
    iv.end_raw = raw + kSpliceSegmentLen - 1;
    out.truth.push_back(iv);
    push_segment(k);
    push_segment(-1);
  }
  return out;
}

}  // namespace rems
