#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "rems/error.hpp"

namespace rems {

inline constexpr int kJointCount = 20;
inline constexpr int kCenteredJointCount = kJointCount - 1;       // joints 2..20
inline constexpr int kFeatureDim = 3 * kCenteredJointCount;       // 57

// Joint labels for the 20-joint model. Index i holds label i+1, so
// joints[0] is always the hip center and joints[1] the middle of the spine.
inline constexpr std::array<const char*, kJointCount> kJointNames = {
    "hip-center",    "middle-spine", "shoulder-center", "head",
    "left-shoulder", "left-elbow",   "left-wrist",      "left-hand",
    "right-shoulder","right-elbow",  "right-wrist",     "right-hand",
    "left-hip",      "left-knee",    "left-ankle",      "left-foot",
    "right-hip",     "right-knee",   "right-ankle",     "right-foot"};

// One joint position in meters. x/y are image-plane coordinates, z is the
// distance from the body to the camera. Values originate from f32 sensors and
// wire formats; they are carried in doubles so downstream math stays exact.
struct Joint3D {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  bool finite() const {
    return std::isfinite(x) && std::isfinite(y) && std::isfinite(z);
  }
};

struct SkeletonFrame {
  std::array<Joint3D, kJointCount> joints{};
  std::uint64_t frame_index = 0;

  const Joint3D& hip_center() const { return joints[0]; }
  const Joint3D& middle_spine() const { return joints[1]; }

  void validate() const {
    for (int i = 0; i < kJointCount; ++i) {
      if (!joints[i].finite())
        throw ValidationError("frame " + std::to_string(frame_index) +
                              ": non-finite coordinate at joint " +
                              std::to_string(i + 1) + " (" + kJointNames[i] + ")");
    }
  }
};

// Hip-relative offsets for joints 2..20; the hip itself is excluded by
// construction. deltas[n-2] corresponds to joint label n.
struct CenteredFrame {
  std::array<std::array<double, 3>, kCenteredJointCount> deltas{};
};

// 57 values laid out as [all dx | all dy | all dz], joint order 2..20 within
// each block. Dimensionless once the scale factor has been applied.
struct FeatureFrame {
  std::array<double, kFeatureDim> values{};
};

struct FeatureClip {
  std::vector<FeatureFrame> frames;
  std::int32_t label = -1;  // -1 = unlabeled

  std::size_t length() const { return frames.size(); }
};

struct ScaleFactor {
  double value = 1.0;
};

// The scale in the source formula divides the hip-to-mid-spine distance by a
// half-spine reference, which grows features for taller bodies. The
// reference-normalized mode inverts the ratio so that a uniform dilation of
// the skeleton cancels out of the features; it is the default. paper-literal
// keeps the formula as written.
enum class ScaleMode { kReferenceNormalized, kPaperLiteral };

struct FeatureConfig {
  ScaleMode scale_mode = ScaleMode::kReferenceNormalized;
  double reference_halfspine = 0.25;  // meters, hip center to mid-spine
  double min_spine_distance = 1e-6;   // meters, degeneracy threshold
};

inline const char* scale_mode_name(ScaleMode m) {
  return m == ScaleMode::kReferenceNormalized ? "reference-normalized" : "paper-literal";
}

inline ScaleMode scale_mode_from_name(const std::string& s) {
  if (s == "reference-normalized") return ScaleMode::kReferenceNormalized;
  if (s == "paper-literal") return ScaleMode::kPaperLiteral;
  throw ValidationError("unknown scale mode: " + s);
}

// Offsets of joints 2..20 relative to the hip center. A constant translation
// of every joint cancels exactly.
inline CenteredFrame center_frame(const SkeletonFrame& frame) {
  frame.validate();
  CenteredFrame out;
  const Joint3D& hip = frame.hip_center();
  for (int n = 1; n < kJointCount; ++n) {
    out.deltas[n - 1][0] = frame.joints[n].x - hip.x;
    out.deltas[n - 1][1] = frame.joints[n].y - hip.y;
    out.deltas[n - 1][2] = frame.joints[n].z - hip.z;
  }
  return out;
}

inline double halfspine_distance(const SkeletonFrame& frame) {
  const Joint3D& a = frame.hip_center();
  const Joint3D& b = frame.middle_spine();
  const double dx = b.x - a.x;
  const double dy = b.y - a.y;
  const double dz = b.z - a.z;
  return std::sqrt(dx * dx + dy * dy + dz * dz);
}

inline ScaleFactor compute_scale(const SkeletonFrame& frame, const FeatureConfig& config = {}) {
  frame.validate();
  if (config.reference_halfspine <= 0.0)
    throw ValidationError("reference_halfspine must be positive");
  const double d = halfspine_distance(frame);
  if (!(d > config.min_spine_distance))
    throw DegenerateSkeleton("frame " + std::to_string(frame.frame_index) +
                             ": hip-to-spine distance " + std::to_string(d) +
                             " below threshold");
  const double ratio = d / config.reference_halfspine;
  return ScaleFactor{config.scale_mode == ScaleMode::kReferenceNormalized ? 1.0 / ratio : ratio};
}

inline FeatureFrame normalize_features(const CenteredFrame& centered, ScaleFactor scale) {
  if (!(scale.value > 0.0) || !std::isfinite(scale.value))
    throw ValidationError("scale factor must be positive and finite");
  FeatureFrame out;
  for (int axis = 0; axis < 3; ++axis)
    for (int j = 0; j < kCenteredJointCount; ++j)
      out.values[axis * kCenteredJointCount + j] = centered.deltas[j][axis] * scale.value;
  return out;
}

// Per-frame center -> scale -> normalize over a whole clip. Frames whose
// skeleton is degenerate reuse the previous frame's scale; a degenerate first
// frame has nothing to fall back on and is an error.
inline FeatureClip build_clip_features(const std::vector<SkeletonFrame>& frames,
                                       const FeatureConfig& config = {}) {
  if (frames.empty()) throw ValidationError("cannot build features from an empty clip");
  FeatureClip clip;
  clip.frames.reserve(frames.size());
  ScaleFactor last_scale{0.0};
  bool have_scale = false;
  for (const SkeletonFrame& frame : frames) {
    const CenteredFrame centered = center_frame(frame);
    try {
      last_scale = compute_scale(frame, config);
      have_scale = true;
    } catch (const DegenerateSkeleton&) {
      if (!have_scale) throw;
    }
    clip.frames.push_back(normalize_features(centered, last_scale));
  }
  return clip;
}

// Deterministic resampling to exactly target_len frames: floor(i*L/target)
// picks for L >= target (uniform coverage), repeat-last padding otherwise.
inline std::vector<SkeletonFrame> sample_clip(const std::vector<SkeletonFrame>& frames,
                                              int target_len = 20) {
  if (frames.empty()) throw ValidationError("cannot sample an empty clip");
  if (target_len <= 0) throw ValidationError("target_len must be positive");
  const std::size_t n = frames.size();
  std::vector<SkeletonFrame> out;
  out.reserve(static_cast<std::size_t>(target_len));
  if (n >= static_cast<std::size_t>(target_len)) {
    for (int i = 0; i < target_len; ++i)
      out.push_back(frames[static_cast<std::size_t>(i) * n / static_cast<std::size_t>(target_len)]);
  } else {
    out = frames;
    while (out.size() < static_cast<std::size_t>(target_len)) out.push_back(frames.back());
  }
  return out;
}

}  // namespace rems
