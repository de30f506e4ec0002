#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "rems/error.hpp"
#include "rems/skeleton.hpp"
#include "rems/skf.hpp"

namespace rems {

inline constexpr int kRawJointCount = 25;  // sensor model; joints 21-25 are dropped

struct ActionClip {
  std::vector<SkeletonFrame> frames;
  int label = 0;       // 1..60
  int subject_id = 0;  // performer P
  int camera_id = 0;   // camera C
  int setup_id = 0;
  int replication_id = 0;
};

struct SplitSpec {
  enum class Mode { kCrossSubject, kCrossView };
  Mode mode = Mode::kCrossSubject;
  std::set<int> train_subject_ids;  // cross-subject membership
  // cross-view is fixed by convention: camera 1 tests, cameras 2-3 train

  static SplitSpec cross_subject_default() {
    SplitSpec s;
    s.mode = Mode::kCrossSubject;
    s.train_subject_ids = {1,  2,  4,  5,  8,  9,  13, 14, 15, 16,
                           17, 18, 19, 25, 27, 28, 31, 34, 35, 38};
    return s;
  }

  static SplitSpec cross_view() {
    SplitSpec s;
    s.mode = Mode::kCrossView;
    return s;
  }
};

struct NtuFileId {
  int setup = 0, camera = 0, subject = 0, replication = 0, label = 0;
};

// SsssCcccPpppRrrrAaaa, e.g. S001C002P003R002A043 -> camera 2, subject 3,
// label 43. The name is authoritative for routing metadata.
inline NtuFileId parse_ntu_filename(const std::string& filename) {
  std::string stem = std::filesystem::path(filename).stem().string();
  auto field = [&](char tag, std::size_t pos) -> int {
    if (pos + 3 >= stem.size() || stem[pos] != tag)
      throw ParseError("filename '" + filename + "' does not match SsssCcccPpppRrrrAaaa");
    int value = 0;
    for (std::size_t i = pos + 1; i <= pos + 3; ++i) {
      if (!std::isdigit(static_cast<unsigned char>(stem[i])))
        throw ParseError("filename '" + filename + "' does not match SsssCcccPpppRrrrAaaa");
      value = value * 10 + (stem[i] - '0');
    }
    return value;
  };
  NtuFileId id;
  id.setup = field('S', 0);
  id.camera = field('C', 4);
  id.subject = field('P', 8);
  id.replication = field('R', 12);
  id.label = field('A', 16);
  return id;
}

// Keep the first 20 joints of a 25-joint sensor frame; joints 21-25 (spine
// top, hand tips, thumbs) carry no signal for whole-body actions.
inline SkeletonFrame select_20_joints(const std::vector<Joint3D>& raw25,
                                      std::uint64_t frame_index = 0) {
  if (raw25.size() != static_cast<std::size_t>(kRawJointCount))
    throw ValidationError("expected " + std::to_string(kRawJointCount) + " joints, got " +
                          std::to_string(raw25.size()));
  SkeletonFrame frame;
  frame.frame_index = frame_index;
  for (int i = 0; i < kJointCount; ++i) frame.joints[i] = raw25[i];
  return frame;
}

struct ParsedSkeletonFile {
  ActionClip clip;
  std::size_t skipped_frames = 0;  // zero-body, missing-body or non-finite frames
  std::size_t bodies_seen = 0;
};

namespace detail {

struct RawBodyFrame {
  std::size_t frame = 0;
  std::vector<Joint3D> joints;  // 25
};

inline std::string next_line(std::istringstream& in, const char* what) {
  std::string line;
  while (std::getline(in, line)) {
    // tolerate trailing \r and blank lines
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
    if (!line.empty()) return line;
  }
  throw ParseError(std::string("file ended early, expected ") + what);
}

inline long parse_count(const std::string& line, const char* what) {
  std::istringstream ss(line);
  long v = 0;
  if (!(ss >> v) || v < 0) throw ParseError(std::string("bad ") + what + ": '" + line + "'");
  return v;
}

}  // namespace detail

// Text layout of one recording:
//   line 1: frame count
//   per frame: body count; per body: a metadata line, a joint-count line (25),
//   then 25 joint lines whose first three fields are x y z.
// When several bodies are tracked, the one with the largest total joint
// displacement across the clip is kept; the rest are sensor echoes or
// bystanders. Frames without the chosen body (or with non-finite coordinates)
// are skipped and counted.
inline ParsedSkeletonFile parse_skeleton_file(const std::string& text,
                                              const std::string& filename) {
  std::istringstream in(text);
  const long frame_count = detail::parse_count(detail::next_line(in, "frame count"), "frame count");
  if (frame_count == 0) throw ParseError(filename + ": zero frames");

  std::map<long, std::vector<detail::RawBodyFrame>> bodies;
  std::size_t skipped = 0;
  for (long f = 0; f < frame_count; ++f) {
    const long body_count =
        detail::parse_count(detail::next_line(in, "body count"), "body count");
    if (body_count == 0) {
      ++skipped;
      continue;
    }
    for (long b = 0; b < body_count; ++b) {
      const std::string meta = detail::next_line(in, "body metadata");
      long body_id = 0;
      {
        std::istringstream ss(meta);
        if (!(ss >> body_id)) throw ParseError(filename + ": bad body metadata '" + meta + "'");
      }
      const long joints =
          detail::parse_count(detail::next_line(in, "joint count"), "joint count");
      if (joints != kRawJointCount)
        throw ParseError(filename + ": joint count " + std::to_string(joints));
      detail::RawBodyFrame raw;
      raw.frame = static_cast<std::size_t>(f);
      raw.joints.resize(kRawJointCount);
      for (int j = 0; j < kRawJointCount; ++j) {
        const std::string line = detail::next_line(in, "joint coordinates");
        std::istringstream ss(line);
        if (!(ss >> raw.joints[j].x >> raw.joints[j].y >> raw.joints[j].z))
          throw ParseError(filename + ": non-numeric joint line '" + line + "'");
      }
      bodies[body_id].push_back(std::move(raw));
    }
  }
  if (bodies.empty()) throw ParseError(filename + ": every frame was empty");

  // Displacement energy: sum of squared joint movement between appearances.
  long best_id = bodies.begin()->first;
  double best_energy = -1.0;
  for (const auto& [id, frames] : bodies) {
    double energy = 0.0;
    for (std::size_t k = 1; k < frames.size(); ++k)
      for (int j = 0; j < kRawJointCount; ++j) {
        const double dx = frames[k].joints[j].x - frames[k - 1].joints[j].x;
        const double dy = frames[k].joints[j].y - frames[k - 1].joints[j].y;
        const double dz = frames[k].joints[j].z - frames[k - 1].joints[j].z;
        energy += dx * dx + dy * dy + dz * dz;
      }
    if (energy > best_energy) {
      best_energy = energy;
      best_id = id;
    }
  }

  ParsedSkeletonFile out;
  out.bodies_seen = bodies.size();
  const auto& chosen = bodies[best_id];
  std::set<std::size_t> chosen_frames;
  std::uint64_t next_index = 0;
  for (const auto& raw : chosen) {
    chosen_frames.insert(raw.frame);
    bool finite = true;
    for (const auto& j : raw.joints)
      if (!j.finite()) finite = false;
    if (!finite) {
      ++skipped;
      continue;
    }
    out.clip.frames.push_back(select_20_joints(raw.joints, next_index++));
  }
  // frames where only other bodies appeared
  for (const auto& [id, frames] : bodies) {
    if (id == best_id) continue;
    for (const auto& raw : frames)
      if (!chosen_frames.count(raw.frame)) {
        ++skipped;
        chosen_frames.insert(raw.frame);
      }
  }
  out.skipped_frames = skipped;
  if (out.clip.frames.empty()) throw ParseError(filename + ": no usable frames");

  const NtuFileId id = parse_ntu_filename(filename);
  out.clip.label = id.label;
  out.clip.subject_id = id.subject;
  out.clip.camera_id = id.camera;
  out.clip.setup_id = id.setup;
  out.clip.replication_id = id.replication;
  return out;
}

inline ParsedSkeletonFile parse_skeleton_path(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return parse_skeleton_file(ss.str(), path.filename().string());
}

// Single-person classes 1..49 are trainable; 50..60 are two-person
// interactions and are dropped.
inline std::vector<ActionClip> filter_training_classes(std::vector<ActionClip> clips) {
  std::vector<ActionClip> out;
  out.reserve(clips.size());
  for (auto& c : clips)
    if (c.label >= 1 && c.label <= 49) out.push_back(std::move(c));
  return out;
}

// Disjoint, exhaustive train/test partition.
inline std::pair<std::vector<ActionClip>, std::vector<ActionClip>> split(
    const std::vector<ActionClip>& clips, const SplitSpec& spec) {
  std::vector<ActionClip> train, test;
  for (const auto& c : clips) {
    if (spec.mode == SplitSpec::Mode::kCrossView) {
      if (c.camera_id < 1 || c.camera_id > 3)
        throw ValidationError("camera id " + std::to_string(c.camera_id) + " outside 1..3");
      (c.camera_id == 1 ? test : train).push_back(c);
    } else {
      if (c.subject_id < 1 || c.subject_id > 40)
        throw ValidationError("subject id " + std::to_string(c.subject_id) + " outside 1..40");
      (spec.train_subject_ids.count(c.subject_id) ? train : test).push_back(c);
    }
  }
  return {std::move(train), std::move(test)};
}

// Manifest: one comma-separated line per clip:
//   filename,label,subject,camera,frames
struct ManifestEntry {
  std::string filename;  // relative to the dataset directory
  int label = 0;
  int subject = 0;
  int camera = 0;
  std::size_t frames = 0;
};

inline void write_manifest(const std::filesystem::path& path,
                           const std::vector<ManifestEntry>& entries) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  for (const auto& e : entries)
    os << e.filename << ',' << e.label << ',' << e.subject << ',' << e.camera << ','
       << e.frames << '\n';
  if (!os) throw IoError("short write to " + path.string());
}

inline std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open " + path.string());
  std::vector<ManifestEntry> entries;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
    if (line.empty()) continue;
    std::istringstream ss(line);
    ManifestEntry e;
    std::string tok;
    auto next = [&](const char* what) {
      if (!std::getline(ss, tok, ','))
        throw ParseError(path.string() + ":" + std::to_string(lineno) + ": missing " + what);
      return tok;
    };
    e.filename = next("filename");
    try {
      e.label = std::stoi(next("label"));
      e.subject = std::stoi(next("subject"));
      e.camera = std::stoi(next("camera"));
      e.frames = static_cast<std::size_t>(std::stoul(next("frames")));
    } catch (const std::exception&) {
      throw ParseError(path.string() + ":" + std::to_string(lineno) + ": bad numeric field");
    }
    entries.push_back(std::move(e));
  }
  return entries;
}

// Loads the feature clips named by a manifest; labels come back 1-based.
inline std::pair<std::vector<FeatureClip>, std::vector<int>> load_feature_dataset(
    const std::filesystem::path& data_dir, const std::vector<ManifestEntry>& entries) {
  std::vector<FeatureClip> clips;
  std::vector<int> labels;
  clips.reserve(entries.size());
  labels.reserve(entries.size());
  for (const auto& e : entries) {
    clips.push_back(read_skf_file(data_dir / e.filename));
    labels.push_back(e.label);
  }
  return {std::move(clips), std::move(labels)};
}

}  // namespace rems
