#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>

#include "rems/binio.hpp"
#include "rems/error.hpp"
#include "rems/skeleton.hpp"

namespace rems {

// SKF1 feature clip file:
//   bytes 0..3   magic "SKF1"
//   u32          M (frame count)
//   u32          dim (57)
//   i32          label (-1 = unlabeled)
//   M*dim f32    features, row-major, little-endian
inline constexpr char kSkfMagic[4] = {'S', 'K', 'F', '1'};

inline void write_skf(std::ostream& os, const FeatureClip& clip) {
  if (clip.frames.empty()) throw ValidationError("refusing to serialize an empty clip");
  os.write(kSkfMagic, 4);
  put_u32(os, static_cast<std::uint32_t>(clip.frames.size()));
  put_u32(os, static_cast<std::uint32_t>(kFeatureDim));
  put_i32(os, clip.label);
  for (const FeatureFrame& f : clip.frames)
    for (double v : f.values) put_f32(os, static_cast<float>(v));
  if (!os) throw IoError("short write while serializing SKF1 clip");
}

inline FeatureClip read_skf(std::istream& is) {
  expect_magic(is, kSkfMagic, "SKF1");
  const std::uint32_t m = get_u32(is, "SKF1 frame count");
  const std::uint32_t dim = get_u32(is, "SKF1 dim");
  const std::int32_t label = get_i32(is, "SKF1 label");
  if (m == 0) throw ParseError("SKF1 clip has zero frames");
  if (dim != kFeatureDim)
    throw ParseError("SKF1 dim " + std::to_string(dim) + " != " + std::to_string(kFeatureDim));
  FeatureClip clip;
  clip.label = label;
  clip.frames.resize(m);
  for (std::uint32_t t = 0; t < m; ++t)
    for (int i = 0; i < kFeatureDim; ++i)
      clip.frames[t].values[i] = static_cast<double>(get_f32(is, "SKF1 feature"));
  return clip;
}

inline void write_skf_file(const std::filesystem::path& path, const FeatureClip& clip) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  write_skf(os, clip);
}

inline FeatureClip read_skf_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  return read_skf(is);
}

}  // namespace rems
