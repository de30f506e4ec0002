#pragma once

#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "rems/error.hpp"

namespace rems {

// Little-endian primitives shared by the SKF1 / SKR1 / SKW1 / IRNN codecs.
// Byte order is spelled out explicitly so the formats are portable even on
// big-endian hosts.

inline void put_u16(std::ostream& os, std::uint16_t v) {
  unsigned char b[2] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 2);
}

inline void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline void put_i32(std::ostream& os, std::int32_t v) {
  put_u32(os, static_cast<std::uint32_t>(v));
}

inline void put_f32(std::ostream& os, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(os, bits);
}

inline bool get_bytes(std::istream& is, unsigned char* dst, std::size_t n) {
  is.read(reinterpret_cast<char*>(dst), static_cast<std::streamsize>(n));
  return static_cast<std::size_t>(is.gcount()) == n;
}

inline std::uint16_t get_u16(std::istream& is, const char* what) {
  unsigned char b[2];
  if (!get_bytes(is, b, 2)) throw ParseError(std::string("truncated input reading ") + what);
  return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

inline std::uint32_t get_u32(std::istream& is, const char* what) {
  unsigned char b[4];
  if (!get_bytes(is, b, 4)) throw ParseError(std::string("truncated input reading ") + what);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline std::int32_t get_i32(std::istream& is, const char* what) {
  return static_cast<std::int32_t>(get_u32(is, what));
}

inline float get_f32(std::istream& is, const char* what) {
  const std::uint32_t bits = get_u32(is, what);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

// Round a double to the nearest value representable in 32-bit float.
// On-disk formats carry f32; in-memory math runs in f64 on f32-valued numbers,
// which keeps save/load round-trips bit-exact. The volatile is load-bearing:
// gcc 11's SLP vectorizer constant-folds the bare double->float->double
// round-trip into an identity at -O3, which silently skips the rounding.
inline double quantize_f32(double x) {
  volatile float narrowed = static_cast<float>(x);
  return static_cast<double>(narrowed);
}

inline void expect_magic(std::istream& is, const char magic[4], const char* format) {
  unsigned char b[4];
  if (!get_bytes(is, b, 4))
    throw ParseError(std::string("truncated input reading ") + format + " magic");
  if (std::memcmp(b, magic, 4) != 0)
    throw ParseError(std::string("bad magic for ") + format + " stream");
}

}  // namespace rems
