#pragma once

#include <bit>
#include <cstdint>
#include <istream>
#include <ostream>
#include <string>

#include "iso3d/error.hpp"

namespace iso3d::binary {

// Little-endian primitives shared by the cloud and weight formats.

template <typename UInt>
void put_uint(std::ostream& out, UInt value) {
  char bytes[sizeof(UInt)];
  for (std::size_t i = 0; i < sizeof(UInt); ++i) bytes[i] = static_cast<char>((value >> (8 * i)) & 0xffu);
  out.write(bytes, sizeof(UInt));
}

template <typename UInt>
UInt get_uint(std::istream& in, const char* what) {
  unsigned char bytes[sizeof(UInt)];
  if (!in.read(reinterpret_cast<char*>(bytes), sizeof(UInt))) {
    throw FormatError(std::string("truncated payload reading ") + what);
  }
  UInt value = 0;
  for (std::size_t i = 0; i < sizeof(UInt); ++i) value |= static_cast<UInt>(bytes[i]) << (8 * i);
  return value;
}

inline void put_f32(std::ostream& out, float value) { put_uint(out, std::bit_cast<std::uint32_t>(value)); }

inline float get_f32(std::istream& in, const char* what) {
  return std::bit_cast<float>(get_uint<std::uint32_t>(in, what));
}

inline void expect_magic(std::istream& in, const char (&magic)[5]) {
  char got[4] = {};
  if (!in.read(got, 4) || std::string(got, 4) != std::string(magic, 4)) {
    throw FormatError(std::string("bad magic, expected '") + magic + "'");
  }
}

}  // namespace iso3d::binary
