#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <istream>
#include <ostream>
#include <string>

#include "viact/error.hpp"

// Explicit little-endian encoding for the on-disk formats.
namespace viact::detail {

template <typename U>
void write_le(std::ostream& os, U value) {
  static_assert(std::is_unsigned_v<U>);
  std::array<char, sizeof(U)> bytes{};
  for (size_t i = 0; i < sizeof(U); ++i) bytes[i] = static_cast<char>((value >> (8 * i)) & 0xFFu);
  os.write(bytes.data(), bytes.size());
}

inline void write_f32(std::ostream& os, float v) { write_le(os, std::bit_cast<uint32_t>(v)); }

inline void write_string(std::ostream& os, const std::string& s) {
  write_le(os, static_cast<uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

template <typename U>
U read_le(std::istream& is) {
  static_assert(std::is_unsigned_v<U>);
  std::array<unsigned char, sizeof(U)> bytes{};
  is.read(reinterpret_cast<char*>(bytes.data()), bytes.size());
  if (!is) throw IngestionError("unexpected end of file");
  U value = 0;
  for (size_t i = 0; i < sizeof(U); ++i) value |= static_cast<U>(bytes[i]) << (8 * i);
  return value;
}

inline float read_f32(std::istream& is) { return std::bit_cast<float>(read_le<uint32_t>(is)); }

inline std::string read_string(std::istream& is, uint32_t max_len = 1u << 24) {
  const auto len = read_le<uint32_t>(is);
  if (len > max_len) throw IngestionError("string length " + std::to_string(len) + " exceeds limit");
  std::string s(len, '\0');
  is.read(s.data(), len);
  if (!is) throw IngestionError("unexpected end of file in string");
  return s;
}

inline void expect_magic(std::istream& is, const char (&magic)[5], const std::string& what) {
  char got[4] = {};
  is.read(got, 4);
  if (!is || std::string(got, 4) != std::string(magic, 4)) {
    throw IngestionError(what + ": bad magic, expected \"" + std::string(magic, 4) + "\"");
  }
}

}  // namespace viact::detail
