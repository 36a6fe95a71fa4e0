#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>

#include "gml/common.hpp"

// Little-endian primitives shared by the tensor and checkpoint file formats.

namespace gml::binio {

static_assert(std::endian::native == std::endian::little, "file formats assume a little-endian host");

inline void put_u8(std::ostream& os, std::uint8_t v) {
  os.put(static_cast<char>(v));
}

inline void put_u16(std::ostream& os, std::uint16_t v) {
  os.write(reinterpret_cast<const char*>(&v), 2);
}

inline void put_u32(std::ostream& os, std::uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), 4);
}

inline void put_u64(std::ostream& os, std::uint64_t v) {
  os.write(reinterpret_cast<const char*>(&v), 8);
}

inline void put_f32(std::ostream& os, const float* v, std::int64_t n) {
  os.write(reinterpret_cast<const char*>(v), 4 * n);
}

inline void read_exact(std::istream& is, void* out, std::int64_t n, const char* what) {
  is.read(static_cast<char*>(out), n);
  if (is.gcount() != n)
    throw FormatError(FormatError::Kind::kTruncated,
                      std::string("truncated file while reading ") + what);
}

inline std::uint8_t get_u8(std::istream& is, const char* what) {
  std::uint8_t v;
  read_exact(is, &v, 1, what);
  return v;
}

inline std::uint16_t get_u16(std::istream& is, const char* what) {
  std::uint16_t v;
  read_exact(is, &v, 2, what);
  return v;
}

inline std::uint32_t get_u32(std::istream& is, const char* what) {
  std::uint32_t v;
  read_exact(is, &v, 4, what);
  return v;
}

inline std::uint64_t get_u64(std::istream& is, const char* what) {
  std::uint64_t v;
  read_exact(is, &v, 8, what);
  return v;
}

inline void get_f32(std::istream& is, float* out, std::int64_t n, const char* what) {
  read_exact(is, out, 4 * n, what);
}

inline void expect_magic(std::istream& is, const char magic[4], const char* format_name) {
  char buf[4];
  is.read(buf, 4);
  if (is.gcount() != 4 || std::memcmp(buf, magic, 4) != 0)
    throw FormatError(FormatError::Kind::kBadMagic,
                      std::string("not a ") + format_name + " file (bad magic)");
}

inline void expect_eof(std::istream& is, const char* format_name) {
  if (is.peek() != std::istream::traits_type::eof())
    throw FormatError(FormatError::Kind::kBadRecord,
                      std::string("trailing bytes after ") + format_name + " payload");
}

}  // namespace gml::binio
