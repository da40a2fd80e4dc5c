#pragma once

#include "flamegs/common.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <string_view>

namespace flamegs::detail {

static_assert(std::endian::native == std::endian::little,
              "binary formats are written with native little-endian stores");

inline void write_magic(std::ostream& os, std::string_view magic) {
  os.write(magic.data(), static_cast<std::streamsize>(magic.size()));
}

template <typename T>
void write_le(std::ostream& os, T value) {
  os.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

inline void expect_magic(std::istream& is, std::string_view magic, std::string_view what) {
  std::string buf(magic.size(), '\0');
  is.read(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!is || buf != magic) {
    throw FormatError(std::string(what) + ": bad magic, expected '" + std::string(magic) + "'");
  }
}

template <typename T>
T read_le(std::istream& is, std::string_view what) {
  T value{};
  is.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!is) throw FormatError(std::string(what) + ": truncated file");
  return value;
}

}  // namespace flamegs::detail
