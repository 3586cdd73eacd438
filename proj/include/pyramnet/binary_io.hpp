#pragma once

// Little-endian primitives shared by the checkpoint and point-cloud formats.

#include "pyramnet/errors.hpp"

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <type_traits>

namespace pyramnet::binary {

template <typename T>
void write_le(std::ostream& out, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  out.write(bytes, sizeof(T));
}

template <typename T>
T read_le(std::istream& in, const std::string& what) {
  static_assert(std::is_trivially_copyable_v<T>);
  char bytes[sizeof(T)];
  if (!in.read(bytes, sizeof(T))) throw DataError("truncated file while reading " + what);
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  T value;
  std::memcpy(&value, bytes, sizeof(T));
  return value;
}

template <typename T>
void write_array(std::ostream& out, const T* data, std::size_t count) {
  if constexpr (std::endian::native == std::endian::little) {
    out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(count * sizeof(T)));
  } else {
    for (std::size_t i = 0; i < count; ++i) write_le(out, data[i]);
  }
}

template <typename T>
void read_array(std::istream& in, T* data, std::size_t count, const std::string& what) {
  if constexpr (std::endian::native == std::endian::little) {
    if (!in.read(reinterpret_cast<char*>(data), static_cast<std::streamsize>(count * sizeof(T)))) {
      throw DataError("truncated file while reading " + what);
    }
  } else {
    for (std::size_t i = 0; i < count; ++i) data[i] = read_le<T>(in, what);
  }
}

inline void write_string(std::ostream& out, const std::string& s) {
  write_le<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_string(std::istream& in, const std::string& what) {
  const auto size = read_le<std::uint32_t>(in, what);
  if (size > (1u << 30)) throw DataError("implausible string length while reading " + what);
  std::string s(size, '\0');
  if (size && !in.read(s.data(), size)) throw DataError("truncated file while reading " + what);
  return s;
}

}  // namespace pyramnet::binary
