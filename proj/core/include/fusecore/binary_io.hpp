#pragma once

// Little-endian primitives shared by the FVID / FMSK / FCKP readers and
// writers.

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <string_view>

#include "fusecore/error.hpp"

namespace fusecore::binary {

template <typename T>
T to_little(T value) {
  if constexpr (std::endian::native == std::endian::big) {
    auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(value);
    std::reverse(bytes.begin(), bytes.end());
    return std::bit_cast<T>(bytes);
  }
  return value;
}

template <typename T>
void write(std::ostream& out, T value) {
  const T le = to_little(value);
  out.write(reinterpret_cast<const char*>(&le), sizeof(T));
}

inline void write_f64(std::ostream& out, double value) { write(out, std::bit_cast<std::uint64_t>(value)); }

inline void write_bytes(std::ostream& out, std::string_view bytes) {
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

inline void write_string(std::ostream& out, std::string_view s) {
  write(out, static_cast<std::uint32_t>(s.size()));
  write_bytes(out, s);
}

template <typename T>
T read(std::istream& in, std::string_view what) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw FormatError("truncated file while reading " + std::string(what));
  return to_little(value);
}

inline double read_f64(std::istream& in, std::string_view what) {
  return std::bit_cast<double>(read<std::uint64_t>(in, what));
}

inline std::string read_bytes(std::istream& in, std::size_t n, std::string_view what) {
  std::string s(n, '\0');
  in.read(s.data(), static_cast<std::streamsize>(n));
  if (!in) throw FormatError("truncated file while reading " + std::string(what));
  return s;
}

inline std::string read_string(std::istream& in, std::string_view what, std::size_t limit = 1u << 20) {
  const auto n = read<std::uint32_t>(in, what);
  if (n > limit) throw FormatError("implausible length " + std::to_string(n) + " for " + std::string(what));
  return read_bytes(in, n, what);
}

inline void expect_magic(std::istream& in, std::string_view magic, const std::string& path) {
  const std::string got = read_bytes(in, magic.size(), "magic");
  if (got != magic) throw FormatError(path + ": bad magic, expected '" + std::string(magic) + "'");
}

}  // namespace fusecore::binary
