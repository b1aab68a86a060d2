#pragma once

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "occlusim/errors.hpp"

namespace occlusim {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

using Bytes = std::vector<std::uint8_t>;

template <typename T>
  requires std::is_arithmetic_v<T>
void put_le(Bytes& out, T value) {
  std::uint8_t raw[sizeof(T)];
  std::memcpy(raw, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(raw, raw + sizeof(T));
  out.insert(out.end(), raw, raw + sizeof(T));
}

template <typename T>
  requires std::is_arithmetic_v<T>
T get_le(std::span<const std::uint8_t> in, std::size_t offset) {
  if (offset + sizeof(T) > in.size()) throw FormatError("truncated data");
  std::uint8_t raw[sizeof(T)];
  std::memcpy(raw, in.data() + offset, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(raw, raw + sizeof(T));
  T value;
  std::memcpy(&value, raw, sizeof(T));
  return value;
}

// 64-bit FNV-1a.
inline std::uint64_t checksum64(std::span<const std::uint8_t> data) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (std::uint8_t b : data) {
    h ^= b;
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = digits[v & 0xF];
  return s;
}

inline Bytes read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    if (!std::filesystem::exists(path)) throw MissingFileError("missing file: " + path.string());
    throw IoError("cannot open " + path.string());
  }
  Bytes data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return data;
}

// Flushes file contents to stable storage.
inline void sync_file(const std::filesystem::path& path) {
  const int fd = ::open(path.c_str(), O_RDONLY);
  if (fd < 0) throw IoError("cannot open for sync: " + path.string());
  const int rc = ::fsync(fd);
  ::close(fd);
  if (rc != 0) throw IoError("fsync failed: " + path.string());
}

inline void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> data, bool sync = false) {
  {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot create " + path.string());
    out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
    if (!out) throw IoError("write failed: " + path.string());
  }
  if (sync) sync_file(path);
}

inline void write_text(const std::filesystem::path& path, const std::string& text, bool sync = false) {
  write_file(path, {reinterpret_cast<const std::uint8_t*>(text.data()), text.size()}, sync);
}

inline std::string read_text(const std::filesystem::path& path) {
  const Bytes b = read_file(path);
  return {b.begin(), b.end()};
}

}  // namespace occlusim
