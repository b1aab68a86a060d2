#pragma once

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <filesystem>
#include <sstream>
#include <string>
#include <string_view>

#include "occlusim/bytes.hpp"
#include "occlusim/event_gen.hpp"

namespace occlusim {

// .evb layout (little-endian):
//   16 bytes  magic "EVOC0001" zero-padded
//   u16 width, u16 height, u64 record count
//   records:  u64 t_us, u16 x, u16 y, i8 p, i8 pad (= 0), packed (14 bytes)
// The file carries no time span; readers take [0, last t + 1) unless told
// otherwise.
inline constexpr std::string_view kEvbMagic = "EVOC0001";
inline constexpr std::size_t kEvbMagicBytes = 16;
inline constexpr std::size_t kEvbHeaderBytes = kEvbMagicBytes + 2 + 2 + 8;
inline constexpr std::size_t kEvbRecordBytes = 8 + 2 + 2 + 1 + 1;

inline Bytes encode_evb(const EventStream& s) {
  Bytes out;
  out.reserve(kEvbHeaderBytes + s.records.size() * kEvbRecordBytes);
  out.insert(out.end(), kEvbMagic.begin(), kEvbMagic.end());
  out.resize(kEvbMagicBytes, 0);
  put_le(out, static_cast<std::uint16_t>(s.width));
  put_le(out, static_cast<std::uint16_t>(s.height));
  put_le(out, static_cast<std::uint64_t>(s.records.size()));
  for (const EventRecord& e : s.records) {
    put_le(out, e.t);
    put_le(out, e.x);
    put_le(out, e.y);
    put_le(out, e.p);
    put_le(out, std::int8_t{0});
  }
  return out;
}

inline EventStream decode_evb(std::span<const std::uint8_t> in) {
  if (in.size() < kEvbHeaderBytes) throw FormatError("evb: file shorter than header");
  if (!std::equal(kEvbMagic.begin(), kEvbMagic.end(), in.begin()) ||
      std::any_of(in.begin() + kEvbMagic.size(), in.begin() + kEvbMagicBytes, [](auto b) { return b != 0; }))
    throw FormatError("evb: bad magic");
  EventStream s;
  s.width = get_le<std::uint16_t>(in, 16);
  s.height = get_le<std::uint16_t>(in, 18);
  const auto count = get_le<std::uint64_t>(in, 20);
  if (count > (in.size() - kEvbHeaderBytes) / kEvbRecordBytes ||
      in.size() != kEvbHeaderBytes + count * kEvbRecordBytes)
    throw FormatError("evb: record count does not match file size");
  s.records.resize(count);
  std::size_t off = kEvbHeaderBytes;
  for (auto& e : s.records) {
    e.t = get_le<std::uint64_t>(in, off);
    e.x = get_le<std::uint16_t>(in, off + 8);
    e.y = get_le<std::uint16_t>(in, off + 10);
    e.p = get_le<std::int8_t>(in, off + 12);
    if (get_le<std::int8_t>(in, off + 13) != 0) throw FormatError("evb: nonzero pad byte");
    off += kEvbRecordBytes;
  }
  s.t_begin = 0;
  s.t_end = s.records.empty() ? 0 : s.records.back().t + 1;
  if (auto err = check_stream(s); !err.empty()) throw FormatError("evb: " + err);
  return s;
}

inline void write_evb(const std::filesystem::path& path, const EventStream& s, bool sync = false) {
  write_file(path, encode_evb(s), sync);
}

inline EventStream read_evb(const std::filesystem::path& path) { return decode_evb(read_file(path)); }

// CSV form: optional "t_us,x,y,p" header, one event per line.
inline std::string encode_csv(const EventStream& s) {
  std::string out = "t_us,x,y,p\n";
  out.reserve(out.size() + s.records.size() * 20);
  for (const EventRecord& e : s.records) {
    out += std::to_string(e.t);
    out += ',';
    out += std::to_string(e.x);
    out += ',';
    out += std::to_string(e.y);
    out += ',';
    out += e.p > 0 ? "1" : "-1";
    out += '\n';
  }
  return out;
}

// The CSV carries no dimensions; the caller supplies them.
inline EventStream decode_csv(std::string_view text, int width, int height) {
  EventStream s;
  s.width = width;
  s.height = height;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty() || (line_no == 1 && line.starts_with("t_us"))) continue;

    long long fields[4];
    const char* p = line.data();
    const char* end = line.data() + line.size();
    for (int f = 0; f < 4; ++f) {
      auto [next, ec] = std::from_chars(p, end, fields[f]);
      if (ec != std::errc{} || (f < 3 && (next == end || *next != ',')) || (f == 3 && next != end))
        throw FormatError("csv: malformed line " + std::to_string(line_no));
      p = next + 1;
    }
    if (fields[0] < 0 || fields[1] < 0 || fields[2] < 0 || fields[1] > 0xFFFF || fields[2] > 0xFFFF)
      throw FormatError("csv: field out of range on line " + std::to_string(line_no));
    s.records.push_back({static_cast<std::uint64_t>(fields[0]), static_cast<std::uint16_t>(fields[1]),
                         static_cast<std::uint16_t>(fields[2]), static_cast<std::int8_t>(fields[3])});
  }
  s.t_end = s.records.empty() ? 0 : s.records.back().t + 1;
  if (auto err = check_stream(s); !err.empty()) throw FormatError("csv: " + err);
  return s;
}

inline void write_csv(const std::filesystem::path& path, const EventStream& s) { write_text(path, encode_csv(s)); }

inline EventStream read_csv(const std::filesystem::path& path, int width, int height) {
  return decode_csv(read_text(path), width, height);
}

}  // namespace occlusim
