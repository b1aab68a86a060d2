#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <vector>

#include <nlohmann/json.hpp>

#include "occlusim/bytes.hpp"
#include "occlusim/event_gen.hpp"
#include "occlusim/image.hpp"

namespace occlusim {

// Per-pixel signed polarity sum over [t_start, t_end).
struct AccumFrame : Image<std::int32_t> {
  std::uint64_t t_start = 0;
  std::uint64_t t_end = 0;

  AccumFrame() = default;
  AccumFrame(int w, int h, std::uint64_t t0, std::uint64_t t1)
      : Image<std::int32_t>(w, h, 0), t_start(t0), t_end(t1) {}

  friend bool operator==(const AccumFrame&, const AccumFrame&) = default;
};

struct ReprStack {
  std::vector<AccumFrame> frames;

  std::size_t size() const noexcept { return frames.size(); }
};

inline constexpr int kDefaultReprCount = 5;

inline AccumFrame accumulate(const EventStream& stream, std::uint64_t t0, std::uint64_t t1) {
  if (!(t0 < t1)) throw ConfigError("accumulate: need t0 < t1");
  AccumFrame frame(stream.width, stream.height, t0, t1);
  auto by_time = [](const EventRecord& e, std::uint64_t t) { return e.t < t; };
  auto lo = std::lower_bound(stream.records.begin(), stream.records.end(), t0, by_time);
  auto hi = std::lower_bound(lo, stream.records.end(), t1, by_time);
  for (auto it = lo; it != hi; ++it) frame(it->x, it->y) += it->p;
  return frame;
}

// N contiguous frames of length tau starting at the stream's t_begin.
inline ReprStack build_representations(const EventStream& stream, int n, std::uint64_t tau) {
  if (n < 1) throw ConfigError("build_representations: N must be >= 1");
  if (tau == 0) throw ConfigError("build_representations: tau must be > 0");
  const std::uint64_t window = static_cast<std::uint64_t>(n) * tau;
  if (window > stream.span())
    throw SpanError("build_representations: N*tau = " + std::to_string(window) + " us exceeds stream span " +
                    std::to_string(stream.span()) + " us");
  ReprStack stack;
  stack.frames.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const std::uint64_t t0 = stream.t_begin + static_cast<std::uint64_t>(i) * tau;
    stack.frames.push_back(accumulate(stream, t0, t0 + tau));
  }
  return stack;
}

// Positive counts shade toward red, negative toward blue, zero is white.
inline RgbImage event_preview(const AccumFrame& frame, int max_count = 3) {
  max_count = std::max(max_count, 1);
  RgbImage out(frame.width, frame.height, Rgb8{255, 255, 255});
  for (std::size_t i = 0; i < frame.size(); ++i) {
    const std::int32_t c = frame.data[i];
    if (c == 0) continue;
    const double mag = std::min<double>(std::abs(static_cast<double>(c)), max_count) / max_count;
    const auto fade = static_cast<std::uint8_t>(std::lround(255.0 * (1.0 - mag)));
    out.data[i] = c > 0 ? Rgb8{255, fade, fade} : Rgb8{fade, fade, 255};
  }
  return out;
}

// Serialization: raw little-endian int16 grid plus a JSON sidecar.

inline Bytes encode_s16(const AccumFrame& frame) {
  Bytes out;
  out.reserve(frame.size() * 2);
  for (std::int32_t v : frame.data) {
    if (v < std::numeric_limits<std::int16_t>::min() || v > std::numeric_limits<std::int16_t>::max())
      throw FormatError("accumulation count " + std::to_string(v) + " does not fit in int16");
    put_le(out, static_cast<std::int16_t>(v));
  }
  return out;
}

inline nlohmann::json sidecar(const AccumFrame& frame) {
  return {{"width", frame.width}, {"height", frame.height}, {"interval", {frame.t_start, frame.t_end}}};
}

inline AccumFrame decode_s16(std::span<const std::uint8_t> raw, const nlohmann::json& meta) {
  AccumFrame frame(meta.at("width").get<int>(), meta.at("height").get<int>(),
                   meta.at("interval").at(0).get<std::uint64_t>(), meta.at("interval").at(1).get<std::uint64_t>());
  if (raw.size() != frame.size() * 2) throw FormatError("s16: size does not match sidecar dimensions");
  for (std::size_t i = 0; i < frame.size(); ++i) frame.data[i] = get_le<std::int16_t>(raw, 2 * i);
  return frame;
}

inline void write_s16(const std::filesystem::path& raw_path, const AccumFrame& frame, bool sync = false) {
  write_file(raw_path, encode_s16(frame), sync);
  auto meta_path = raw_path;
  meta_path.replace_extension(".json");
  write_text(meta_path, sidecar(frame).dump(2) + "\n", sync);
}

inline AccumFrame read_s16(const std::filesystem::path& raw_path) {
  auto meta_path = raw_path;
  meta_path.replace_extension(".json");
  const auto meta = nlohmann::json::parse(read_text(meta_path));
  return decode_s16(read_file(raw_path), meta);
}

}  // namespace occlusim
