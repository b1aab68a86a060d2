#pragma once

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "occlusim/bytes.hpp"
#include "occlusim/errors.hpp"
#include "occlusim/image.hpp"
#include "occlusim/scene_sim.hpp"

namespace occlusim {

inline std::uint8_t to_u8(float v) noexcept {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

namespace detail {

struct PngFile {
  std::FILE* fp = nullptr;
  explicit PngFile(const std::filesystem::path& path, const char* mode) : fp(std::fopen(path.c_str(), mode)) {}
  ~PngFile() {
    if (fp) std::fclose(fp);
  }
  PngFile(const PngFile&) = delete;
  PngFile& operator=(const PngFile&) = delete;
};

// color_type: PNG_COLOR_TYPE_GRAY (1 byte/px) or PNG_COLOR_TYPE_RGB (3 bytes/px).
inline void write_png_raw(const std::filesystem::path& path, int width, int height, int color_type,
                          const std::uint8_t* pixels) {
  PngFile file(path, "wb");
  if (!file.fp) throw IoError("cannot create " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw IoError("libpng initialisation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("png write failed: " + path.string());
  }
  png_init_io(png, file.fp);
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8, color_type,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  const std::size_t stride = static_cast<std::size_t>(width) * (color_type == PNG_COLOR_TYPE_RGB ? 3 : 1);
  for (int y = 0; y < height; ++y) png_write_row(png, pixels + static_cast<std::size_t>(y) * stride);
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

// Decodes any PNG to 8-bit gray (RGB is reduced with Rec. 601 luma weights).
inline Image<std::uint8_t> read_png_gray8(const std::filesystem::path& path) {
  PngFile file(path, "rb");
  if (!file.fp) {
    if (!std::filesystem::exists(path)) throw MissingFileError("missing file: " + path.string());
    throw IoError("cannot open " + path.string());
  }
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("libpng initialisation failed");
  }
  Image<std::uint8_t> out;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw FormatError("png decode failed: " + path.string());
  }
  png_init_io(png, file.fp);
  png_read_info(png, info);
  const int width = static_cast<int>(png_get_image_width(png, info));
  const int height = static_cast<int>(png_get_image_height(png, info));
  const int color = png_get_color_type(png, info);
  if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  if (color == PNG_COLOR_TYPE_RGB || color == PNG_COLOR_TYPE_RGB_ALPHA || color == PNG_COLOR_TYPE_PALETTE)
    png_set_rgb_to_gray_fixed(png, 1, 29900, 58700);
  png_read_update_info(png, info);
  if (png_get_channels(png, info) != 1) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw FormatError("png: unsupported channel layout in " + path.string());
  }
  out = Image<std::uint8_t>(width, height);
  std::vector<png_bytep> rows(static_cast<std::size_t>(height));
  for (int y = 0; y < height; ++y) rows[static_cast<std::size_t>(y)] = out.data.data() + out.index(0, y);
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return out;
}

inline void skip_pnm_space(const Bytes& b, std::size_t& i) {
  while (i < b.size()) {
    if (b[i] == '#') {
      while (i < b.size() && b[i] != '\n') ++i;
    } else if (std::isspace(b[i])) {
      ++i;
    } else {
      break;
    }
  }
}

inline int read_pnm_int(const Bytes& b, std::size_t& i) {
  skip_pnm_space(b, i);
  if (i >= b.size() || !std::isdigit(b[i])) throw FormatError("pgm: malformed header");
  long v = 0;
  while (i < b.size() && std::isdigit(b[i])) {
    v = v * 10 + (b[i++] - '0');
    if (v > 1 << 24) throw FormatError("pgm: header value too large");
  }
  return static_cast<int>(v);
}

}  // namespace detail

inline void write_png(const std::filesystem::path& path, const Image<std::uint8_t>& gray) {
  detail::write_png_raw(path, gray.width, gray.height, PNG_COLOR_TYPE_GRAY, gray.data.data());
}

inline void write_png(const std::filesystem::path& path, const IntensityFrame& frame) {
  Image<std::uint8_t> gray(frame.width, frame.height);
  std::transform(frame.data.begin(), frame.data.end(), gray.data.begin(), to_u8);
  write_png(path, gray);
}

inline void write_png(const std::filesystem::path& path, const RgbImage& rgb) {
  std::vector<std::uint8_t> raw;
  raw.reserve(rgb.size() * 3);
  for (const auto& p : rgb.data) raw.insert(raw.end(), {p.r, p.g, p.b});
  detail::write_png_raw(path, rgb.width, rgb.height, PNG_COLOR_TYPE_RGB, raw.data());
}

// Mask as 0 / 255 grayscale.
inline void write_mask_png(const std::filesystem::path& path, const OcclusionMask& mask) {
  Image<std::uint8_t> gray(mask.width, mask.height);
  for (std::size_t i = 0; i < mask.size(); ++i) gray.data[i] = mask.data[i] ? 255 : 0;
  write_png(path, gray);
}

inline OcclusionMask read_mask_png(const std::filesystem::path& path, double t = 0.0) {
  const auto gray = detail::read_png_gray8(path);
  OcclusionMask mask(gray.width, gray.height, t);
  for (std::size_t i = 0; i < gray.size(); ++i) mask.data[i] = gray.data[i] >= 128 ? 1 : 0;
  return mask;
}

// Binary (P5) or ASCII (P2) PGM with maxval <= 255.
inline Image<std::uint8_t> read_pgm_gray8(const std::filesystem::path& path) {
  const Bytes b = read_file(path);
  if (b.size() < 2 || b[0] != 'P' || (b[1] != '5' && b[1] != '2')) throw FormatError("pgm: bad magic in " + path.string());
  const bool binary = b[1] == '5';
  std::size_t i = 2;
  const int w = detail::read_pnm_int(b, i), h = detail::read_pnm_int(b, i), maxval = detail::read_pnm_int(b, i);
  if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 255) throw FormatError("pgm: unsupported header in " + path.string());
  Image<std::uint8_t> out(w, h);
  if (binary) {
    ++i;  // single whitespace after maxval
    if (b.size() < i + out.size()) throw FormatError("pgm: truncated pixel data");
    std::copy_n(b.begin() + static_cast<std::ptrdiff_t>(i), out.size(), out.data.begin());
  } else {
    for (auto& v : out.data) v = static_cast<std::uint8_t>(detail::read_pnm_int(b, i));
  }
  if (maxval != 255)
    for (auto& v : out.data) v = static_cast<std::uint8_t>(std::lround(255.0 * v / maxval));
  return out;
}

inline void write_pgm(const std::filesystem::path& path, const IntensityFrame& frame) {
  std::string header = "P5\n" + std::to_string(frame.width) + " " + std::to_string(frame.height) + "\n255\n";
  Bytes out(header.begin(), header.end());
  for (float v : frame.data) out.push_back(to_u8(v));
  write_file(path, out);
}

// PNG or PGM, normalized to [0, 1] by /255.
inline IntensityFrame load_grayscale(const std::filesystem::path& path) {
  auto ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  const Image<std::uint8_t> gray = ext == ".pgm" ? read_pgm_gray8(path) : detail::read_png_gray8(path);
  IntensityFrame out(gray.width, gray.height);
  for (std::size_t i = 0; i < gray.size(); ++i) out.data[i] = static_cast<float>(gray.data[i]) / 255.0f;
  return out;
}

// Raw little-endian float32 grid; dimensions are stored elsewhere.
inline Bytes encode_f32(const IntensityFrame& frame) {
  Bytes out;
  out.reserve(frame.size() * 4);
  for (float v : frame.data) put_le(out, v);
  return out;
}

inline IntensityFrame decode_f32(std::span<const std::uint8_t> raw, int width, int height) {
  IntensityFrame out(width, height);
  if (raw.size() != out.size() * 4) throw FormatError("f32: size does not match " + std::to_string(width) + "x" +
                                                      std::to_string(height));
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = get_le<float>(raw, 4 * i);
  return out;
}

inline void write_f32(const std::filesystem::path& path, const IntensityFrame& frame, bool sync = false) {
  write_file(path, encode_f32(frame), sync);
}

inline IntensityFrame read_f32(const std::filesystem::path& path, int width, int height) {
  return decode_f32(read_file(path), width, height);
}

}  // namespace occlusim
