#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "occlusim/errors.hpp"

namespace occlusim {

// Dense row-major grid. Pixel (x, y) lives at data[y * width + x].
template <typename T>
struct Image {
  int width = 0;
  int height = 0;
  std::vector<T> data;

  Image() = default;
  Image(int w, int h, T fill = T{})
      : width(w), height(h), data(static_cast<std::size_t>(w) * h, fill) {}

  std::size_t size() const noexcept { return data.size(); }
  std::size_t index(int x, int y) const noexcept {
    return static_cast<std::size_t>(y) * width + x;
  }

  T& operator()(int x, int y) noexcept { return data[index(x, y)]; }
  const T& operator()(int x, int y) const noexcept { return data[index(x, y)]; }

  std::span<T> row(int y) noexcept {
    return {data.data() + index(0, y), static_cast<std::size_t>(width)};
  }
  std::span<const T> row(int y) const noexcept {
    return {data.data() + index(0, y), static_cast<std::size_t>(width)};
  }

  bool same_shape(int w, int h) const noexcept { return width == w && height == h; }
  template <typename U>
  bool same_shape(const Image<U>& other) const noexcept {
    return width == other.width && height == other.height;
  }

  friend bool operator==(const Image&, const Image&) = default;
};

// Linear grayscale intensity in [0, 1].
using IntensityFrame = Image<float>;

struct Rgb8 {
  std::uint8_t r = 0, g = 0, b = 0;
  friend bool operator==(const Rgb8&, const Rgb8&) = default;
};
using RgbImage = Image<Rgb8>;

template <typename A, typename B>
void require_same_shape(const Image<A>& a, const Image<B>& b, const char* what) {
  if (!a.same_shape(b)) {
    throw DimensionError(std::string(what) + ": dimension mismatch (" +
                         std::to_string(a.width) + "x" + std::to_string(a.height) + " vs " +
                         std::to_string(b.width) + "x" + std::to_string(b.height) + ")");
  }
}

}  // namespace occlusim
