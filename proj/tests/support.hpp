#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "occlusim/event_gen.hpp"
#include "occlusim/scene_sim.hpp"

namespace testing_support {

using namespace occlusim;

inline std::shared_ptr<const IntensityFrame> flat(int w, int h, float v) {
  return std::make_shared<const IntensityFrame>(w, h, v);
}

// Smooth horizontal ramp in [lo, hi].
inline std::shared_ptr<const IntensityFrame> ramp(int w, int h, float lo, float hi) {
  auto f = std::make_shared<IntensityFrame>(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) (*f)(x, y) = lo + (hi - lo) * static_cast<float>(x) / static_cast<float>(w - 1);
  return f;
}

inline SceneConfig small_config(int w, int h, double duration = 0.02) {
  SceneConfig c;
  c.width = w;
  c.height = h;
  c.duration = duration;
  c.target_coverage = 0.0;
  return c;
}

inline SceneScript manual_script(const SceneConfig& c, std::shared_ptr<const IntensityFrame> bg,
                                 std::vector<Particle> particles) {
  SceneScript s;
  s.config = c;
  s.background = std::move(bg);
  for (std::size_t i = 0; i < particles.size(); ++i) particles[i].z = static_cast<std::uint32_t>(i);
  s.particles = std::move(particles);
  return s;
}

inline Particle particle(double x, double y, double r, double intensity, double vx = 0.0, double vy = 0.0) {
  Particle p;
  p.center0 = {x, y};
  p.velocity = {vx, vy};
  p.radius = r;
  p.intensity = intensity;
  return p;
}

// Index of the top-most particle covering pixel (x, y) at t, or -1.
inline int brute_cover(const SceneScript& s, int x, int y, double t) {
  int top = -1;
  for (std::size_t i = 0; i < s.particles.size(); ++i) {
    const auto& p = s.particles[i];
    const double cx = p.center0.x + p.velocity.x * t, cy = p.center0.y + p.velocity.y * t;
    const double dx = x - cx, dy = y - cy;
    if (dx * dx + dy * dy < p.radius * p.radius &&
        (top < 0 || p.z > s.particles[static_cast<std::size_t>(top)].z))
      top = static_cast<int>(i);
  }
  return top;
}

inline IntensityFrame brute_render(const SceneScript& s, double t) {
  IntensityFrame f = *s.background;
  for (int y = 0; y < f.height; ++y)
    for (int x = 0; x < f.width; ++x) {
      const int k = brute_cover(s, x, y, t);
      if (k >= 0) f(x, y) = static_cast<float>(s.particles[static_cast<std::size_t>(k)].intensity);
    }
  return f;
}

inline std::vector<std::int64_t> signed_sums(const EventStream& s) {
  std::vector<std::int64_t> sum(static_cast<std::size_t>(s.width) * s.height, 0);
  for (const auto& e : s.records) sum[static_cast<std::size_t>(e.y) * s.width + e.x] += e.p;
  return sum;
}

// A valid random stream: sorted, strictly increasing per-pixel timestamps.
inline EventStream random_stream(int w, int h, std::size_t n, std::uint64_t t_end, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::map<std::pair<int, std::uint64_t>, std::int8_t> unique;
  while (unique.size() < n) {
    const int pixel = static_cast<int>(gen() % static_cast<std::uint64_t>(w * h));
    const std::uint64_t t = gen() % t_end;
    unique[{pixel, t}] = (gen() & 1) ? 1 : -1;
  }
  EventStream s;
  s.width = w;
  s.height = h;
  s.t_begin = 0;
  s.t_end = t_end;
  for (const auto& [key, p] : unique)
    s.records.push_back({key.second, static_cast<std::uint16_t>(key.first % w),
                         static_cast<std::uint16_t>(key.first / w), p});
  std::sort(s.records.begin(), s.records.end(), event_less);
  return s;
}

// Direct evaluation of the windowed statistics at every valid position
// with the full 2-D Gaussian weight, independent of the separable code.
template <typename T>
double ssim_oracle(const Image<T>& a, const Image<T>& b) {
  constexpr int n = 11;
  constexpr double sigma = 1.5;
  double w2[n][n];
  double total = 0.0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      const double di = i - 5, dj = j - 5;
      w2[i][j] = std::exp(-(di * di + dj * dj) / (2 * sigma * sigma));
      total += w2[i][j];
    }
  const double c1 = 0.0001, c2 = 0.0009;
  double acc = 0.0;
  int count = 0;
  for (int y = 0; y + n <= a.height; ++y)
    for (int x = 0; x + n <= a.width; ++x) {
      double ma = 0, mb = 0;
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
          ma += w2[i][j] / total * a(x + j, y + i);
          mb += w2[i][j] / total * b(x + j, y + i);
        }
      double va = 0, vb = 0, cov = 0;
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
          const double da = a(x + j, y + i) - ma, db = b(x + j, y + i) - mb;
          va += w2[i][j] / total * da * da;
          vb += w2[i][j] / total * db * db;
          cov += w2[i][j] / total * da * db;
        }
      acc += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
      ++count;
    }
  return acc / count;
}

struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path = std::filesystem::temp_directory_path() /
           ("occlusim_" + tag + "_" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
};

}  // namespace testing_support
