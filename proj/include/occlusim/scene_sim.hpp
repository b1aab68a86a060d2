#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <numbers>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "occlusim/errors.hpp"
#include "occlusim/image.hpp"
#include "occlusim/rng.hpp"

namespace occlusim {

struct Range {
  double min = 0.0;
  double max = 0.0;
  friend bool operator==(const Range&, const Range&) = default;
};

struct Vec2 {
  double x = 0.0;
  double y = 0.0;
  friend bool operator==(const Vec2&, const Vec2&) = default;
};

struct SceneConfig {
  int width = 512;
  int height = 384;
  double duration = 0.1;  // seconds
  double target_coverage = 0.3;
  Range radius_range{2.0, 10.0};       // pixels
  Range intensity_range{0.10, 0.13};   // linear intensity
  Range speed_range{80.0, 240.0};      // pixels / second
  std::uint64_t seed = 0;

  friend bool operator==(const SceneConfig&, const SceneConfig&) = default;
};

inline constexpr double kMaxCoverage = 0.9;
inline constexpr double kCoverageTolerance = 0.02;

struct Particle {
  Vec2 center0;   // pixels, at t = 0
  Vec2 velocity;  // pixels / second
  double radius = 1.0;
  double intensity = 0.0;
  std::uint32_t z = 0;  // draw order; higher is drawn on top

  friend bool operator==(const Particle&, const Particle&) = default;
};

struct SceneScript {
  SceneConfig config;
  std::vector<Particle> particles;  // sorted by ascending z
  std::shared_ptr<const IntensityFrame> background;
  std::string background_ref;  // provenance tag written to manifests
};

struct OcclusionMask : Image<std::uint8_t> {
  double t = 0.0;

  OcclusionMask() = default;
  OcclusionMask(int w, int h, double time = 0.0) : Image<std::uint8_t>(w, h, 0), t(time) {}

  bool occluded(int x, int y) const noexcept { return (*this)(x, y) != 0; }
};

inline void validate(const SceneConfig& c) {
  auto fail = [](const std::string& m) { throw ConfigError("scene config: " + m); };
  if (c.width < 16 || c.height < 16) fail("width and height must be >= 16");
  if (c.width > std::numeric_limits<std::uint16_t>::max() ||
      c.height > std::numeric_limits<std::uint16_t>::max())
    fail("width and height must fit in 16 bits");
  if (!(c.duration > 0.0) || !std::isfinite(c.duration)) fail("duration must be positive");
  if (!(c.target_coverage >= 0.0)) fail("target_coverage must be >= 0");
  if (c.target_coverage > kMaxCoverage) fail("target_coverage above 0.9 is unreachable");
  for (const auto& [name, r] : {std::pair{"radius_range", c.radius_range},
                                std::pair{"intensity_range", c.intensity_range},
                                std::pair{"speed_range", c.speed_range}}) {
    if (!(r.min <= r.max)) fail(std::string(name) + " has min > max");
  }
  if (c.radius_range.min < 1.0) fail("radius_range.min must be >= 1 px");
  if (c.intensity_range.min < 0.0 || c.intensity_range.max > 1.0)
    fail("intensity_range must lie in [0, 1]");
  if (c.speed_range.min < 0.0) fail("speed_range must be non-negative");
}

inline Vec2 particle_position(const Particle& p, double t) noexcept {
  return {p.center0.x + p.velocity.x * t, p.center0.y + p.velocity.y * t};
}

// Particles spawn over the frame grown by this margin so that occluders also
// drift in from outside and the density stays roughly stationary in time.
inline double spawn_margin(const SceneConfig& c) noexcept {
  return c.radius_range.max + c.speed_range.max * c.duration;
}

namespace detail {

inline Particle draw_particle(Rng& rng, const SceneConfig& c, std::uint32_t z) {
  const double margin = spawn_margin(c);
  Particle p;
  p.center0.x = rng.uniform(-margin, c.width + margin);
  p.center0.y = rng.uniform(-margin, c.height + margin);
  p.radius = rng.uniform(c.radius_range.min, c.radius_range.max);
  p.intensity = rng.uniform(c.intensity_range.min, c.intensity_range.max);
  const double speed = rng.uniform(c.speed_range.min, c.speed_range.max);
  const double heading = rng.uniform(0.0, 2.0 * std::numbers::pi);
  p.velocity = {speed * std::cos(heading), speed * std::sin(heading)};
  p.z = z;
  return p;
}

// Particles are drawn from a single seeded stream, so any count n yields a
// prefix of the same sequence and coverage is monotone in n.
class ParticleSource {
public:
  explicit ParticleSource(const SceneConfig& c) : config_(c), rng_(derive_seed(c.seed, 1)) {}

  const Particle& operator[](std::size_t i) {
    while (drawn_.size() <= i)
      drawn_.push_back(draw_particle(rng_, config_, static_cast<std::uint32_t>(drawn_.size())));
    return drawn_[i];
  }

  std::vector<Particle> prefix(std::size_t n) {
    if (n > 0) (void)(*this)[n - 1];
    return {drawn_.begin(), drawn_.begin() + static_cast<std::ptrdiff_t>(n)};
  }

private:
  SceneConfig config_;
  Rng rng_;
  std::vector<Particle> drawn_;
};

// Column span [x0, x1) on row y covered by a disc, using the exact predicate
// (x - cx)^2 + (y - cy)^2 < r^2 on integer pixel centers.
inline std::pair<int, int> disc_span(Vec2 c, double r, int y, int width) noexcept {
  const double dy = y - c.y;
  const double rem = r * r - dy * dy;
  if (rem <= 0.0) return {0, 0};
  const double half = std::sqrt(rem);
  auto inside = [&](int x) {
    const double dx = x - c.x;
    return dx * dx + dy * dy < r * r;
  };
  const double lo_f = std::floor(c.x - half);
  const double hi_f = std::ceil(c.x + half);
  if (hi_f < -1.0 || lo_f > width) return {0, 0};
  int lo = static_cast<int>(std::max(lo_f, -2.0));
  int hi = static_cast<int>(std::min(hi_f, static_cast<double>(width) + 1.0));
  while (lo <= hi && !inside(lo)) ++lo;
  while (hi >= lo && !inside(hi)) --hi;
  if (lo > hi) return {0, 0};
  return {std::max(lo, 0), std::min(hi + 1, width)};
}

// Per-pixel cover counter, used to evaluate coverage of particle prefixes.
class CoverCounter {
public:
  CoverCounter(int w, int h) : width_(w), height_(h), counts_(static_cast<std::size_t>(w) * h, 0) {}

  void add(const Particle& p, int delta) {
    const int y0 = std::max(0, static_cast<int>(std::floor(p.center0.y - p.radius)));
    const int y1 = std::min(height_ - 1, static_cast<int>(std::ceil(p.center0.y + p.radius)));
    for (int y = y0; y <= y1; ++y) {
      const auto [x0, x1] = disc_span(p.center0, p.radius, y, width_);
      std::uint32_t* row = counts_.data() + static_cast<std::size_t>(y) * width_;
      for (int x = x0; x < x1; ++x) {
        const std::uint32_t before = row[x];
        row[x] = static_cast<std::uint32_t>(static_cast<std::int64_t>(before) + delta);
        if (before == 0 && row[x] != 0) ++covered_;
        if (before != 0 && row[x] == 0) --covered_;
      }
    }
  }

  double coverage() const noexcept {
    return static_cast<double>(covered_) / static_cast<double>(counts_.size());
  }

private:
  int width_, height_;
  std::vector<std::uint32_t> counts_;
  std::size_t covered_ = 0;
};

}  // namespace detail

inline double coverage_ratio(const OcclusionMask& mask) noexcept {
  if (mask.size() == 0) return 0.0;
  const auto n = std::count_if(mask.data.begin(), mask.data.end(), [](auto b) { return b != 0; });
  return static_cast<double>(n) / static_cast<double>(mask.size());
}

// Boolean-model estimate refined by measurement on the seeded particle
// sequence. Returns the particle count whose t = 0 coverage is within
// kCoverageTolerance of the target.
inline std::size_t calibrate_count(const SceneConfig& config) {
  validate(config);
  const double target = config.target_coverage;
  if (target == 0.0) return 0;

  const double a = config.radius_range.min, b = config.radius_range.max;
  const double mean_r2 = (a * a + a * b + b * b) / 3.0;
  const double m = spawn_margin(config);
  const double spawn_area = (config.width + 2.0 * m) * (config.height + 2.0 * m);
  const double estimate = -std::log1p(-target) * spawn_area / (std::numbers::pi * mean_r2);

  constexpr double kMaxParticles = 5.0e6;
  if (!(estimate < kMaxParticles))
    throw ConfigError("scene config: radius range cannot reach target coverage within " +
                      std::to_string(static_cast<long>(kMaxParticles)) + " particles");

  detail::ParticleSource source(config);
  detail::CoverCounter counter(config.width, config.height);
  std::size_t current = 0;
  auto measure = [&](std::size_t n) {
    for (; current < n; ++current) counter.add(source[current], +1);
    for (; current > n; --current) counter.add(source[current - 1], -1);
    return counter.coverage();
  };

  // Bracket [lo, hi] on the monotone coverage(n).
  std::size_t lo = 0, hi = static_cast<std::size_t>(kMaxParticles);
  std::size_t n = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(estimate)));
  std::size_t best_n = 0;
  double best_err = std::numeric_limits<double>::infinity();
  constexpr int kMaxIterations = 20;
  constexpr double kAim = 0.005;  // tighter than the tolerance to center buckets

  for (int it = 0; it < kMaxIterations; ++it) {
    const double cov = measure(n);
    const double err = std::abs(cov - target);
    if (err < best_err) {
      best_err = err;
      best_n = n;
    }
    if (err <= kAim) break;
    if (cov < target)
      lo = n;
    else
      hi = n;
    if (hi - lo <= 1) break;
    // Boolean-model inversion, kept strictly inside the bracket.
    double next = static_cast<double>(n);
    if (cov > 0.0 && cov < 1.0) next = n * std::log1p(-target) / std::log1p(-cov);
    else next = cov <= 0.0 ? 2.0 * n : 0.5 * n;
    auto candidate = static_cast<std::size_t>(std::llround(next));
    if (candidate <= lo || candidate >= hi) candidate = lo + (hi - lo) / 2;
    n = candidate;
  }
  if (best_err > kCoverageTolerance)
    throw CoverageCalibrationError("could not reach coverage " + std::to_string(target) +
                                   " (best " + std::to_string(best_err) + " away)");
  return best_n;
}

inline SceneScript sample_scene(const SceneConfig& config,
                                std::shared_ptr<const IntensityFrame> background,
                                std::string background_ref = {}) {
  validate(config);
  if (!background || !background->same_shape(config.width, config.height))
    throw DimensionError("sample_scene: background dimensions differ from the config");
  SceneScript script;
  script.config = config;
  script.background = std::move(background);
  script.background_ref = std::move(background_ref);
  detail::ParticleSource source(config);
  script.particles = source.prefix(calibrate_count(config));
  return script;
}

// Renders rows [y0, y1) at time t into `values` / `mask` (row-major, band
// local). Occluded iff a particle center is strictly closer than its radius.
inline void render_rows(const SceneScript& script, double t, int y0, int y1, std::span<float> values,
                        std::span<std::uint8_t> mask) {
  const IntensityFrame& bg = *script.background;
  const int w = bg.width;
  std::copy(bg.data.begin() + static_cast<std::ptrdiff_t>(bg.index(0, y0)),
            bg.data.begin() + static_cast<std::ptrdiff_t>(bg.index(0, y1)), values.begin());
  std::fill(mask.begin(), mask.end(), std::uint8_t{0});
  for (const Particle& p : script.particles) {
    const Vec2 c = particle_position(p, t);
    if (c.x + p.radius < -1.0 || c.x - p.radius > w) continue;
    const int ya = std::max(y0, static_cast<int>(std::floor(c.y - p.radius)));
    const int yb = std::min(y1 - 1, static_cast<int>(std::ceil(c.y + p.radius)));
    const auto value = static_cast<float>(p.intensity);
    for (int y = ya; y <= yb; ++y) {
      const auto [x0, x1] = detail::disc_span(c, p.radius, y, w);
      if (x0 >= x1) continue;
      const std::size_t base = static_cast<std::size_t>(y - y0) * w;
      std::fill(values.begin() + static_cast<std::ptrdiff_t>(base + x0),
                values.begin() + static_cast<std::ptrdiff_t>(base + x1), value);
      std::fill(mask.begin() + static_cast<std::ptrdiff_t>(base + x0),
                mask.begin() + static_cast<std::ptrdiff_t>(base + x1), std::uint8_t{1});
    }
  }
}

inline std::pair<IntensityFrame, OcclusionMask> render_frame(const SceneScript& script, double t) {
  const int w = script.config.width, h = script.config.height;
  IntensityFrame frame(w, h);
  OcclusionMask mask(w, h, t);
  render_rows(script, t, 0, h, frame.data, mask.data);
  return {std::move(frame), std::move(mask)};
}

// Procedural stand-in for natural photographs: multi-octave value noise with
// a 1/f-like falloff plus a handful of hard-edged flat shapes.
inline IntensityFrame synth_background(int width, int height, std::uint64_t seed) {
  Rng rng(derive_seed(seed, 2));
  std::vector<double> acc(static_cast<std::size_t>(width) * height, 0.0);

  auto smooth = [](double f) { return f * f * (3.0 - 2.0 * f); };
  for (int cell = 128; cell >= 2; cell /= 2) {
    const int gw = width / cell + 2, gh = height / cell + 2;
    std::vector<double> lattice(static_cast<std::size_t>(gw) * gh);
    for (auto& v : lattice) v = rng.uniform(-1.0, 1.0);
    const double amp = std::pow(static_cast<double>(cell), 0.85);
    for (int y = 0; y < height; ++y) {
      const double fy = static_cast<double>(y) / cell;
      const int iy = static_cast<int>(fy);
      const double ty = smooth(fy - iy);
      for (int x = 0; x < width; ++x) {
        const double fx = static_cast<double>(x) / cell;
        const int ix = static_cast<int>(fx);
        const double tx = smooth(fx - ix);
        auto at = [&](int gx, int gy) { return lattice[static_cast<std::size_t>(gy) * gw + gx]; };
        const double top = at(ix, iy) + tx * (at(ix + 1, iy) - at(ix, iy));
        const double bot = at(ix, iy + 1) + tx * (at(ix + 1, iy + 1) - at(ix, iy + 1));
        acc[static_cast<std::size_t>(y) * width + x] += amp * (top + ty * (bot - top));
      }
    }
  }

  auto [mn, mx] = std::minmax_element(acc.begin(), acc.end());
  const double lo = *mn, span = std::max(*mx - *mn, 1e-12);
  for (auto& v : acc) v = (v - lo) / span;

  const int shapes = 6 + static_cast<int>(rng.uniform() * 10.0);
  for (int s = 0; s < shapes; ++s) {
    const bool ellipse = rng.uniform() < 0.5;
    const double cx = rng.uniform(0.0, width), cy = rng.uniform(0.0, height);
    const double rx = rng.uniform(0.04, 0.25) * width, ry = rng.uniform(0.04, 0.25) * height;
    const double level = rng.uniform(0.0, 1.0);
    const double alpha = rng.uniform(0.5, 0.95);
    const int x0 = std::max(0, static_cast<int>(cx - rx)), x1 = std::min(width, static_cast<int>(cx + rx) + 1);
    const int y0 = std::max(0, static_cast<int>(cy - ry)), y1 = std::min(height, static_cast<int>(cy + ry) + 1);
    for (int y = y0; y < y1; ++y) {
      for (int x = x0; x < x1; ++x) {
        if (ellipse) {
          const double u = (x - cx) / rx, v = (y - cy) / ry;
          if (u * u + v * v >= 1.0) continue;
        }
        double& px = acc[static_cast<std::size_t>(y) * width + x];
        px = (1.0 - alpha) * px + alpha * (level + 0.15 * (px - 0.5));
      }
    }
  }

  IntensityFrame out(width, height);
  auto [mn2, mx2] = std::minmax_element(acc.begin(), acc.end());
  const double lo2 = *mn2, span2 = std::max(*mx2 - *mn2, 1e-12);
  for (std::size_t i = 0; i < acc.size(); ++i)
    out.data[i] = static_cast<float>(0.02 + 0.96 * (acc[i] - lo2) / span2);
  return out;
}

// Center crop of a larger image to the scene size.
inline IntensityFrame center_crop(const IntensityFrame& img, int width, int height) {
  if (img.width < width || img.height < height)
    throw DimensionError("background " + std::to_string(img.width) + "x" + std::to_string(img.height) +
                         " is smaller than the scene " + std::to_string(width) + "x" +
                         std::to_string(height));
  IntensityFrame out(width, height);
  const int ox = (img.width - width) / 2, oy = (img.height - height) / 2;
  for (int y = 0; y < height; ++y)
    std::copy_n(img.row(y + oy).begin() + ox, width, out.row(y).begin());
  return out;
}

// JSON (field names follow the domain types).

inline void to_json(nlohmann::json& j, const Range& r) { j = nlohmann::json::array({r.min, r.max}); }
inline void from_json(const nlohmann::json& j, Range& r) {
  r.min = j.at(0).get<double>();
  r.max = j.at(1).get<double>();
}

inline void to_json(nlohmann::json& j, const Vec2& v) { j = nlohmann::json::array({v.x, v.y}); }
inline void from_json(const nlohmann::json& j, Vec2& v) {
  v.x = j.at(0).get<double>();
  v.y = j.at(1).get<double>();
}

inline void to_json(nlohmann::json& j, const SceneConfig& c) {
  j = nlohmann::json{{"width", c.width},
                     {"height", c.height},
                     {"duration", c.duration},
                     {"target_coverage", c.target_coverage},
                     {"radius_range", c.radius_range},
                     {"intensity_range", c.intensity_range},
                     {"speed_range", c.speed_range},
                     {"seed", c.seed}};
}
inline void from_json(const nlohmann::json& j, SceneConfig& c) {
  j.at("width").get_to(c.width);
  j.at("height").get_to(c.height);
  j.at("duration").get_to(c.duration);
  j.at("target_coverage").get_to(c.target_coverage);
  j.at("radius_range").get_to(c.radius_range);
  j.at("intensity_range").get_to(c.intensity_range);
  j.at("speed_range").get_to(c.speed_range);
  j.at("seed").get_to(c.seed);
}

inline void to_json(nlohmann::json& j, const Particle& p) {
  j = nlohmann::json{{"center0", p.center0},
                     {"velocity", p.velocity},
                     {"radius", p.radius},
                     {"intensity", p.intensity},
                     {"z", p.z}};
}
inline void from_json(const nlohmann::json& j, Particle& p) {
  j.at("center0").get_to(p.center0);
  j.at("velocity").get_to(p.velocity);
  j.at("radius").get_to(p.radius);
  j.at("intensity").get_to(p.intensity);
  j.at("z").get_to(p.z);
}

inline nlohmann::json to_json(const SceneScript& s) {
  return nlohmann::json{{"config", s.config}, {"particles", s.particles}, {"background", s.background_ref}};
}

}  // namespace occlusim
