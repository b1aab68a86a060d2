#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include "occlusim/errors.hpp"
#include "occlusim/image.hpp"
#include "occlusim/rng.hpp"
#include "occlusim/scene_sim.hpp"

namespace occlusim {

struct EventCameraParams {
  double contrast_threshold = 0.15;  // C, log-intensity units
  double log_eps = 1e-3;
  double threshold_jitter_sigma = 0.0;
  double refractory_us = 0.0;
  double render_rate = 5000.0;  // frames / second

  friend bool operator==(const EventCameraParams&, const EventCameraParams&) = default;
};

inline void validate(const EventCameraParams& p) {
  if (!(p.contrast_threshold > 0.0)) throw ConfigError("event params: contrast threshold must be > 0");
  if (!(p.log_eps > 0.0)) throw ConfigError("event params: log_eps must be > 0");
  if (!(p.threshold_jitter_sigma >= 0.0)) throw ConfigError("event params: jitter sigma must be >= 0");
  if (!(p.refractory_us >= 0.0)) throw ConfigError("event params: refractory period must be >= 0");
  if (!(p.render_rate >= 100.0)) throw ConfigError("event params: render rate must be >= 100 fps");
}

struct EventRecord {
  std::uint64_t t = 0;  // microseconds
  std::uint16_t x = 0;
  std::uint16_t y = 0;
  std::int8_t p = 1;

  friend bool operator==(const EventRecord&, const EventRecord&) = default;
};

// Canonical stream order: (t, y, x, p).
inline constexpr auto event_less = [](const EventRecord& a, const EventRecord& b) noexcept {
  if (a.t != b.t) return a.t < b.t;
  if (a.y != b.y) return a.y < b.y;
  if (a.x != b.x) return a.x < b.x;
  return a.p < b.p;
};

struct EventStream {
  int width = 0;
  int height = 0;
  // Half-open span [t_begin, t_end) in microseconds.
  std::uint64_t t_begin = 0;
  std::uint64_t t_end = 0;
  std::vector<EventRecord> records;
  std::vector<std::string> warnings;

  std::size_t size() const noexcept { return records.size(); }
  bool empty() const noexcept { return records.empty(); }
  std::uint64_t span() const noexcept { return t_end - t_begin; }
};

// Checks every stream invariant; returns an empty string when valid.
inline std::string check_stream(const EventStream& s) {
  std::vector<std::int64_t> last(static_cast<std::size_t>(s.width) * s.height, -1);
  for (std::size_t i = 0; i < s.records.size(); ++i) {
    const EventRecord& e = s.records[i];
    if (e.x >= s.width || e.y >= s.height) return "record " + std::to_string(i) + " out of bounds";
    if (e.p != 1 && e.p != -1) return "record " + std::to_string(i) + " has invalid polarity";
    if (e.t < s.t_begin || e.t >= s.t_end) return "record " + std::to_string(i) + " outside time span";
    if (i > 0 && event_less(e, s.records[i - 1])) return "record " + std::to_string(i) + " out of order";
    auto& l = last[static_cast<std::size_t>(e.y) * s.width + e.x];
    if (static_cast<std::int64_t>(e.t) <= l)
      return "record " + std::to_string(i) + " repeats a pixel timestamp";
    l = static_cast<std::int64_t>(e.t);
  }
  return {};
}

struct LogFrame : Image<double> {
  double t = 0.0;

  LogFrame() = default;
  LogFrame(int w, int h, double time = 0.0) : Image<double>(w, h, 0.0), t(time) {}
};

inline double log_intensity(double intensity, double log_eps) noexcept {
  return std::log(intensity + log_eps);
}

inline LogFrame log_transform(const IntensityFrame& frame, double log_eps, double t = 0.0) {
  LogFrame out(frame.width, frame.height, t);
  for (std::size_t i = 0; i < frame.size(); ++i) out.data[i] = log_intensity(frame.data[i], log_eps);
  return out;
}

inline std::uint64_t seconds_to_us(double s) noexcept {
  return static_cast<std::uint64_t>(std::llround(s * 1e6));
}

namespace detail {

struct PixelState {
  double level = 0.0;      // log intensity at the previous rendered frame
  double reference = 0.0;  // log level at the last threshold crossing
  double threshold = 0.0;  // threshold for the next crossing
  std::int64_t last_t = -1;
  std::int64_t last_emitted = -1;
};

class BandSimulator {
public:
  BandSimulator(const SceneScript& script, const EventCameraParams& params, int y0, int y1)
      : script_(script), params_(params), y0_(y0), y1_(y1), width_(script.config.width),
        values_(static_cast<std::size_t>(y1 - y0) * width_),
        previous_(values_.size()),
        mask_(values_.size()),
        state_(values_.size()) {}

  void start(double t) {
    render_rows(script_, t, y0_, y1_, values_, mask_);
    for (std::size_t i = 0; i < values_.size(); ++i) {
      PixelState& s = state_[i];
      s.level = log_intensity(values_[i], params_.log_eps);
      s.reference = s.level;
      s.threshold = draw_threshold(i);
    }
    previous_.swap(values_);
  }

  // Advances to the frame at `t` (rendered at microsecond time t_us).
  void step(double t, double t_prev_us, double t_us, std::vector<EventRecord>& out) {
    render_rows(script_, t, y0_, y1_, values_, mask_);
    const std::size_t first = out.size();
    for (std::size_t i = 0; i < values_.size(); ++i) {
      if (values_[i] == previous_[i]) continue;
      const double next = log_intensity(values_[i], params_.log_eps);
      emit(i, next, t_prev_us, t_us, out);
      state_[i].level = next;
    }
    // Stamps of one interval precede the next interval's, so sorting each
    // block keeps the band nearly sorted.
    sort_block(out, first);
    previous_.swap(values_);
  }

private:
  // Records of one frame step arrive in raster order with distinct stamps
  // per pixel, so a stable counting sort on t yields (t, y, x) order.
  void sort_block(std::vector<EventRecord>& out, std::size_t first) {
    const auto begin = out.begin() + static_cast<std::ptrdiff_t>(first);
    if (out.end() - begin < 2) return;
    auto [lo, hi] = std::minmax_element(begin, out.end(), [](const auto& a, const auto& b) { return a.t < b.t; });
    const std::uint64_t t0 = lo->t, range = hi->t - lo->t + 1;
    if (range > 65536) {
      std::sort(begin, out.end(), event_less);
      return;
    }
    bucket_.assign(range + 1, 0);
    for (auto it = begin; it != out.end(); ++it) ++bucket_[it->t - t0 + 1];
    for (std::size_t b = 1; b <= range; ++b) bucket_[b] += bucket_[b - 1];
    scratch_.resize(static_cast<std::size_t>(out.end() - begin));
    for (auto it = begin; it != out.end(); ++it) scratch_[bucket_[it->t - t0]++] = *it;
    std::copy(scratch_.begin(), scratch_.end(), begin);
  }

  double draw_threshold(std::size_t local) {
    const double c = params_.contrast_threshold;
    if (params_.threshold_jitter_sigma <= 0.0) return c;
    if (jitter_.empty()) {
      jitter_.reserve(values_.size());
      for (std::size_t i = 0; i < values_.size(); ++i)
        jitter_.emplace_back(script_.config.seed, global_index(i));
    }
    for (int attempt = 0; attempt < 64; ++attempt) {
      const double v = c + params_.threshold_jitter_sigma * jitter_[local].normal();
      if (v > 0.0) return v;
    }
    return c;
  }

  std::uint64_t global_index(std::size_t local) const noexcept {
    return static_cast<std::uint64_t>(y0_) * width_ + local;
  }

  void emit(std::size_t i, double next, double t_prev_us, double t_us, std::vector<EventRecord>& out) {
    PixelState& s = state_[i];
    const double from = s.level;
    const double delta = next - from;
    const auto x = static_cast<std::uint16_t>(i % width_);
    const auto y = static_cast<std::uint16_t>(y0_ + static_cast<int>(i / width_));
    // Relative slack absorbs drift of the reference from repeated +-C steps.
    while (std::abs(next - s.reference) >= s.threshold * (1.0 - 1e-9)) {
      const double polarity = next > s.reference ? 1.0 : -1.0;
      const double crossing = s.reference + polarity * s.threshold;
      const double frac = std::clamp((crossing - from) / delta, 0.0, 1.0);
      // Floored into [t_prev, t_now) so streams are half-open in time.
      auto stamp = static_cast<std::int64_t>(std::floor(t_prev_us + frac * (t_us - t_prev_us) - 1e-6));
      stamp = std::max(stamp, static_cast<std::int64_t>(t_prev_us));
      if (stamp <= s.last_t) stamp = s.last_t + 1;
      s.last_t = stamp;
      s.reference = crossing;
      const bool refractory = s.last_emitted >= 0 &&
                              static_cast<double>(stamp - s.last_emitted) < params_.refractory_us;
      if (!refractory) {
        out.push_back({static_cast<std::uint64_t>(stamp), x, y, static_cast<std::int8_t>(polarity)});
        s.last_emitted = stamp;
      }
      s.threshold = draw_threshold(i);
    }
  }

  const SceneScript& script_;
  EventCameraParams params_;
  int y0_, y1_, width_;
  std::vector<float> values_, previous_;
  std::vector<std::uint8_t> mask_;
  std::vector<PixelState> state_;
  std::vector<CounterRng> jitter_;
  std::vector<std::uint32_t> bucket_;
  std::vector<EventRecord> scratch_;
};

}  // namespace detail

// Renders the scene at `render_rate` over [t0, t1] (seconds) and converts the
// per-pixel log-intensity sequence into threshold-crossing events. Pixels are
// split into row bands across `workers` threads; the result is sorted into
// the canonical order and does not depend on the worker count.
inline EventStream generate_events(const SceneScript& script, const EventCameraParams& params, double t0,
                                   double t1, unsigned workers = 1) {
  validate(params);
  if (!(t0 < t1) || t0 < 0.0 || t1 > script.config.duration + 1e-12)
    throw ConfigError("generate_events: need 0 <= t0 < t1 <= duration");

  EventStream stream;
  stream.width = script.config.width;
  stream.height = script.config.height;
  stream.t_begin = seconds_to_us(t0);
  stream.t_end = seconds_to_us(t1);

  double max_speed = 0.0;
  for (const auto& p : script.particles) max_speed = std::max(max_speed, std::hypot(p.velocity.x, p.velocity.y));
  const double px_per_frame = max_speed / params.render_rate;
  if (px_per_frame > 0.5)
    stream.warnings.push_back("aliasing: particles move up to " + std::to_string(px_per_frame) +
                              " px per rendered frame");

  const auto frames = static_cast<long>(std::ceil((t1 - t0) * params.render_rate - 1e-9));
  const double t0_us = t0 * 1e6, t1_us = t1 * 1e6;

  const int h = stream.height;
  workers = std::clamp<unsigned>(workers, 1u, static_cast<unsigned>(h));
  std::vector<std::vector<EventRecord>> bands(workers);
  auto run_band = [&](unsigned b) {
    const int y0 = static_cast<int>(static_cast<long>(h) * b / workers);
    const int y1 = static_cast<int>(static_cast<long>(h) * (b + 1) / workers);
    detail::BandSimulator sim(script, params, y0, y1);
    sim.start(t0);
    double prev_us = t0_us;
    for (long i = 1; i <= frames; ++i) {
      const double t = i == frames ? t1 : t0 + (t1 - t0) * static_cast<double>(i) / frames;
      const double now_us = i == frames ? t1_us : t0_us + (t1_us - t0_us) * static_cast<double>(i) / frames;
      sim.step(t, prev_us, now_us, bands[b]);
      prev_us = now_us;
    }
  };
  if (workers == 1) {
    run_band(0);
  } else {
    std::vector<std::jthread> pool;
    for (unsigned b = 0; b < workers; ++b) pool.emplace_back(run_band, b);
  }

  std::size_t total = 0;
  for (const auto& b : bands) total += b.size();
  stream.records.reserve(total);
  auto& r = stream.records;
  for (auto& b : bands) {
    if (!std::is_sorted(b.begin(), b.end(), event_less)) std::sort(b.begin(), b.end(), event_less);
    const auto mid = static_cast<std::ptrdiff_t>(r.size());
    r.insert(r.end(), b.begin(), b.end());
    std::inplace_merge(r.begin(), r.begin() + mid, r.end(), event_less);
    std::vector<EventRecord>().swap(b);
  }
  if (!stream.records.empty() && stream.records.back().t >= stream.t_end) {
    // Only reachable when more crossings than microseconds fall into the
    // last frame interval.
    stream.t_end = stream.records.back().t + 1;
    stream.warnings.push_back("timestamp crowding: stream end extended to " + std::to_string(stream.t_end));
  }
  return stream;
}

// Sub-stream with t0 <= t < t1 (microseconds).
inline EventStream events_between(const EventStream& stream, std::uint64_t t0, std::uint64_t t1) {
  if (t0 > t1) throw ConfigError("events_between: t0 > t1");
  EventStream out;
  out.width = stream.width;
  out.height = stream.height;
  out.t_begin = std::clamp(t0, stream.t_begin, stream.t_end);
  out.t_end = std::clamp(t1, out.t_begin, stream.t_end);
  auto by_time = [](const EventRecord& e, std::uint64_t t) { return e.t < t; };
  auto lo = std::lower_bound(stream.records.begin(), stream.records.end(), t0, by_time);
  auto hi = std::lower_bound(lo, stream.records.end(), t1, by_time);
  out.records.assign(lo, hi);
  return out;
}

}  // namespace occlusim
