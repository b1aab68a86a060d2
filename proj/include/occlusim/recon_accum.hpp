#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "occlusim/errors.hpp"
#include "occlusim/event_gen.hpp"
#include "occlusim/image.hpp"
#include "occlusim/scene_sim.hpp"

namespace occlusim {

struct AccumParams {
  double contrast_threshold = 0.15;
  double occluder_similarity_eps = 0.30;  // log units; 2 * C by default
  double quiet_period_min_us = 2000.0;
  Range intensity_clip{0.0, 1.0};
  double log_eps = 1e-3;

  static AccumParams for_threshold(double c) {
    AccumParams p;
    p.contrast_threshold = c;
    p.occluder_similarity_eps = 2.0 * c;
    return p;
  }
};

inline void validate(const AccumParams& p) {
  if (!(p.contrast_threshold > 0.0)) throw ConfigError("accumulation params: C must be > 0");
  if (!(p.occluder_similarity_eps > 0.0)) throw ConfigError("accumulation params: similarity eps must be > 0");
  if (!(p.log_eps > 0.0)) throw ConfigError("accumulation params: log_eps must be > 0");
  if (!(p.intensity_clip.min <= p.intensity_clip.max)) throw ConfigError("accumulation params: bad clip range");
}

// Integrated log level per pixel, one breakpoint per event plus the initial
// level at t_begin. Stored as one flat array indexed through `offsets`.
struct TimelineField {
  int width = 0;
  int height = 0;
  std::uint64_t t_begin = 0;
  std::uint64_t t_end = 0;
  std::vector<std::uint32_t> offsets;  // width * height + 1
  std::vector<std::uint64_t> times;
  std::vector<double> levels;
  std::vector<std::int32_t> counts;  // net signed event count at each breakpoint

  struct Pixel {
    std::span<const std::uint64_t> times;
    std::span<const double> levels;
    std::span<const std::int32_t> counts;

    double initial() const noexcept { return levels.front(); }
    double final() const noexcept { return levels.back(); }
    std::size_t events() const noexcept { return levels.size() - 1; }
  };

  Pixel pixel(std::size_t i) const noexcept {
    const std::size_t a = offsets[i], n = offsets[i + 1] - a;
    return {{times.data() + a, n}, {levels.data() + a, n}, {counts.data() + a, n}};
  }
};

// L(x, t_k) = L(x, t_k - dt) + p_k C, run per pixel from the initial log frame.
inline TimelineField integrate_events(const LogFrame& initial, const EventStream& stream, double c) {
  if (!initial.same_shape(stream.width, stream.height))
    throw DimensionError("integrate_events: log frame and stream dimensions differ");
  const std::size_t pixels = initial.size();
  TimelineField f;
  f.width = initial.width;
  f.height = initial.height;
  f.t_begin = stream.t_begin;
  f.t_end = stream.t_end;
  f.offsets.assign(pixels + 1, 0);
  for (const auto& e : stream.records) ++f.offsets[static_cast<std::size_t>(e.y) * f.width + e.x + 1];
  for (std::size_t i = 0; i < pixels; ++i) f.offsets[i + 1] += f.offsets[i] + 1;

  const std::size_t total = f.offsets.back();
  f.times.resize(total);
  f.levels.resize(total);
  f.counts.resize(total);
  std::vector<std::uint32_t> cursor(f.offsets.begin(), f.offsets.end() - 1);
  for (std::size_t i = 0; i < pixels; ++i) {
    const std::uint32_t at = cursor[i]++;
    f.times[at] = stream.t_begin;
    f.levels[at] = initial.data[i];
    f.counts[at] = 0;
  }
  // The stream is time-sorted, so per-pixel order is preserved.
  for (const auto& e : stream.records) {
    const std::size_t i = static_cast<std::size_t>(e.y) * f.width + e.x;
    const std::uint32_t at = cursor[i]++;
    const double polarity = e.p > 0 ? 1.0 : -1.0;
    f.times[at] = e.t;
    f.levels[at] = f.levels[at - 1] + polarity * c;
    f.counts[at] = f.counts[at - 1] + e.p;
  }
  return f;
}

struct Segmentation {
  OcclusionMask mask;
  double occluder_intensity = 0.0;  // histogram-mode estimate
  bool no_occlusion = false;
};

inline constexpr int kOccluderHistogramBins = 64;

// Event-active pixels whose observed intensity matches the dominant occluder
// intensity (histogram mode over event-active pixels) are flagged occluded.
inline Segmentation segment_occluded(const IntensityFrame& frame, const EventStream& stream,
                                     const AccumParams& params) {
  validate(params);
  if (!frame.same_shape(stream.width, stream.height))
    throw DimensionError("segment_occluded: frame and stream dimensions differ");
  Segmentation seg;
  seg.mask = OcclusionMask(frame.width, frame.height, 0.0);

  std::vector<std::uint8_t> active(frame.size(), 0);
  for (const auto& e : stream.records) active[static_cast<std::size_t>(e.y) * frame.width + e.x] = 1;

  std::array<std::size_t, kOccluderHistogramBins> hist{};
  std::size_t n_active = 0;
  for (std::size_t i = 0; i < frame.size(); ++i) {
    if (!active[i]) continue;
    ++n_active;
    const int bin = std::clamp(static_cast<int>(frame.data[i] * kOccluderHistogramBins), 0,
                               kOccluderHistogramBins - 1);
    ++hist[static_cast<std::size_t>(bin)];
  }
  if (n_active == 0) {
    seg.no_occlusion = true;
    return seg;
  }
  const auto mode = std::max_element(hist.begin(), hist.end()) - hist.begin();
  seg.occluder_intensity = (static_cast<double>(mode) + 0.5) / kOccluderHistogramBins;

  const double occluder_level = log_intensity(seg.occluder_intensity, params.log_eps);
  for (std::size_t i = 0; i < frame.size(); ++i) {
    if (!active[i]) continue;
    if (std::abs(log_intensity(frame.data[i], params.log_eps) - occluder_level) <= params.occluder_similarity_eps)
      seg.mask.data[i] = 1;
  }
  return seg;
}

namespace detail {

// Level held longest (summed over all visits) among levels farther than
// `eps` from the pixel's initial, occluded level. Returns the final level
// when no level dwells at least `min_dwell`.
inline double select_background_level(const TimelineField::Pixel& px, std::uint64_t t_end, double eps,
                                      double min_dwell, bool& fell_back) {
  struct Dwell {
    std::int32_t count;
    double level;
    std::uint64_t total;
  };
  std::vector<Dwell> dwell;
  const double start = px.initial();
  for (std::size_t k = 0; k < px.levels.size(); ++k) {
    const std::uint64_t until = k + 1 < px.levels.size() ? px.times[k + 1] : std::max(t_end, px.times[k]);
    const std::uint64_t span = until - px.times[k];
    if (std::abs(px.levels[k] - start) <= eps) continue;
    auto it = std::find_if(dwell.begin(), dwell.end(), [&](const Dwell& d) { return d.count == px.counts[k]; });
    if (it == dwell.end())
      dwell.push_back({px.counts[k], px.levels[k], span});
    else
      it->total += span;
  }
  const Dwell* best = nullptr;
  for (const auto& d : dwell)
    if (!best || d.total > best->total) best = &d;
  if (best && static_cast<double>(best->total) >= min_dwell) {
    fell_back = false;
    return best->level;
  }
  fell_back = true;
  return px.final();
}

}  // namespace detail

struct Reconstruction {
  IntensityFrame image;
  OcclusionMask mask;  // pixels that were reconstructed
  bool used_gt_mask = false;
  double occluder_intensity = 0.0;
  std::size_t fallback_pixels = 0;
};

// Accumulation Method. Pixels outside the occlusion mask are copied from the
// input frame; occluded pixels take the background level read from their
// event-integrated timeline. `gt_mask` replaces the heuristic segmentation.
inline Reconstruction reconstruct_background(const IntensityFrame& frame, const EventStream& stream,
                                             const AccumParams& params, const OcclusionMask* gt_mask = nullptr) {
  validate(params);
  if (!frame.same_shape(stream.width, stream.height))
    throw DimensionError("reconstruct_background: frame and stream dimensions differ");
  Reconstruction out;
  if (gt_mask) {
    require_same_shape(frame, *gt_mask, "reconstruct_background");
    out.mask = *gt_mask;
    out.used_gt_mask = true;
  } else {
    Segmentation seg = segment_occluded(frame, stream, params);
    out.mask = std::move(seg.mask);
    out.occluder_intensity = seg.occluder_intensity;
  }
  out.image = frame;
  if (std::none_of(out.mask.data.begin(), out.mask.data.end(), [](auto b) { return b != 0; })) return out;

  const TimelineField field = integrate_events(log_transform(frame, params.log_eps), stream, params.contrast_threshold);
  for (std::size_t i = 0; i < frame.size(); ++i) {
    if (!out.mask.data[i]) continue;
    bool fell_back = false;
    const double level = detail::select_background_level(field.pixel(i), field.t_end, params.occluder_similarity_eps,
                                                         params.quiet_period_min_us, fell_back);
    out.fallback_pixels += fell_back ? 1 : 0;
    const double value = std::exp(level) - params.log_eps;
    out.image.data[i] =
        static_cast<float>(std::clamp(value, params.intensity_clip.min, params.intensity_clip.max));
  }
  return out;
}

}  // namespace occlusim
