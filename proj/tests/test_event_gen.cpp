#include <gtest/gtest.h>

#include <cmath>

#include "occlusim/event_gen.hpp"
#include "occlusim/event_io.hpp"
#include "support.hpp"

using namespace occlusim;
using namespace testing_support;

namespace {

constexpr double kC = 0.15;
constexpr double kEps = 1e-3;

SceneScript random_small_scene(std::uint64_t seed, int w = 64, int h = 48, double duration = 0.02) {
  SceneConfig c = small_config(w, h, duration);
  c.target_coverage = 0.35;
  c.seed = seed;
  c.radius_range = {2, 5};
  c.intensity_range = {0.05, 0.4};
  c.speed_range = {100, 600};
  return sample_scene(c, std::make_shared<const IntensityFrame>(synth_background(w, h, seed + 1)));
}

// Dense-frame oracle: log change between the brute-force renders at t0, t1.
std::vector<double> log_change(const SceneScript& s, double t0, double t1) {
  const auto a = brute_render(s, t0), b = brute_render(s, t1);
  std::vector<double> d(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) d[i] = log_intensity(b.data[i], kEps) - log_intensity(a.data[i], kEps);
  return d;
}

}  // namespace

TEST(LogTransform, AnalyticValues) {
  IntensityFrame zero(4, 3, 0.0f);
  for (double v : log_transform(zero, 1e-3).data) EXPECT_DOUBLE_EQ(v, std::log(1e-3));
  IntensityFrame one(4, 3, 1.0f);
  for (double v : log_transform(one, 1e-3).data) EXPECT_DOUBLE_EQ(v, std::log(1.001));
  IntensityFrame r = *ramp(16, 2, 0.0f, 1.0f);
  const auto l = log_transform(r, 1e-3);
  for (int x = 1; x < 16; ++x) EXPECT_GT(l(x, 0), l(x - 1, 0));
}

TEST(EventCameraParams, Validation) {
  EventCameraParams p;
  EXPECT_NO_THROW(validate(p));
  p.contrast_threshold = 0;
  EXPECT_THROW(validate(p), ConfigError);
  p = {};
  p.log_eps = 0;
  EXPECT_THROW(validate(p), ConfigError);
  p = {};
  p.render_rate = 99;
  EXPECT_THROW(validate(p), ConfigError);
  p = {};
  p.refractory_us = -1;
  EXPECT_THROW(validate(p), ConfigError);
  p = {};
  p.threshold_jitter_sigma = -0.1;
  EXPECT_THROW(validate(p), ConfigError);
}

TEST(GenerateEvents, RejectsBadInterval) {
  const auto s = manual_script(small_config(16, 16, 0.01), flat(16, 16, 0.5f), {});
  EXPECT_THROW(generate_events(s, {}, 0.005, 0.005), ConfigError);
  EXPECT_THROW(generate_events(s, {}, 0.0, 0.02), ConfigError);
}

TEST(GenerateEvents, StaticScenesAreSilent) {
  const auto empty = manual_script(small_config(32, 24, 0.01), ramp(32, 24, 0.1f, 0.9f), {});
  EXPECT_TRUE(generate_events(empty, {}, 0.0, 0.01).empty());
  const auto still = manual_script(small_config(32, 24, 0.01), ramp(32, 24, 0.1f, 0.9f),
                                   {particle(10, 10, 5, 0.05), particle(20, 12, 7, 0.9)});
  const auto ev = generate_events(still, {}, 0.0, 0.01);
  EXPECT_TRUE(ev.empty());
  EXPECT_EQ(ev.t_begin, 0u);
  EXPECT_EQ(ev.t_end, 10000u);
}

TEST(GenerateEvents, StepOfThreeAndAHalfThresholdsGivesThreeEvents) {
  const float bg = 0.1f;
  const double target = std::exp(log_intensity(bg, kEps) + 3.5 * kC) - kEps;
  // The disc reaches pixel (0, 8) mid-sequence and still covers it at the end.
  const auto s = manual_script(small_config(32, 16, 0.05), flat(32, 16, bg), {particle(-10, 8, 5, target, 200, 0)});
  const auto ev = generate_events(s, {}, 0.0, 0.05);
  ASSERT_TRUE(check_stream(ev).empty()) << check_stream(ev);
  int n = 0;
  for (const auto& e : ev.records)
    if (e.x == 0 && e.y == 8) {
      ++n;
      EXPECT_EQ(e.p, 1);
    }
  EXPECT_EQ(n, 3);
}

TEST(GenerateEvents, SweepingParticleBursts) {
  const auto s = manual_script(small_config(32, 16, 0.05), flat(32, 16, 0.5f), {particle(-6, 8, 4, 0.1, 400, 0)});
  const auto ev = generate_events(s, {}, 0.0, 0.05);
  ASSERT_TRUE(check_stream(ev).empty());
  std::vector<EventRecord> px;
  for (const auto& e : ev.records)
    if (e.x == 4 && e.y == 8) px.push_back(e);
  ASSERT_FALSE(px.empty());
  const auto first_pos = std::find_if(px.begin(), px.end(), [](const auto& e) { return e.p > 0; });
  ASSERT_NE(first_pos, px.end());
  EXPECT_TRUE(std::all_of(px.begin(), first_pos, [](const auto& e) { return e.p < 0; }));
  EXPECT_TRUE(std::all_of(first_pos, px.end(), [](const auto& e) { return e.p > 0; }));
  const double drop = log_intensity(0.5f, kEps) - log_intensity(0.1f, kEps);
  EXPECT_EQ(first_pos - px.begin(), static_cast<long>(std::floor(drop / kC)));
  const auto sums = signed_sums(ev);
  const auto delta = log_change(s, 0.0, 0.05);
  for (std::size_t i = 0; i < sums.size(); ++i) EXPECT_LT(std::abs(sums[i] * kC - delta[i]), kC + 1e-9);
}

TEST(GenerateEvents, QuantizationBoundOnRandomScenes) {
  for (std::uint64_t seed = 1; seed <= 6; ++seed) {
    const auto s = random_small_scene(seed);
    for (auto [t0, t1] : {std::pair{0.0, 0.02}, std::pair{0.0042, 0.0131}}) {
      const auto ev = generate_events(s, {}, t0, t1);
      ASSERT_TRUE(check_stream(ev).empty()) << check_stream(ev);
      const auto sums = signed_sums(ev);
      const auto delta = log_change(s, t0, t1);
      for (std::size_t i = 0; i < sums.size(); ++i)
        ASSERT_LT(std::abs(sums[i] * kC - delta[i]), kC + 1e-9) << "seed " << seed << " pixel " << i;
    }
  }
}

TEST(GenerateEvents, PolarityFollowsIntervalChange) {
  const auto s = random_small_scene(21);
  EventCameraParams p;
  p.render_rate = 2000;
  const auto ev = generate_events(s, p, 0.0, 0.02);
  const double dt_us = 1e6 / p.render_rate;
  std::vector<IntensityFrame> frames;
  for (int k = 0; k <= 40; ++k) frames.push_back(brute_render(s, 0.02 * k / 40));
  std::size_t checked = 0;
  for (const auto& e : ev.records) {
    const auto k = static_cast<std::size_t>(static_cast<double>(e.t) / dt_us);
    ASSERT_LT(k + 1, frames.size());
    const double d =
        log_intensity(frames[k + 1](e.x, e.y), kEps) - log_intensity(frames[k](e.x, e.y), kEps);
    ASSERT_NE(d, 0.0);
    ASSERT_EQ(e.p, d > 0 ? 1 : -1);
    ++checked;
  }
  EXPECT_GT(checked, 100u);
}

TEST(GenerateEvents, DeterministicAndWorkerIndependent) {
  const auto s = random_small_scene(5, 64, 48);
  const auto a = generate_events(s, {}, 0.0, 0.02, 1);
  const auto b = generate_events(s, {}, 0.0, 0.02, 1);
  const auto c = generate_events(s, {}, 0.0, 0.02, 3);
  const auto d = generate_events(s, {}, 0.0, 0.02, 48);
  EXPECT_EQ(encode_evb(a), encode_evb(b));
  EXPECT_EQ(a.records, c.records);
  EXPECT_EQ(a.records, d.records);
}

TEST(GenerateEvents, DoublingRenderRateChangesSumsByAtMostOne) {
  for (std::uint64_t seed = 30; seed < 34; ++seed) {
    const auto s = random_small_scene(seed);
    EventCameraParams lo, hi;
    lo.render_rate = 5000;
    hi.render_rate = 10000;
    const auto a = signed_sums(generate_events(s, lo, 0.0, 0.02));
    const auto b = signed_sums(generate_events(s, hi, 0.0, 0.02));
    for (std::size_t i = 0; i < a.size(); ++i) ASSERT_LE(std::abs(a[i] - b[i]), 1);
  }
}

TEST(GenerateEvents, AliasingWarning) {
  const auto slow = manual_script(small_config(32, 16, 0.01), flat(32, 16, 0.5f), {particle(0, 8, 4, 0.1, 1000, 0)});
  EXPECT_TRUE(generate_events(slow, {}, 0.0, 0.01).warnings.empty());
  const auto fast = manual_script(small_config(32, 16, 0.01), flat(32, 16, 0.5f), {particle(0, 8, 4, 0.1, 3000, 0)});
  const auto ev = generate_events(fast, {}, 0.0, 0.01);
  ASSERT_EQ(ev.warnings.size(), 1u);
  EXPECT_NE(ev.warnings[0].find("aliasing"), std::string::npos);
}

TEST(GenerateEvents, RefractoryPeriodSpacesEvents) {
  const auto s = random_small_scene(9);
  EventCameraParams p;
  p.refractory_us = 300;
  const auto ev = generate_events(s, p, 0.0, 0.02);
  ASSERT_TRUE(check_stream(ev).empty());
  std::vector<std::int64_t> last(ev.width * ev.height, -1000000);
  for (const auto& e : ev.records) {
    auto& l = last[static_cast<std::size_t>(e.y) * ev.width + e.x];
    ASSERT_GE(static_cast<std::int64_t>(e.t) - l, 300);
    l = static_cast<std::int64_t>(e.t);
  }
  EXPECT_LT(ev.size(), generate_events(s, {}, 0.0, 0.02).size());
}

TEST(GenerateEvents, JitterIsSeededAndValid) {
  const auto s = random_small_scene(12);
  EventCameraParams p;
  p.threshold_jitter_sigma = 0.03;
  const auto a = generate_events(s, p, 0.0, 0.02);
  const auto b = generate_events(s, p, 0.0, 0.02, 4);
  EXPECT_TRUE(check_stream(a).empty());
  EXPECT_EQ(a.records, b.records);
  EXPECT_NE(a.records, generate_events(s, {}, 0.0, 0.02).records);
}

TEST(CheckStream, DetectsViolations) {
  EventStream s;
  s.width = 4;
  s.height = 4;
  s.t_end = 100;
  s.records = {{10, 1, 1, 1}, {20, 1, 1, -1}};
  EXPECT_TRUE(check_stream(s).empty());
  auto bad = s;
  bad.records[1].t = 5;
  EXPECT_FALSE(check_stream(bad).empty());
  bad = s;
  bad.records[1].t = 10;
  EXPECT_FALSE(check_stream(bad).empty());  // same pixel, same time
  bad = s;
  bad.records[1].p = 0;
  EXPECT_FALSE(check_stream(bad).empty());
  bad = s;
  bad.records[1].x = 4;
  EXPECT_FALSE(check_stream(bad).empty());
  bad = s;
  bad.records[1].t = 100;
  EXPECT_FALSE(check_stream(bad).empty());
}

TEST(EventsBetween, IdentityEmptyAndPartition) {
  const auto s = random_small_scene(3);
  const auto ev = generate_events(s, {}, 0.0, 0.02);
  ASSERT_GT(ev.size(), 0u);
  const auto full = events_between(ev, ev.t_begin, ev.t_end);
  EXPECT_EQ(full.records, ev.records);
  EXPECT_EQ(full.t_begin, ev.t_begin);
  EXPECT_EQ(full.t_end, ev.t_end);
  EXPECT_TRUE(events_between(ev, 7000, 7000).empty());
  for (std::uint64_t mid : {std::uint64_t{0}, std::uint64_t{6131}, std::uint64_t{10000}, std::uint64_t{20000}}) {
    const auto a = events_between(ev, ev.t_begin, mid);
    const auto b = events_between(ev, mid, ev.t_end);
    EXPECT_TRUE(check_stream(a).empty());
    EXPECT_TRUE(check_stream(b).empty());
    std::vector<EventRecord> joined = a.records;
    joined.insert(joined.end(), b.records.begin(), b.records.end());
    EXPECT_EQ(joined, ev.records);
  }
  EXPECT_THROW(events_between(ev, 5, 4), ConfigError);
}
