#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <string>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>

#include "occlusim/errors.hpp"
#include "occlusim/image.hpp"

namespace occlusim {

// Metrics accept any arithmetic pixel type and accumulate in double; frames
// are expected in [0, 1] (peak 1.0).

template <typename T>
double mse(const Image<T>& pred, const Image<T>& gt) {
  require_same_shape(pred, gt, "mse");
  if (gt.size() == 0) throw DimensionError("mse: empty frames");
  double acc = 0.0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const double d = static_cast<double>(pred.data[i]) - static_cast<double>(gt.data[i]);
    acc += d * d;
  }
  return acc / static_cast<double>(gt.size());
}

// Identical inputs give +infinity.
template <typename T>
double psnr(const Image<T>& pred, const Image<T>& gt) {
  const double m = mse(pred, gt);
  if (m == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / m);
}

template <typename T>
double mae(const Image<T>& pred, const Image<T>& gt) {
  require_same_shape(pred, gt, "mae");
  if (gt.size() == 0) throw DimensionError("mae: empty frames");
  double acc = 0.0;
  for (std::size_t i = 0; i < gt.size(); ++i)
    acc += std::abs(static_cast<double>(pred.data[i]) - static_cast<double>(gt.data[i]));
  return acc / static_cast<double>(gt.size());
}

struct SsimWindow {
  int size = 11;
  double sigma = 1.5;
};

inline constexpr double kSsimK1 = 0.01;
inline constexpr double kSsimK2 = 0.03;

inline std::vector<double> gaussian_kernel(const SsimWindow& w) {
  std::vector<double> k(static_cast<std::size_t>(w.size));
  const double c = (w.size - 1) / 2.0;
  double sum = 0.0;
  for (int i = 0; i < w.size; ++i) {
    const double d = i - c;
    k[static_cast<std::size_t>(i)] = std::exp(-d * d / (2.0 * w.sigma * w.sigma));
    sum += k[static_cast<std::size_t>(i)];
  }
  for (auto& v : k) v /= sum;
  return k;
}

// Mean local SSIM over all window positions fully inside the frame
// (Gaussian-weighted statistics, dynamic range 1.0).
template <typename T>
double ssim(const Image<T>& pred, const Image<T>& gt, const SsimWindow& window = {}) {
  require_same_shape(pred, gt, "ssim");
  if (gt.width < window.size || gt.height < window.size)
    throw DimensionError("ssim: frame smaller than the " + std::to_string(window.size) + "px window");
  const auto k = gaussian_kernel(window);
  const int n = window.size;
  const int w = gt.width, h = gt.height;
  const int ow = w - n + 1, oh = h - n + 1;

  // Five moment maps, filtered horizontally then vertically.
  constexpr int kMaps = 5;
  std::array<std::vector<double>, kMaps> horiz;
  for (auto& m : horiz) m.assign(static_cast<std::size_t>(ow) * h, 0.0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < ow; ++x) {
      double s[kMaps] = {};
      for (int i = 0; i < n; ++i) {
        const double a = static_cast<double>(pred(x + i, y));
        const double b = static_cast<double>(gt(x + i, y));
        const double kw = k[static_cast<std::size_t>(i)];
        s[0] += kw * a;
        s[1] += kw * b;
        s[2] += kw * a * a;
        s[3] += kw * b * b;
        s[4] += kw * a * b;
      }
      for (int m = 0; m < kMaps; ++m) horiz[static_cast<std::size_t>(m)][static_cast<std::size_t>(y) * ow + x] = s[m];
    }
  }

  const double c1 = (kSsimK1 * 1.0) * (kSsimK1 * 1.0);
  const double c2 = (kSsimK2 * 1.0) * (kSsimK2 * 1.0);
  double total = 0.0;
  for (int y = 0; y < oh; ++y) {
    for (int x = 0; x < ow; ++x) {
      double s[kMaps] = {};
      for (int i = 0; i < n; ++i) {
        const double kw = k[static_cast<std::size_t>(i)];
        const std::size_t at = static_cast<std::size_t>(y + i) * ow + x;
        for (int m = 0; m < kMaps; ++m) s[m] += kw * horiz[static_cast<std::size_t>(m)][at];
      }
      const double mu_a = s[0], mu_b = s[1];
      const double var_a = s[2] - mu_a * mu_a;
      const double var_b = s[3] - mu_b * mu_b;
      const double cov = s[4] - mu_a * mu_b;
      total += ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)) /
               ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
    }
  }
  return total / (static_cast<double>(ow) * oh);
}

// ---------------------------------------------------------------------------
// Coverage-stratified reports.

struct SampleScores {
  double psnr_db = 0.0;
  double ssim = 0.0;
  double mae = 0.0;
  double coverage = 0.0;
};

template <typename T>
SampleScores score(const Image<T>& pred, const Image<T>& gt, double coverage) {
  return {psnr(pred, gt), ssim(pred, gt), mae(pred, gt), coverage};
}

struct BucketMetrics {
  double psnr_db = 0.0;
  double ssim = 0.0;
  double mae = 0.0;
  std::size_t n = 0;
};

inline constexpr std::array<int, 6> kCoverageBuckets = {10, 20, 30, 40, 50, 60};

// Nearest decile, clamped to the reported 10%..60% range.
inline int coverage_bucket(double coverage) {
  const long decile = std::lround(coverage * 10.0);
  return static_cast<int>(std::clamp(decile, 1L, 6L)) * 10;
}

struct MetricsReport {
  double psnr_db = 0.0;
  double ssim = 0.0;
  double mae = 0.0;
  std::map<int, BucketMetrics> per_bucket;  // keyed by percent
  std::size_t n_samples = 0;
};

inline MetricsReport stratified_report(std::vector<SampleScores> samples) {
  if (samples.empty()) throw ConfigError("stratified_report: no samples");
  // Canonical summation order makes the report permutation-invariant.
  std::sort(samples.begin(), samples.end(), [](const SampleScores& a, const SampleScores& b) {
    return std::tie(a.coverage, a.psnr_db, a.ssim, a.mae) < std::tie(b.coverage, b.psnr_db, b.ssim, b.mae);
  });
  MetricsReport r;
  r.n_samples = samples.size();
  for (const auto& s : samples) {
    r.psnr_db += s.psnr_db;
    r.ssim += s.ssim;
    r.mae += s.mae;
    auto& b = r.per_bucket[coverage_bucket(s.coverage)];
    b.psnr_db += s.psnr_db;
    b.ssim += s.ssim;
    b.mae += s.mae;
    ++b.n;
  }
  const auto n = static_cast<double>(r.n_samples);
  r.psnr_db /= n;
  r.ssim /= n;
  r.mae /= n;
  for (auto& [_, b] : r.per_bucket) {
    const auto bn = static_cast<double>(b.n);
    b.psnr_db /= bn;
    b.ssim /= bn;
    b.mae /= bn;
  }
  return r;
}

inline std::string format_metric(double v, int precision = 4) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (std::isnan(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", precision, v);
  return buf;
}

// JSON numbers cannot be infinite; infinities are written as "inf".
inline nlohmann::json metric_json(double v) {
  if (std::isfinite(v)) return v;
  return format_metric(v);
}

inline nlohmann::json to_json(const MetricsReport& r) {
  nlohmann::json buckets = nlohmann::json::object();
  for (const auto& [pct, b] : r.per_bucket)
    buckets[std::to_string(pct)] = {{"psnr_db", metric_json(b.psnr_db)},
                                    {"ssim", metric_json(b.ssim)},
                                    {"mae", metric_json(b.mae)},
                                    {"n", b.n}};
  return {{"psnr_db", metric_json(r.psnr_db)},
          {"ssim", metric_json(r.ssim)},
          {"mae", metric_json(r.mae)},
          {"n_samples", r.n_samples},
          {"per_bucket", buckets}};
}

// Aligned text table: overall scores, then one row per metric across the
// six coverage columns. Empty buckets print "-".
inline std::string format_table(const MetricsReport& r, const std::string& method = "Acc. Method") {
  char line[256];
  std::string out;
  std::snprintf(line, sizeof line, "%-14s %10s %10s %10s %6s\n", "Method", "PSNR", "SSIM", "MAE", "N");
  out += line;
  std::snprintf(line, sizeof line, "%-14s %10s %10s %10s %6zu\n", method.c_str(), format_metric(r.psnr_db).c_str(),
                format_metric(r.ssim).c_str(), format_metric(r.mae).c_str(), r.n_samples);
  out += line;
  out += "\n";
  std::snprintf(line, sizeof line, "%-14s", "Coverage");
  out += line;
  for (int pct : kCoverageBuckets) {
    std::snprintf(line, sizeof line, " %9d%%", pct);
    out += line;
  }
  out += "\n";
  auto row = [&](const char* name, auto field, int precision = 4) {
    std::snprintf(line, sizeof line, "%-14s", name);
    out += line;
    for (int pct : kCoverageBuckets) {
      auto it = r.per_bucket.find(pct);
      const std::string cell = it == r.per_bucket.end() ? "-" : format_metric(field(it->second), precision);
      std::snprintf(line, sizeof line, " %10s", cell.c_str());
      out += line;
    }
    out += "\n";
  };
  row("PSNR", [](const BucketMetrics& b) { return b.psnr_db; });
  row("SSIM", [](const BucketMetrics& b) { return b.ssim; });
  row("MAE", [](const BucketMetrics& b) { return b.mae; });
  row("N", [](const BucketMetrics& b) { return static_cast<double>(b.n); }, 0);
  return out;
}

inline std::string format_csv(const MetricsReport& r) {
  std::string out = "coverage_pct,n,psnr_db,ssim,mae\n";
  for (const auto& [pct, b] : r.per_bucket)
    out += std::to_string(pct) + "," + std::to_string(b.n) + "," + format_metric(b.psnr_db, 6) + "," +
           format_metric(b.ssim, 6) + "," + format_metric(b.mae, 6) + "\n";
  out += "all," + std::to_string(r.n_samples) + "," + format_metric(r.psnr_db, 6) + "," + format_metric(r.ssim, 6) +
         "," + format_metric(r.mae, 6) + "\n";
  return out;
}

}  // namespace occlusim
