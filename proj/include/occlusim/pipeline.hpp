#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "occlusim/bytes.hpp"
#include "occlusim/dataset_io.hpp"
#include "occlusim/errors.hpp"
#include "occlusim/event_gen.hpp"
#include "occlusim/event_repr.hpp"
#include "occlusim/image_io.hpp"
#include "occlusim/metrics.hpp"
#include "occlusim/recon_accum.hpp"
#include "occlusim/rng.hpp"
#include "occlusim/scene_sim.hpp"

namespace occlusim {

// Runs fn(0..n-1) on up to `workers` threads. Results must be written by
// index; the exception of the lowest failing index is rethrown.
inline void parallel_for(std::size_t n, unsigned workers, const std::function<void(std::size_t)>& fn) {
  workers = static_cast<unsigned>(std::clamp<std::size_t>(workers, 1, std::max<std::size_t>(n, 1)));
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto run = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  if (workers == 1) {
    run();
  } else {
    std::vector<std::jthread> pool;
    for (unsigned w = 0; w < workers; ++w) pool.emplace_back(run);
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

struct GenerateOptions {
  SceneConfig scene;  // seed and target_coverage are set per sequence
  EventCameraParams events;
  int n_repr = kDefaultReprCount;
  std::uint64_t tau_us = 0;             // 0: window / n_repr
  std::optional<double> coverage;       // unset: cycle through 10%..60%
  std::vector<std::filesystem::path> backgrounds;  // empty: procedural
  std::uint64_t seed = 0;
  std::size_t sequences = 24;
  unsigned workers = 1;
};

inline std::uint64_t sequence_seed(std::uint64_t base, std::size_t index) {
  return derive_seed(base, 0x5E9000ull + index);
}

inline double sequence_coverage(const GenerateOptions& o, std::size_t index) {
  return o.coverage.value_or(kCoverageBuckets[index % kCoverageBuckets.size()] / 100.0);
}

inline std::string sequence_id(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "seq_%04zu", index);
  return buf;
}

inline std::uint64_t resolve_tau(const GenerateOptions& o) {
  if (o.tau_us != 0) return o.tau_us;
  return seconds_to_us(o.scene.duration) / static_cast<std::uint64_t>(std::max(o.n_repr, 1));
}

// Rejects anything that would fail later, before any file is written.
inline void validate(const GenerateOptions& o) {
  for (std::size_t i = 0; i < std::min<std::size_t>(o.sequences, kCoverageBuckets.size()); ++i) {
    SceneConfig c = o.scene;
    c.target_coverage = sequence_coverage(o, i);
    validate(c);
  }
  validate(o.scene);
  validate(o.events);
  if (o.n_repr < 1) throw ConfigError("--n-repr must be >= 1");
  if (static_cast<std::uint64_t>(o.n_repr) * resolve_tau(o) > seconds_to_us(o.scene.duration))
    throw ConfigError("--n-repr x --tau-us exceeds the sequence duration");
  if (resolve_tau(o) == 0) throw ConfigError("--tau-us resolves to 0");
  for (const auto& b : o.backgrounds)
    if (!std::filesystem::exists(b)) throw MissingFileError("missing background: " + b.string());
}

struct SimulatedSequence {
  SceneScript script;
  SequenceArtifacts artifacts;
  SequenceManifest manifest;
};

// Full in-memory generation of one sequence: scene, frame and mask at t = 0,
// event stream over the whole duration, and the representation stack.
inline SimulatedSequence simulate_sequence(const SceneConfig& scene, const EventCameraParams& events,
                                           std::shared_ptr<const IntensityFrame> background,
                                           const std::string& background_ref, int n_repr, std::uint64_t tau_us,
                                           unsigned event_workers = 1) {
  SimulatedSequence s;
  s.script = sample_scene(scene, background, background_ref);
  auto [frame, mask] = render_frame(s.script, 0.0);
  s.artifacts.occluded = std::move(frame);
  s.artifacts.mask = std::move(mask);
  s.artifacts.gt = *background;
  s.artifacts.events = generate_events(s.script, events, 0.0, scene.duration, event_workers);
  if (tau_us == 0) tau_us = s.artifacts.events.span() / static_cast<std::uint64_t>(n_repr);
  s.artifacts.repr = build_representations(s.artifacts.events, n_repr, tau_us);

  auto& m = s.manifest;
  m.seed = scene.seed;
  m.scene = scene;
  m.event_params = events;
  m.background = background_ref;
  m.measured_coverage = coverage_ratio(s.artifacts.mask);
  m.n_particles = s.script.particles.size();
  m.tau_us = tau_us;
  m.n_repr = n_repr;
  return s;
}

inline std::pair<std::shared_ptr<const IntensityFrame>, std::string> sequence_background(
    const GenerateOptions& o, std::size_t index, std::uint64_t seq_seed) {
  if (!o.backgrounds.empty()) {
    const auto& path = o.backgrounds[index % o.backgrounds.size()];
    return {std::make_shared<const IntensityFrame>(center_crop(load_grayscale(path), o.scene.width, o.scene.height)),
            "file:" + path.filename().string()};
  }
  return {std::make_shared<const IntensityFrame>(synth_background(o.scene.width, o.scene.height, seq_seed)),
          "procedural:" + hex64(seq_seed)};
}

inline SimulatedSequence simulate_indexed(const GenerateOptions& o, std::size_t index, unsigned event_workers = 1) {
  SceneConfig scene = o.scene;
  scene.seed = sequence_seed(o.seed, index);
  scene.target_coverage = sequence_coverage(o, index);
  auto [bg, ref] = sequence_background(o, index, scene.seed);
  return simulate_sequence(scene, o.events, bg, ref, o.n_repr, resolve_tau(o), event_workers);
}

inline std::vector<SequenceManifest> generate_dataset(const std::filesystem::path& root, const GenerateOptions& o) {
  validate(o);
  std::error_code ec;
  std::filesystem::create_directories(root, ec);
  if (ec) throw IoError("cannot create " + root.string() + ": " + ec.message());
  std::vector<SequenceManifest> manifests(o.sequences);
  parallel_for(o.sequences, o.workers, [&](std::size_t i) {
    SimulatedSequence s = simulate_indexed(o, i);
    manifests[i] = write_sequence(root / sequence_id(i), s.artifacts, s.manifest);
  });
  return manifests;
}

inline std::vector<std::filesystem::path> list_sequences(const std::filesystem::path& root) {
  if (!std::filesystem::is_directory(root)) throw MissingFileError("missing dataset root: " + root.string());
  std::vector<std::filesystem::path> out;
  for (const auto& entry : std::filesystem::directory_iterator(root))
    if (entry.is_directory() && std::filesystem::exists(entry.path() / "manifest.json")) out.push_back(entry.path());
  std::sort(out.begin(), out.end());
  return out;
}

// ---------------------------------------------------------------------------
// Reconstruction and evaluation over a dataset directory.

struct ReconstructOptions {
  std::optional<double> contrast_threshold;  // unset: the generator's C
  std::optional<double> similarity_eps;      // unset: 2 * C
  double quiet_period_min_us = AccumParams{}.quiet_period_min_us;
  bool use_gt_mask = false;
  unsigned workers = 1;
};

inline AccumParams accum_params_for(const SequenceManifest& m, const ReconstructOptions& o) {
  AccumParams p = AccumParams::for_threshold(o.contrast_threshold.value_or(m.event_params.contrast_threshold));
  if (o.similarity_eps) p.occluder_similarity_eps = *o.similarity_eps;
  p.quiet_period_min_us = o.quiet_period_min_us;
  p.log_eps = m.event_params.log_eps;
  return p;
}

inline constexpr const char* kReconF32 = "recon.f32";
inline constexpr const char* kReconPng = "recon.png";
inline constexpr const char* kReconJson = "recon.json";

inline nlohmann::json reconstruct_sequence_dir(const std::filesystem::path& dir, const ReconstructOptions& o) {
  const LoadedSequence seq = read_sequence(dir);
  const AccumParams params = accum_params_for(seq.manifest, o);
  const auto& a = seq.artifacts;
  const Reconstruction r =
      reconstruct_background(a.occluded, a.events, params, o.use_gt_mask ? &a.mask : nullptr);
  write_f32(dir / kReconF32, r.image);
  write_png(dir / kReconPng, r.image);
  const SampleScores s = score(r.image, a.gt, seq.manifest.measured_coverage);
  nlohmann::json meta = {{"method", "accumulation"},
                         {"use_gt_mask", r.used_gt_mask},
                         {"contrast_threshold", params.contrast_threshold},
                         {"occluder_similarity_eps", params.occluder_similarity_eps},
                         {"quiet_period_min_us", params.quiet_period_min_us},
                         {"occluder_intensity", r.occluder_intensity},
                         {"mask_coverage", coverage_ratio(r.mask)},
                         {"fallback_pixels", r.fallback_pixels},
                         {"coverage", seq.manifest.measured_coverage},
                         {"psnr_db", metric_json(s.psnr_db)},
                         {"ssim", s.ssim},
                         {"mae", s.mae},
                         {"recon_checksum", hex64(checksum64(encode_f32(r.image)))}};
  write_text(dir / kReconJson, meta.dump(2) + "\n");
  return meta;
}

inline std::vector<nlohmann::json> reconstruct_dataset(const std::filesystem::path& root, const ReconstructOptions& o) {
  const auto dirs = list_sequences(root);
  std::vector<nlohmann::json> out(dirs.size());
  parallel_for(dirs.size(), o.workers, [&](std::size_t i) { out[i] = reconstruct_sequence_dir(dirs[i], o); });
  return out;
}

// Scores every sequence's recon.f32 against gt.f32 (float32 values only).
inline MetricsReport evaluate_dataset(const std::filesystem::path& root, unsigned workers = 1) {
  const auto dirs = list_sequences(root);
  if (dirs.empty()) throw MissingFileError("no sequences under " + root.string());
  std::vector<SampleScores> samples(dirs.size());
  parallel_for(dirs.size(), workers, [&](std::size_t i) {
    const SequenceManifest m = read_manifest(dirs[i]);
    const auto gt_rel = m.files.at("gt_f32");
    const Bytes gt_raw = read_file(dirs[i] / gt_rel);
    if (hex64(checksum64(gt_raw)) != m.checksums.at(gt_rel))
      throw ChecksumError("checksum mismatch: " + (dirs[i] / gt_rel).string());
    const IntensityFrame gt = decode_f32(gt_raw, m.scene.width, m.scene.height);
    const IntensityFrame pred = read_f32(dirs[i] / kReconF32, m.scene.width, m.scene.height);
    samples[i] = score(pred, gt, m.measured_coverage);
  });
  return stratified_report(std::move(samples));
}

inline void write_report(const std::filesystem::path& root, const MetricsReport& r) {
  write_text(root / "report.json", to_json(r).dump(2) + "\n");
  write_text(root / "report.txt", format_table(r));
  write_text(root / "report.csv", format_csv(r));
}

// ---------------------------------------------------------------------------
// Coverage sweep.

struct SweepRow {
  int coverage_pct = 0;
  std::size_t n = 0;
  double measured_coverage = 0.0;
  double psnr_db = 0.0;
  double ssim = 0.0;
  double mae = 0.0;
};

inline std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::string out = "coverage_pct,n,measured_coverage,psnr_db,ssim,mae\n";
  for (const auto& r : rows)
    out += std::to_string(r.coverage_pct) + "," + std::to_string(r.n) + "," + format_metric(r.measured_coverage, 6) +
           "," + format_metric(r.psnr_db, 6) + "," + format_metric(r.ssim, 6) + "," + format_metric(r.mae, 6) + "\n";
  return out;
}

// Static line plot of PSNR against coverage, one marker per CSV row.
inline std::string sweep_svg(const std::vector<SweepRow>& rows) {
  constexpr double kW = 640, kH = 400, kLeft = 70, kRight = 30, kTop = 30, kBottom = 60;
  double lo = 1e300, hi = -1e300;
  for (const auto& r : rows)
    if (std::isfinite(r.psnr_db)) {
      lo = std::min(lo, r.psnr_db);
      hi = std::max(hi, r.psnr_db);
    }
  if (lo > hi) lo = 0, hi = 1;
  lo = std::floor(lo / 5.0) * 5.0 - 5.0;
  hi = std::ceil(hi / 5.0) * 5.0 + 5.0;
  auto px = [&](double pct) { return kLeft + (pct - 5.0) / 60.0 * (kW - kLeft - kRight); };
  auto py = [&](double db) {
    if (!std::isfinite(db)) db = hi;
    return kTop + (hi - db) / (hi - lo) * (kH - kTop - kBottom);
  };
  char buf[256];
  std::string svg = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"400\" viewBox=\"0 0 640 400\">\n";
  svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  std::snprintf(buf, sizeof buf, "<line x1=\"%g\" y1=\"%g\" x2=\"%g\" y2=\"%g\" stroke=\"black\"/>\n", kLeft,
                kH - kBottom, kW - kRight, kH - kBottom);
  svg += buf;
  std::snprintf(buf, sizeof buf, "<line x1=\"%g\" y1=\"%g\" x2=\"%g\" y2=\"%g\" stroke=\"black\"/>\n", kLeft, kTop,
                kLeft, kH - kBottom);
  svg += buf;
  for (double db = lo; db <= hi + 1e-9; db += 5.0) {
    std::snprintf(buf, sizeof buf,
                  "<text x=\"%g\" y=\"%g\" font-size=\"12\" text-anchor=\"end\">%g</text>\n", kLeft - 6, py(db) + 4, db);
    svg += buf;
  }
  for (int pct : kCoverageBuckets) {
    std::snprintf(buf, sizeof buf, "<text x=\"%g\" y=\"%g\" font-size=\"12\" text-anchor=\"middle\">%d%%</text>\n",
                  px(pct), kH - kBottom + 18, pct);
    svg += buf;
  }
  std::snprintf(buf, sizeof buf,
                "<text x=\"%g\" y=\"%g\" font-size=\"13\" text-anchor=\"middle\">occlusion coverage</text>\n",
                (kLeft + kW - kRight) / 2, kH - 15);
  svg += buf;
  std::snprintf(buf, sizeof buf,
                "<text x=\"18\" y=\"%g\" font-size=\"13\" text-anchor=\"middle\" transform=\"rotate(-90 18 %g)\">PSNR "
                "(dB)</text>\n",
                (kTop + kH - kBottom) / 2, (kTop + kH - kBottom) / 2);
  svg += buf;
  svg += "<polyline fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"2\" points=\"";
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%.2f,%.2f ", px(r.coverage_pct), py(r.psnr_db));
    svg += buf;
  }
  svg += "\"/>\n";
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf,
                  "<circle data-coverage=\"%d\" data-psnr=\"%s\" cx=\"%.2f\" cy=\"%.2f\" r=\"4\" fill=\"#1f77b4\"/>\n",
                  r.coverage_pct, format_metric(r.psnr_db, 4).c_str(), px(r.coverage_pct), py(r.psnr_db));
    svg += buf;
  }
  svg += "</svg>\n";
  return svg;
}

// generate -> reconstruct -> evaluate for each coverage bucket, all buckets
// sharing the base seed. `gen.sequences` is the count per bucket.
inline std::vector<SweepRow> run_sweep(const std::filesystem::path& root, GenerateOptions gen,
                                       const ReconstructOptions& rec) {
  validate(gen);
  std::vector<SweepRow> rows;
  for (int pct : kCoverageBuckets) {
    char name[32];
    std::snprintf(name, sizeof name, "cov_%02d", pct);
    const auto dir = root / name;
    gen.coverage = pct / 100.0;
    const auto manifests = generate_dataset(dir, gen);
    reconstruct_dataset(dir, rec);
    const MetricsReport report = evaluate_dataset(dir, rec.workers);
    write_report(dir, report);
    SweepRow row;
    row.coverage_pct = pct;
    row.n = report.n_samples;
    for (const auto& m : manifests) row.measured_coverage += m.measured_coverage;
    row.measured_coverage /= static_cast<double>(std::max<std::size_t>(manifests.size(), 1));
    row.psnr_db = report.psnr_db;
    row.ssim = report.ssim;
    row.mae = report.mae;
    rows.push_back(row);
  }
  write_text(root / "sweep.csv", sweep_csv(rows));
  write_text(root / "sweep.svg", sweep_svg(rows));
  return rows;
}

// Event previews: one PNG per representation frame plus the whole window.
inline std::vector<std::filesystem::path> write_previews(const std::filesystem::path& dir, int max_count = 3) {
  const LoadedSequence seq = read_sequence(dir);
  const auto out_dir = dir / "preview";
  std::filesystem::create_directories(out_dir);
  std::vector<std::filesystem::path> written;
  for (std::size_t i = 0; i < seq.artifacts.repr.frames.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "repr_%02zu.png", i);
    write_png(out_dir / name, event_preview(seq.artifacts.repr.frames[i], max_count));
    written.push_back(out_dir / name);
  }
  const auto& ev = seq.artifacts.events;
  if (ev.t_end > ev.t_begin) {
    write_png(out_dir / "events_all.png", event_preview(accumulate(ev, ev.t_begin, ev.t_end), max_count));
    written.push_back(out_dir / "events_all.png");
  }
  return written;
}

}  // namespace occlusim
