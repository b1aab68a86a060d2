#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <thread>

#include "occlusim/pipeline.hpp"

namespace fs = std::filesystem;
using namespace occlusim;

namespace {

struct Flags {
  std::string root = "occlusim_data";
  std::uint64_t seed = 0;
  std::size_t sequences = 24;
  bool paper_scale = false;
  std::string coverage = "mixed";
  int width = SceneConfig{}.width;
  int height = SceneConfig{}.height;
  std::optional<double> contrast_threshold;
  double render_rate = EventCameraParams{}.render_rate;
  int n_repr = kDefaultReprCount;
  std::uint64_t tau_us = 0;
  bool use_gt_mask = false;
  unsigned workers = std::max(1u, std::thread::hardware_concurrency());
  std::vector<std::string> backgrounds;
  std::string sequence;
};

std::optional<double> parse_coverage(const std::string& text) {
  if (text == "mixed") return std::nullopt;
  std::string s = text;
  const bool percent = !s.empty() && s.back() == '%';
  if (percent) s.pop_back();
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != s.size()) throw ConfigError("--coverage must be a fraction, a percentage or 'mixed'");
  if (percent) v /= 100.0;
  if (v < 0.0 || v > kMaxCoverage) throw ConfigError("--coverage must lie in [0, 0.9]");
  return v;
}

GenerateOptions generate_options(const Flags& f) {
  GenerateOptions o;
  o.seed = f.seed;
  o.sequences = f.paper_scale ? 480 : f.sequences;
  o.coverage = parse_coverage(f.coverage);
  o.scene.width = f.width;
  o.scene.height = f.height;
  if (f.contrast_threshold) o.events.contrast_threshold = *f.contrast_threshold;
  o.events.render_rate = f.render_rate;
  o.n_repr = f.n_repr;
  o.tau_us = f.tau_us;
  o.workers = f.workers;
  for (const auto& b : f.backgrounds) o.backgrounds.emplace_back(b);
  validate(o);
  return o;
}

ReconstructOptions reconstruct_options(const Flags& f) {
  ReconstructOptions o;
  o.contrast_threshold = f.contrast_threshold;
  if (o.contrast_threshold && !(*o.contrast_threshold > 0.0)) throw ConfigError("--contrast-threshold must be > 0");
  o.use_gt_mask = f.use_gt_mask;
  o.workers = f.workers;
  return o;
}

std::string one_line(std::string s) {
  for (char& c : s)
    if (c == '\n' || c == '\r') c = ' ';
  return s;
}

int fail(const std::string& kind, const std::string& message) {
  std::fprintf(stderr, "error: kind=%s message=%s\n", kind.c_str(), one_line(message).c_str());
  return 1;
}

void add_root(CLI::App* cmd, Flags& f) {
  cmd->add_option("--root", f.root, "dataset directory")->envname("OCCLUSIM_ROOT");
}

void add_workers(CLI::App* cmd, Flags& f) {
  cmd->add_option("--workers", f.workers, "worker threads")->check(CLI::PositiveNumber);
}

void add_generation(CLI::App* cmd, Flags& f) {
  cmd->add_option("--seed", f.seed, "base seed");
  cmd->add_option("--coverage", f.coverage, "target coverage (fraction, percentage, or 'mixed')");
  cmd->add_option("--width", f.width, "frame width");
  cmd->add_option("--height", f.height, "frame height");
  cmd->add_option("--contrast-threshold", f.contrast_threshold, "contrast threshold C (log units)");
  cmd->add_option("--render-rate", f.render_rate, "internal render rate (frames/s)");
  cmd->add_option("--n-repr", f.n_repr, "number of event representations");
  cmd->add_option("--tau-us", f.tau_us, "representation window (us); 0 splits the duration evenly");
  cmd->add_option("--background", f.backgrounds, "background images (PNG/PGM); procedural when omitted");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"occlusim: moving-occluder event simulation and accumulation reconstruction"};
  app.require_subcommand(1);
  Flags f;

  auto* gen = app.add_subcommand("generate", "simulate sequences into --root");
  add_root(gen, f);
  add_generation(gen, f);
  gen->add_option("--sequences", f.sequences, "number of sequences");
  gen->add_flag("--paper-scale", f.paper_scale, "generate 480 sequences");
  add_workers(gen, f);

  auto* rec = app.add_subcommand("reconstruct", "run the accumulation method on every sequence");
  add_root(rec, f);
  rec->add_option("--contrast-threshold", f.contrast_threshold, "C used for integration (default: generator's)");
  rec->add_flag("--use-gt-mask", f.use_gt_mask, "use the ground-truth occlusion mask");
  add_workers(rec, f);

  auto* eval = app.add_subcommand("evaluate", "score reconstructions and write report.{json,txt,csv}");
  add_root(eval, f);
  add_workers(eval, f);

  auto* sweep = app.add_subcommand("sweep", "generate, reconstruct and evaluate per coverage bucket");
  add_root(sweep, f);
  add_generation(sweep, f);
  sweep->add_option("--sequences", f.sequences, "sequences per bucket");
  sweep->add_flag("--use-gt-mask", f.use_gt_mask, "use the ground-truth occlusion mask");
  add_workers(sweep, f);

  auto* prev = app.add_subcommand("preview", "write event preview PNGs");
  add_root(prev, f);
  prev->add_option("--sequence", f.sequence, "sequence id (default: all)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("usage", e.what());
  }

  try {
    const fs::path root = f.root;
    if (*gen) {
      const GenerateOptions o = generate_options(f);
      const auto manifests = generate_dataset(root, o);
      std::uint64_t events = 0;
      for (const auto& m : manifests) events += m.n_events;
      std::printf("generated %zu sequences (%llu events) in %s\n", manifests.size(),
                  static_cast<unsigned long long>(events), root.c_str());
    } else if (*rec) {
      const auto results = reconstruct_dataset(root, reconstruct_options(f));
      std::printf("reconstructed %zu sequences in %s\n", results.size(), root.c_str());
    } else if (*eval) {
      const MetricsReport r = evaluate_dataset(root, f.workers);
      write_report(root, r);
      std::fputs(format_table(r).c_str(), stdout);
    } else if (*sweep) {
      GenerateOptions o = generate_options(f);
      const auto rows = run_sweep(root, o, reconstruct_options(f));
      std::fputs(sweep_csv(rows).c_str(), stdout);
    } else if (*prev) {
      std::vector<fs::path> dirs;
      if (!f.sequence.empty()) {
        dirs.push_back(root / f.sequence);
        if (!fs::exists(dirs.back() / "manifest.json")) throw MissingFileError("missing sequence: " + dirs.back().string());
      } else {
        dirs = list_sequences(root);
      }
      std::size_t n = 0;
      for (const auto& d : dirs) n += write_previews(d).size();
      std::printf("wrote %zu preview images\n", n);
    }
  } catch (const Error& e) {
    return fail(e.kind(), e.what());
  } catch (const nlohmann::json::exception& e) {
    return fail("format", e.what());
  } catch (const std::filesystem::filesystem_error& e) {
    return fail("io", e.what());
  } catch (const std::exception& e) {
    return fail("internal", e.what());
  }
  return 0;
}
