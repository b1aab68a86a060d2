#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <regex>
#include <sstream>

#include "occlusim/pipeline.hpp"
#include "support.hpp"

using namespace occlusim;
using namespace testing_support;
namespace fs = std::filesystem;

namespace {

GenerateOptions small_options(std::uint64_t seed, std::size_t n) {
  GenerateOptions o;
  o.scene.width = 64;
  o.scene.height = 48;
  o.scene.duration = 0.02;
  o.scene.radius_range = {2, 4};
  o.seed = seed;
  o.sequences = n;
  return o;
}

struct RunResult {
  int status = -1;
  std::string out;
  std::string err;
};

RunResult run_cli(const std::string& args, const fs::path& scratch, const std::string& env = {}) {
  const auto out = scratch / "stdout.txt", err = scratch / "stderr.txt";
  const std::string cmd = env + " \"" + OCCLUSIM_CLI + "\" " + args + " >\"" + out.string() + "\" 2>\"" +
                          err.string() + "\"";
  RunResult r;
  const int raw = std::system(cmd.c_str());
  r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  r.out = read_text(out);
  r.err = read_text(err);
  return r;
}

std::map<std::string, std::string> checksums_under(const fs::path& root) {
  std::map<std::string, std::string> all;
  for (const auto& dir : list_sequences(root))
    for (const auto& [rel, sum] : read_manifest(dir).checksums) all[dir.filename().string() + "/" + rel] = sum;
  return all;
}

}  // namespace

TEST(Pipeline, ZeroSequencesGivesEmptyRoot) {
  TempDir t("p_zero");
  const auto m = generate_dataset(t.path / "root", small_options(1, 0));
  EXPECT_TRUE(m.empty());
  EXPECT_TRUE(fs::is_directory(t.path / "root"));
  EXPECT_TRUE(list_sequences(t.path / "root").empty());
}

TEST(Pipeline, OutputIndependentOfWorkerCount) {
  TempDir t("p_workers");
  auto o = small_options(3, 4);
  o.workers = 1;
  generate_dataset(t.path / "a", o);
  o.workers = 3;
  generate_dataset(t.path / "b", o);
  const auto a = checksums_under(t.path / "a");
  EXPECT_FALSE(a.empty());
  EXPECT_EQ(a, checksums_under(t.path / "b"));

  ReconstructOptions r;
  r.workers = 1;
  reconstruct_dataset(t.path / "a", r);
  r.workers = 4;
  reconstruct_dataset(t.path / "b", r);
  for (const char* seq : {"seq_0000", "seq_0003"})
    EXPECT_EQ(read_file(t.path / "a" / seq / kReconF32), read_file(t.path / "b" / seq / kReconF32));
}

TEST(Pipeline, MixedCoverageIsUniformOverBuckets) {
  GenerateOptions o;
  o.seed = 2024;
  std::map<int, int> hist;
  for (std::size_t i = 0; i < 480; ++i) {
    SceneConfig c = o.scene;
    c.seed = sequence_seed(o.seed, i);
    c.target_coverage = sequence_coverage(o, i);
    const auto s = sample_scene(c, flat(c.width, c.height, 0.5f));
    ++hist[coverage_bucket(coverage_ratio(render_frame(s, 0.0).second))];
  }
  ASSERT_EQ(hist.size(), 6u);
  for (const auto& [pct, n] : hist) EXPECT_EQ(n, 80) << pct;
}

TEST(Pipeline, ValidationRejectsBeforeWriting) {
  TempDir t("p_validate");
  auto o = small_options(1, 2);
  o.n_repr = 0;
  EXPECT_THROW(generate_dataset(t.path / "root", o), ConfigError);
  o = small_options(1, 2);
  o.tau_us = 30000;
  EXPECT_THROW(generate_dataset(t.path / "root", o), ConfigError);
  o = small_options(1, 2);
  o.backgrounds = {t.path / "missing.png"};
  EXPECT_THROW(generate_dataset(t.path / "root", o), MissingFileError);
  EXPECT_FALSE(fs::exists(t.path / "root"));
}

TEST(Pipeline, BackgroundImagesAreCropped) {
  TempDir t("p_bg");
  IntensityFrame big(100, 80);
  for (std::size_t i = 0; i < big.size(); ++i) big.data[i] = static_cast<float>(i % 251) / 255.0f;
  write_png(t.path / "bg.png", big);
  auto o = small_options(5, 1);
  o.backgrounds = {t.path / "bg.png"};
  const auto s = simulate_indexed(o, 0);
  EXPECT_EQ(s.manifest.background, "file:bg.png");
  EXPECT_EQ(s.artifacts.gt, center_crop(load_grayscale(t.path / "bg.png"), 64, 48));
}

TEST(Pipeline, ReconstructIsIdempotentAndRecordsMaskSource) {
  TempDir t("p_recon");
  generate_dataset(t.path, small_options(7, 2));
  reconstruct_dataset(t.path, {});
  const auto f1 = read_file(t.path / "seq_0001" / kReconF32);
  const auto j1 = read_text(t.path / "seq_0001" / kReconJson);
  reconstruct_dataset(t.path, {});
  EXPECT_EQ(read_file(t.path / "seq_0001" / kReconF32), f1);
  EXPECT_EQ(read_text(t.path / "seq_0001" / kReconJson), j1);
  EXPECT_FALSE(nlohmann::json::parse(j1)["use_gt_mask"].get<bool>());
  EXPECT_TRUE(fs::exists(t.path / "seq_0001" / kReconPng));

  ReconstructOptions gt;
  gt.use_gt_mask = true;
  reconstruct_dataset(t.path, gt);
  EXPECT_TRUE(nlohmann::json::parse(read_text(t.path / "seq_0001" / kReconJson))["use_gt_mask"].get<bool>());
}

TEST(Pipeline, NoOcclusionReproducesInput) {
  TempDir t("p_identity");
  auto o = small_options(9, 1);
  o.coverage = 0.0;
  generate_dataset(t.path, o);
  reconstruct_dataset(t.path, {});
  EXPECT_EQ(read_file(t.path / "seq_0000" / kReconF32), read_file(t.path / "seq_0000" / "occluded.f32"));
  const auto r = evaluate_dataset(t.path);
  EXPECT_TRUE(std::isinf(r.psnr_db));
}

TEST(Pipeline, EvaluatePerfectAndRepeatable) {
  TempDir t("p_eval");
  generate_dataset(t.path, small_options(11, 3));
  EXPECT_THROW(evaluate_dataset(t.path), MissingFileError);
  for (const auto& dir : list_sequences(t.path)) fs::copy_file(dir / "gt.f32", dir / kReconF32);
  const auto r = evaluate_dataset(t.path);
  EXPECT_TRUE(std::isinf(r.psnr_db));
  EXPECT_NEAR(r.ssim, 1.0, 1e-12);
  EXPECT_EQ(r.mae, 0.0);
  write_report(t.path, r);
  const auto json = read_text(t.path / "report.json");
  EXPECT_NE(read_text(t.path / "report.txt").find("inf"), std::string::npos);
  write_report(t.path, evaluate_dataset(t.path, 2));
  EXPECT_EQ(read_text(t.path / "report.json"), json);

  {
    auto b = read_file(t.path / "seq_0000" / "gt.f32");
    b[0] ^= 1;
    write_file(t.path / "seq_0000" / "gt.f32", b);
    EXPECT_THROW(evaluate_dataset(t.path), ChecksumError);
  }
}

TEST(Pipeline, SweepIsDeterministicAndPlotted) {
  TempDir a("p_sweep_a"), b("p_sweep_b");
  const auto o = small_options(13, 1);
  const auto rows = run_sweep(a.path, o, {});
  run_sweep(b.path, o, {});
  ASSERT_EQ(rows.size(), 6u);
  EXPECT_EQ(read_text(a.path / "sweep.csv"), read_text(b.path / "sweep.csv"));
  const std::string svg = read_text(a.path / "sweep.svg");
  for (const auto& r : rows) {
    EXPECT_NE(svg.find("data-coverage=\"" + std::to_string(r.coverage_pct) + "\""), std::string::npos);
    EXPECT_NE(svg.find("data-psnr=\"" + format_metric(r.psnr_db, 4) + "\""), std::string::npos);
    EXPECT_NEAR(r.measured_coverage, r.coverage_pct / 100.0, kCoverageTolerance);
  }
  std::istringstream csv(read_text(a.path / "sweep.csv"));
  std::string line;
  std::getline(csv, line);
  EXPECT_EQ(line, "coverage_pct,n,measured_coverage,psnr_db,ssim,mae");
  int n = 0;
  while (std::getline(csv, line)) ++n;
  EXPECT_EQ(n, 6);
}

TEST(Pipeline, Previews) {
  TempDir t("p_preview");
  generate_dataset(t.path, small_options(15, 1));
  const auto files = write_previews(t.path / "seq_0000");
  EXPECT_EQ(files.size(), 6u);
  for (const auto& f : files) EXPECT_TRUE(fs::exists(f));
}

TEST(Cli, GenerateIsDeterministic) {
  TempDir t("cli_gen");
  const std::string common = " --seed 1 --sequences 1 --width 128 --height 96 --coverage 0.3";
  const auto a = run_cli("generate --root " + (t.path / "a").string() + common, t.path);
  ASSERT_EQ(a.status, 0) << a.err;
  const auto b = run_cli("generate" + common, t.path, "OCCLUSIM_ROOT=\"" + (t.path / "b").string() + "\"");
  ASSERT_EQ(b.status, 0) << b.err;
  EXPECT_EQ(checksums_under(t.path / "a"), checksums_under(t.path / "b"));
  EXPECT_EQ(read_file(t.path / "a/seq_0000/events.evb"), read_file(t.path / "b/seq_0000/events.evb"));
}

TEST(Cli, FullRun) {
  TempDir t("cli_full");
  const std::string root = " --root " + (t.path / "d").string();
  ASSERT_EQ(run_cli("generate" + root + " --sequences 0", t.path).status, 0);
  EXPECT_TRUE(list_sequences(t.path / "d").empty());
  ASSERT_EQ(run_cli("generate" + root +
                        " --sequences 2 --width 128 --height 96 --n-repr 4 --tau-us 20000 --contrast-threshold 0.2"
                        " --render-rate 4000 --workers 2",
                    t.path)
                .status,
            0);
  const auto m = read_manifest(t.path / "d/seq_0000");
  EXPECT_EQ(m.n_repr, 4);
  EXPECT_EQ(m.tau_us, 20000u);
  EXPECT_DOUBLE_EQ(m.event_params.contrast_threshold, 0.2);
  EXPECT_DOUBLE_EQ(m.event_params.render_rate, 4000.0);
  ASSERT_EQ(run_cli("reconstruct" + root + " --use-gt-mask", t.path).status, 0);
  const auto meta = nlohmann::json::parse(read_text(t.path / "d/seq_0000" / kReconJson));
  EXPECT_TRUE(meta["use_gt_mask"].get<bool>());
  EXPECT_DOUBLE_EQ(meta["contrast_threshold"].get<double>(), 0.2);
  const auto ev = run_cli("evaluate" + root, t.path);
  ASSERT_EQ(ev.status, 0) << ev.err;
  EXPECT_NE(ev.out.find("10%"), std::string::npos);
  for (const char* f : {"report.json", "report.txt", "report.csv"}) EXPECT_TRUE(fs::exists(t.path / "d" / f));
  ASSERT_EQ(run_cli("preview" + root + " --sequence seq_0001", t.path).status, 0);
  EXPECT_TRUE(fs::exists(t.path / "d/seq_0001/preview/events_all.png"));
}

TEST(Cli, ErrorsAreSingleMachineParsableLines) {
  TempDir t("cli_err");
  const std::regex line(R"(error: kind=[a-z_]+ message=[^\n]*\n)");
  auto expect_error = [&](const std::string& args, const std::string& kind) {
    const auto r = run_cli(args, t.path);
    EXPECT_NE(r.status, 0) << args;
    EXPECT_TRUE(std::regex_match(r.err, line)) << r.err;
    EXPECT_NE(r.err.find("kind=" + kind), std::string::npos) << r.err;
  };
  const std::string root = " --root " + (t.path / "x").string();
  expect_error("generate" + root + " --coverage 0.95", "config");
  expect_error("generate" + root + " --coverage lots", "config");
  expect_error("generate" + root + " --n-repr 0", "config");
  expect_error("generate" + root + " --width 8", "config");
  expect_error("generate" + root + " --contrast-threshold -1", "config");
  EXPECT_FALSE(fs::exists(t.path / "x"));
  expect_error("reconstruct" + root, "missing_file");
  expect_error("evaluate" + root, "missing_file");
  expect_error("generate --bogus-flag", "usage");
  expect_error("", "usage");
}
