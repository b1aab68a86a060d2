#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "occlusim/bytes.hpp"
#include "occlusim/errors.hpp"
#include "occlusim/event_gen.hpp"
#include "occlusim/event_io.hpp"
#include "occlusim/event_repr.hpp"
#include "occlusim/image_io.hpp"
#include "occlusim/scene_sim.hpp"

namespace occlusim {

inline constexpr int kSchemaVersion = 1;

inline void to_json(nlohmann::json& j, const EventCameraParams& p) {
  j = nlohmann::json{{"contrast_threshold", p.contrast_threshold},
                     {"log_eps", p.log_eps},
                     {"threshold_jitter_sigma", p.threshold_jitter_sigma},
                     {"refractory_us", p.refractory_us},
                     {"render_rate", p.render_rate}};
}
inline void from_json(const nlohmann::json& j, EventCameraParams& p) {
  j.at("contrast_threshold").get_to(p.contrast_threshold);
  j.at("log_eps").get_to(p.log_eps);
  j.at("threshold_jitter_sigma").get_to(p.threshold_jitter_sigma);
  j.at("refractory_us").get_to(p.refractory_us);
  j.at("render_rate").get_to(p.render_rate);
}

// Everything stored for one sequence.
struct SequenceArtifacts {
  IntensityFrame occluded;  // frame at t = 0
  IntensityFrame gt;        // occlusion-free background
  OcclusionMask mask;       // ground-truth mask at t = 0
  EventStream events;
  ReprStack repr;
};

struct SequenceManifest {
  int schema_version = kSchemaVersion;
  std::uint64_t seed = 0;
  SceneConfig scene;
  EventCameraParams event_params;
  std::string background;  // provenance of the background image
  double measured_coverage = 0.0;
  std::size_t n_particles = 0;
  std::uint64_t t_begin_us = 0;
  std::uint64_t t_end_us = 0;
  int n_repr = 0;
  std::uint64_t tau_us = 0;
  std::uint64_t n_events = 0;
  std::map<std::string, std::string> files;      // role -> relative path
  std::map<std::string, std::string> checksums;  // relative path -> fnv1a64 hex
};

inline nlohmann::json to_json(const SequenceManifest& m) {
  return {{"schema_version", m.schema_version},
          {"seed", m.seed},
          {"scene", m.scene},
          {"event_params", m.event_params},
          {"background", m.background},
          {"measured_coverage", m.measured_coverage},
          {"n_particles", m.n_particles},
          {"t_begin_us", m.t_begin_us},
          {"t_end_us", m.t_end_us},
          {"n_repr", m.n_repr},
          {"tau_us", m.tau_us},
          {"n_events", m.n_events},
          {"files", m.files},
          {"checksums", m.checksums}};
}

inline SequenceManifest manifest_from_json(const nlohmann::json& j) {
  SequenceManifest m;
  m.schema_version = j.at("schema_version").get<int>();
  if (m.schema_version != kSchemaVersion)
    throw VersionError("unknown manifest schema_version " + std::to_string(m.schema_version) + " (expected " +
                       std::to_string(kSchemaVersion) + ")");
  j.at("seed").get_to(m.seed);
  j.at("scene").get_to(m.scene);
  j.at("event_params").get_to(m.event_params);
  j.at("background").get_to(m.background);
  j.at("measured_coverage").get_to(m.measured_coverage);
  j.at("n_particles").get_to(m.n_particles);
  j.at("t_begin_us").get_to(m.t_begin_us);
  j.at("t_end_us").get_to(m.t_end_us);
  j.at("n_repr").get_to(m.n_repr);
  j.at("tau_us").get_to(m.tau_us);
  j.at("n_events").get_to(m.n_events);
  j.at("files").get_to(m.files);
  j.at("checksums").get_to(m.checksums);
  return m;
}

inline std::string repr_name(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "repr/%02zu.s16", i);
  return buf;
}

// Writes every artifact (each fsynced), then the manifest via an atomic
// rename. A directory without manifest.json is incomplete.
// `manifest` supplies the metadata; files and checksums are filled in.
inline SequenceManifest write_sequence(const std::filesystem::path& dir, const SequenceArtifacts& a,
                                       SequenceManifest manifest) {
  namespace fs = std::filesystem;
  const int w = a.gt.width, h = a.gt.height;
  if (!a.occluded.same_shape(w, h) || !a.mask.same_shape(w, h) || a.events.width != w || a.events.height != h)
    throw DimensionError("write_sequence: artifacts disagree on dimensions");
  for (const auto& f : a.repr.frames)
    if (!f.same_shape(w, h)) throw DimensionError("write_sequence: representation dimensions differ");

  std::error_code ec;
  fs::create_directories(dir / "repr", ec);
  if (ec) throw IoError("cannot create " + (dir / "repr").string() + ": " + ec.message());
  fs::remove(dir / "manifest.json", ec);

  manifest.files.clear();
  manifest.checksums.clear();
  auto record = [&](const std::string& role, const std::string& rel) {
    const fs::path p = dir / rel;
    sync_file(p);
    manifest.files[role] = rel;
    manifest.checksums[rel] = hex64(checksum64(read_file(p)));
  };

  write_png(dir / "occluded.png", a.occluded);
  record("occluded_png", "occluded.png");
  write_f32(dir / "occluded.f32", a.occluded);
  record("occluded_f32", "occluded.f32");
  write_png(dir / "gt.png", a.gt);
  record("gt_png", "gt.png");
  write_f32(dir / "gt.f32", a.gt);
  record("gt_f32", "gt.f32");
  write_mask_png(dir / "mask.png", a.mask);
  record("mask_png", "mask.png");
  write_evb(dir / "events.evb", a.events);
  record("events", "events.evb");
  for (std::size_t i = 0; i < a.repr.frames.size(); ++i) {
    const std::string rel = repr_name(i);
    write_s16(dir / rel, a.repr.frames[i]);
    record("repr_" + std::to_string(i), rel);
    std::string side = rel;
    side.replace(side.size() - 4, 4, ".json");
    record("repr_" + std::to_string(i) + "_meta", side);
  }

  manifest.scene.width = w;
  manifest.scene.height = h;
  manifest.t_begin_us = a.events.t_begin;
  manifest.t_end_us = a.events.t_end;
  manifest.n_events = a.events.records.size();
  manifest.n_repr = static_cast<int>(a.repr.frames.size());

  const fs::path tmp = dir / "manifest.json.tmp";
  write_text(tmp, to_json(manifest).dump(2) + "\n", true);
  fs::rename(tmp, dir / "manifest.json", ec);
  if (ec) throw IoError("cannot publish manifest in " + dir.string() + ": " + ec.message());
  sync_file(dir);
  return manifest;
}

inline SequenceManifest read_manifest(const std::filesystem::path& dir) {
  const auto path = dir / "manifest.json";
  if (!std::filesystem::exists(path)) throw MissingFileError("missing manifest: " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text(path));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("manifest " + path.string() + ": " + e.what());
  }
  return manifest_from_json(j);
}

struct LoadedSequence {
  SequenceManifest manifest;
  SequenceArtifacts artifacts;
};

// Validates presence and checksum of every listed file before decoding any.
inline LoadedSequence read_sequence(const std::filesystem::path& dir) {
  LoadedSequence out;
  out.manifest = read_manifest(dir);
  const auto& m = out.manifest;
  std::map<std::string, Bytes> blobs;
  for (const auto& [rel, sum] : m.checksums) {
    const auto p = dir / rel;
    if (!std::filesystem::exists(p)) throw MissingFileError("missing file: " + p.string());
    Bytes data = read_file(p);
    if (hex64(checksum64(data)) != sum) throw ChecksumError("checksum mismatch: " + p.string());
    blobs.emplace(rel, std::move(data));
  }
  auto blob = [&](const std::string& role) -> const Bytes& {
    auto f = m.files.find(role);
    if (f == m.files.end()) throw FormatError("manifest lists no file for " + role);
    auto b = blobs.find(f->second);
    if (b == blobs.end()) throw FormatError("manifest has no checksum for " + f->second);
    return b->second;
  };

  const int w = m.scene.width, h = m.scene.height;
  auto& a = out.artifacts;
  a.occluded = decode_f32(blob("occluded_f32"), w, h);
  a.gt = decode_f32(blob("gt_f32"), w, h);
  (void)blob("mask_png");
  a.mask = read_mask_png(dir / m.files.at("mask_png"), 0.0);
  a.events = decode_evb(blob("events"));
  if (a.events.width != w || a.events.height != h) throw FormatError("event file dimensions differ from manifest");
  a.events.t_begin = m.t_begin_us;
  a.events.t_end = m.t_end_us;
  if (auto err = check_stream(a.events); !err.empty()) throw FormatError("events: " + err);
  for (int i = 0; i < m.n_repr; ++i) {
    const std::string idx = std::to_string(i);
    const auto meta = nlohmann::json::parse(blob("repr_" + idx + "_meta"));
    a.repr.frames.push_back(decode_s16(blob("repr_" + idx), meta));
  }
  return out;
}

}  // namespace occlusim
