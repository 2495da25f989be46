#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "mapkit/detections.hpp"
#include "mapkit/scene.hpp"

namespace mapkit {

struct GenConfig {
  std::uint64_t seed = 0;
  std::size_t n_scenes = 130;
  std::size_t n_eval = 30;  // the last n_eval scenes form the eval split
  int lanes_min = 1;        // parallel lanes per road
  int lanes_max = 3;
  double area_probability = 0.5;
  int elements_min = 0;
  int elements_max = 4;
  double sdmap_sigma = 0.5;  // meters
  int sdmap_stride = 2;
  double split_probability = 0.25;
  double merge_probability = 0.15;
  Extent extent{};

  void validate() const;
};

/// Deterministic in (seed, cfg). Geometry is built in the ego frame inside the
/// crop extent and then placed in the world by a random ego pose.
Scene generate_scene(std::uint64_t seed, const GenConfig& cfg);

/// Every `stride`-th centerline point (the last point always kept) plus
/// i.i.d. N(0, sigma) noise per coordinate. One SD line per lane segment, in
/// lane order, carrying the road class of `classes[i]` when given.
SDMap degrade_to_sdmap(const Scene& scene, double sigma, int stride, std::uint64_t seed,
                       std::span<const int> classes = {});

/// weight(scene) = max over its element classes of 1 / sqrt(class frequency),
/// normalized to mean 1 over scenes that have elements; element-free scenes get 1.
std::vector<double> compute_resampling_weights(std::span<const Scene> scenes);

struct ManifestEntry {
  std::string path;  // relative to the corpus root
  std::uint64_t seed = 0;
  std::string split;  // "train" or "eval"
};

/// Detector quality for the external detection files written with a corpus.
DetectorNoise external_detector_noise();

/// Writes scenes/scene_NNNNN.json, detections/scene_NNNNN.json and manifest.csv.
/// Refuses a nonempty `root` unless `force`.
std::vector<ManifestEntry> write_corpus(const std::filesystem::path& root, const GenConfig& cfg, bool force);

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& root);

/// Per-scene detection file path matching a manifest entry.
std::filesystem::path detections_path_for(const std::filesystem::path& detections_dir, const ManifestEntry& entry);

}  // namespace mapkit
