#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "mapkit/scene.hpp"

namespace mapkit {

/// A scored traffic-element box in image coordinates.
struct Detection {
  TrafficElement element;
  double score = 1.0;  // in [0, 1]

  friend bool operator==(const Detection&, const Detection&) = default;
};

/// JSON array of {"bbox": [x_min, y_min, x_max, y_max], "class_id": int, "score": real}.
/// An empty file or "[]" is an empty list. Throws ParseError or ValidationError.
std::vector<Detection> parse_detections(const std::string& text);
std::vector<Detection> ingest_external_detections(const std::filesystem::path& path);

/// Numbers are written with 17 significant digits, so parsing restores them exactly.
std::string serialize_detections(std::span<const Detection> detections);
void export_detections(std::span<const Detection> detections, const std::filesystem::path& path);

/// Degradations applied by the simulated detector.
struct DetectorNoise {
  double jitter_px = 25.0;         // std of each corner, pixels
  double drop_rate = 0.15;         // probability a true element is missed
  double false_positive_rate = 0.3;  // expected spurious boxes per frame
  double class_flip_rate = 0.05;   // probability of a wrong class

  void validate() const;
};

/// Noisy detector over ground-truth elements. True boxes score in [0.5, 1),
/// spurious ones in [0.05, 0.6). Output is deterministic in `seed`.
std::vector<Detection> simulate_detections(std::span<const TrafficElement> truth, const DetectorNoise& noise, std::uint64_t seed);

/// Ground truth replayed as score-1 detections.
std::vector<Detection> perfect_detections(std::span<const TrafficElement> truth);

std::vector<TrafficElement> elements_of(std::span<const Detection> detections);

}  // namespace mapkit
