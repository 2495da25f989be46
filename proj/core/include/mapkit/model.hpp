#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "mapkit/bev_heads.hpp"
#include "mapkit/checkpoint.hpp"
#include "mapkit/detections.hpp"
#include "mapkit/encoding.hpp"
#include "mapkit/losses.hpp"
#include "mapkit/map_encoder.hpp"
#include "mapkit/metrics.hpp"

namespace mapkit {

struct ModelConfig {
  EncodingConfig encoding;
  MapEncoderConfig encoder;
  BevConfig bev;

  /// Keeps encoder.point_dim and bev.hidden consistent with the rest.
  void validate() const;
  std::string to_json() const;
  static ModelConfig from_json(const std::string& text);
};

/// Scene data computed once and reused across epochs.
struct PreparedScene {
  Scene ego_scene;             // ground truth in the ego frame
  GraphVector graph;           // local SD-map view
  std::vector<Detection> detections;  // boxes fed to the lane-traffic head at evaluation
};

PreparedScene prepare_scene(const Scene& world_scene, const ModelConfig& cfg, std::vector<Detection> detections);

/// Map encoder plus BEV heads. Parameter names are "encoder.*" followed by the heads' names.
class Model {
 public:
  Model() = default;
  Model(ModelConfig cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  MapEncoder& encoder() { return encoder_; }
  const MapEncoder& encoder() const { return encoder_; }
  const BevHeads& heads() const { return heads_; }

  HeadOutputs forward(const GraphVector& graph, std::span<const TrafficElement> lt_inputs, bool fuse) const;

  /// Inference in evaluator form. Edge confidences multiply the pair
  /// probability by the foreground scores of both endpoints.
  ScenePrediction predict(const PreparedScene& scene, bool fuse) const;

  nn::ParameterSet parameters() const;

  void save(const std::filesystem::path& path) const;
  /// Rebuilds a model from a checkpoint written by save().
  static Model load(const std::filesystem::path& path);

 private:
  ModelConfig cfg_;
  MapEncoder encoder_;
  BevHeads heads_;
};

/// Converts raw outputs to evaluator form (ego frame, meters).
ScenePrediction to_prediction(const HeadOutputs& out, const BevConfig& cfg, std::span<const Detection> detections);

}  // namespace mapkit
