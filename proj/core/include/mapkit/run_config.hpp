#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mapkit/assignment.hpp"
#include "mapkit/model.hpp"
#include "mapkit/scenegen.hpp"

namespace mapkit {

/// Every tunable of a run. Text form is one `key = value` per line; '#'
/// starts a comment. Booleans accept on/off, true/false, 1/0.
struct RunConfig {
  std::string label = "run";
  std::uint64_t seed = 0;

  // Data.
  std::string corpus = "corpus";
  GenConfig gen;
  std::string detections = "none";  // directory of per-scene detection files, or none

  // Model.
  ModelConfig model;

  // Training.
  std::size_t epochs = 12;
  double lr = 2e-4;
  double weight_decay = 0.01;
  CostWeights weights;
  bool sdmap_fusion = true;
  bool aux_head = true;
  std::string pretrained_encoder = "none";
  std::size_t eval_every = 1;

  // Encoder pretraining.
  std::string pretrain_mode = "ae";
  std::size_t pretrain_epochs = 10;
  double pretrain_lr = 2e-4;
  double mask_ratio = 0.3;

  // Topology fine-tuning.
  std::string checkpoint = "none";  // model checkpoint for finetune-topology and eval
  std::size_t topology_epochs = 6;
  double topology_lr = 4e-4;

  // Evaluation.
  bool oracle = false;  // replay ground truth as predictions

  /// Applies one `key = value` assignment; throws std::invalid_argument naming the key.
  void set(const std::string& key, const std::string& value);
  /// Resolved config in file form, keys in a fixed order.
  std::string echo() const;
  void validate() const;

  static RunConfig parse(const std::string& text);
  static RunConfig load(const std::filesystem::path& path);
  static std::vector<std::string> keys();
};

}  // namespace mapkit
