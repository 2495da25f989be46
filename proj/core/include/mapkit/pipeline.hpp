#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "mapkit/metrics.hpp"
#include "mapkit/model.hpp"
#include "mapkit/run_config.hpp"

namespace mapkit {

/// Train and eval splits of a corpus with the boxes each scene feeds to the
/// lane-traffic head at evaluation time.
struct Corpus {
  std::vector<ManifestEntry> train_entries;
  std::vector<ManifestEntry> eval_entries;
  std::vector<Scene> train;
  std::vector<Scene> eval;
};

Corpus load_corpus(const RunConfig& cfg);

/// External detections when cfg.detections names a directory, otherwise the
/// simulated detector seeded from the scene seed.
std::vector<Detection> detections_for(const RunConfig& cfg, const ManifestEntry& entry, const Scene& scene);

/// FNV-1a 64 over the manifest and every file it references, as 16 hex digits.
std::string corpus_digest(const std::filesystem::path& root);

/// Dataset-level metrics of `model` on prepared scenes.
MetricReport evaluate_model(const Model& model, std::span<const PreparedScene> scenes, bool fuse);

void cmd_gen_data(const RunConfig& cfg, const std::filesystem::path& out, bool force, std::ostream* log = nullptr);

struct PretrainResult {
  PretrainLog log;
  std::filesystem::path checkpoint;
};
/// Writes encoder.ckpt and pretrain_loss.csv (epoch,loss).
PretrainResult cmd_pretrain(const RunConfig& cfg, const std::filesystem::path& out, bool force, std::ostream* log = nullptr);

struct TrainResult {
  std::vector<double> epoch_losses;        // mean total loss per epoch
  std::vector<MetricReport> reports;       // one per evaluated epoch
  MetricReport final_report;
  double final_loss = 0.0;                 // mean total loss of the last epoch
  std::filesystem::path checkpoint;
};
/// Writes model.ckpt, metrics.csv (one row per evaluated epoch) and train_log.csv.
TrainResult cmd_train(const RunConfig& cfg, const std::filesystem::path& out, bool force, std::ostream* log = nullptr);

struct FinetuneResult {
  MetricReport before;
  MetricReport after;
  std::uint64_t frozen_hash_before = 0;
  std::uint64_t frozen_hash_after = 0;
  std::size_t frozen_tensors = 0;
  std::size_t trainable_tensors = 0;
  std::filesystem::path checkpoint;
};
/// Loads cfg.checkpoint, trains only the topology heads on detector boxes and
/// checks that every other parameter is bit-identical afterwards.
/// Writes model.ckpt, metrics_before.csv and metrics.csv.
FinetuneResult cmd_finetune_topology(const RunConfig& cfg, const std::filesystem::path& out, bool force,
                                     std::ostream* log = nullptr);

/// Evaluates cfg.checkpoint (or ground truth when cfg.oracle) on the eval split; writes metrics.csv.
MetricReport cmd_eval(const RunConfig& cfg, const std::filesystem::path& out, bool force, std::ostream* log = nullptr);

/// One row per run directory (label from its config echo, metrics from the
/// last row of metrics.csv), sorted by label.
std::string cmd_report(std::span<const std::filesystem::path> run_dirs);

/// Creates `out`, refusing a nonempty directory unless `force`, and writes config.txt.
void prepare_run_dir(const RunConfig& cfg, const std::filesystem::path& out, bool force);

}  // namespace mapkit
