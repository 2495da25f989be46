#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mapkit/checkpoint.hpp"
#include "mapkit/encoding.hpp"
#include "mapkit/nn.hpp"

namespace mapkit {

struct MapEncoderConfig {
  std::size_t hidden = 64;  // D_h
  std::size_t layers = 2;
  std::size_t heads = 4;
  std::size_t n_points = kPointsPerLine;  // N_p
  std::size_t point_dim = 39;             // D

  void validate() const;
  std::string to_json() const;
  static MapEncoderConfig from_json(const std::string& text);
  friend bool operator==(const MapEncoderConfig&, const MapEncoderConfig&) = default;
};

/// N_l x D_h per-line embeddings.
struct MapFeature {
  std::size_t lines = 0;
  std::size_t hidden = 0;
  std::vector<double> data;
};

/// Transformer over per-line tokens. Each line's N_p x D block is flattened and
/// projected to one D_h token; there is no positional encoding between tokens,
/// so the output is equivariant to line order.
class MapEncoder {
 public:
  MapEncoder() = default;
  MapEncoder(MapEncoderConfig cfg, Rng& rng);

  const MapEncoderConfig& config() const { return cfg_; }

  /// Input projection only: [N_l, D_h].
  Tensor tokens(const GraphVector& gv) const;
  /// Encoder blocks and final norm applied to a token matrix.
  Tensor encode_tokens(const Tensor& tokens) const;
  /// Full forward: [N_l, D_h]; N_l = 0 gives a [0, D_h] tensor.
  Tensor forward(const GraphVector& gv) const;

  nn::ParameterSet parameters() const;

 private:
  MapEncoderConfig cfg_;
  nn::Linear input_proj_;
  std::vector<nn::EncoderBlock> blocks_;
  nn::LayerNorm final_norm_;
};

MapFeature encode_map(const GraphVector& gv, const MapEncoder& encoder);

struct PretrainConfig {
  std::size_t epochs = 10;
  double lr = 2e-4;
  std::uint64_t seed = 0;
  double mask_ratio = 0.3;  // masked autoencoder only
};

struct PretrainLog {
  std::vector<double> step_losses;
  std::vector<double> epoch_losses;  // mean over the epoch's steps
};

/// Reconstruction decoder: D_h -> D_h -> N_p * D with a ReLU between.
/// The output layer starts near zero so the initial loss is close to the
/// target's mean square.
nn::Mlp make_reconstruction_decoder(const MapEncoderConfig& cfg, Rng& rng);

/// Trains `encoder` plus a throwaway decoder to reproduce each line's input
/// embedding block (mean squared error). One optimizer step per view.
PretrainLog pretrain_autoencoder(MapEncoder& encoder, const std::vector<GraphVector>& views, const PretrainConfig& cfg);

/// Masked variant: ceil(mask_ratio * N_l) line tokens are swapped for a learned
/// mask token after the input projection, and the loss covers only their blocks.
PretrainLog pretrain_mae(MapEncoder& encoder, const std::vector<GraphVector>& views, const PretrainConfig& cfg);

/// Rows chosen for masking in one view; deterministic in (seed, step).
std::vector<std::size_t> choose_masked_lines(std::size_t lines, double mask_ratio, std::uint64_t seed, std::uint64_t step);

void save_encoder(const MapEncoder& encoder, const std::filesystem::path& path);
/// Loads weights into `encoder`; throws CheckpointError if the stored config differs.
void load_encoder(MapEncoder& encoder, const std::filesystem::path& path);
void load_encoder(MapEncoder& encoder, const Checkpoint& ckpt);

}  // namespace mapkit
