#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "mapkit/scene.hpp"

namespace mapkit {

/// Default resampling count for SD-map lines.
inline constexpr std::size_t kPointsPerLine = 11;

/// Sinusoidal point encoding plus one-hot class block.
///
/// For each axis a in {x, y} and band k in [0, K) the position block holds
/// sin(2^k * pi * a / L) followed by cos(2^k * pi * a / L). All x bands come
/// before all y bands, so D_pos = 4K and the full point width is D = 4K + C.
/// This layout is baked into encoder checkpoints; do not reorder.
struct EncodingConfig {
  int frequencies = 8;        // K
  double wavelength = 100.0;  // L, meters
  int class_count = kSdMapClassCount;

  std::size_t position_dim() const { return 4 * static_cast<std::size_t>(frequencies); }
  std::size_t point_dim() const { return position_dim() + static_cast<std::size_t>(class_count); }
  void validate() const;
};

/// N_l x N_p x D array, row-major with the line index outermost.
struct GraphVector {
  std::size_t lines = 0;
  std::size_t points = 0;
  std::size_t dim = 0;
  std::vector<double> data;

  double at(std::size_t l, std::size_t p, std::size_t d) const { return data[(l * points + p) * dim + d]; }
  std::span<const double> line(std::size_t l) const {
    return std::span<const double>(data).subspan(l * points * dim, points * dim);
  }
};

/// Encodes scalar coordinates with `frequencies` sin/cos bands each, appended to `out`.
void append_sincos(std::span<const double> coords, int frequencies, double wavelength, std::vector<double>& out);

std::vector<double> sincos_encode_point(Point2 p, const EncodingConfig& cfg);
std::vector<double> onehot_class(int class_id, int class_count);
GraphVector build_graph_vector(const LocalView& view, const EncodingConfig& cfg, std::size_t n_points = kPointsPerLine);

}  // namespace mapkit
