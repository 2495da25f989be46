#include "mapkit/encoding.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace mapkit {

void EncodingConfig::validate() const {
  if (frequencies < 1) throw std::invalid_argument("EncodingConfig: frequencies must be >= 1");
  if (!(wavelength > 0.0)) throw std::invalid_argument("EncodingConfig: wavelength must be positive");
  if (class_count < 1) throw std::invalid_argument("EncodingConfig: class_count must be >= 1");
}

void append_sincos(std::span<const double> coords, int frequencies, double wavelength, std::vector<double>& out) {
  for (const double a : coords) {
    double scale = std::numbers::pi / wavelength;
    for (int k = 0; k < frequencies; ++k) {
      const double phase = scale * a;
      out.push_back(std::sin(phase));
      out.push_back(std::cos(phase));
      scale *= 2.0;
    }
  }
}

std::vector<double> sincos_encode_point(Point2 p, const EncodingConfig& cfg) {
  cfg.validate();
  std::vector<double> out;
  out.reserve(cfg.position_dim());
  const double xy[2] = {p.x, p.y};
  append_sincos(xy, cfg.frequencies, cfg.wavelength, out);
  return out;
}

std::vector<double> onehot_class(int class_id, int class_count) {
  if (class_id < 0 || class_id >= class_count) {
    throw std::out_of_range("onehot_class: class_id " + std::to_string(class_id) + " not in [0, " +
                            std::to_string(class_count) + ")");
  }
  std::vector<double> out(static_cast<std::size_t>(class_count), 0.0);
  out[static_cast<std::size_t>(class_id)] = 1.0;
  return out;
}

GraphVector build_graph_vector(const LocalView& view, const EncodingConfig& cfg, std::size_t n_points) {
  cfg.validate();
  if (n_points < 2) throw std::invalid_argument("build_graph_vector: n_points must be >= 2");
  GraphVector gv;
  gv.lines = view.lines.size();
  gv.points = n_points;
  gv.dim = cfg.point_dim();
  gv.data.reserve(gv.lines * gv.points * gv.dim);
  for (const auto& line : view.lines) {
    const Polyline resampled = resample_polyline(line, n_points);
    const auto onehot = onehot_class(line.class_id, cfg.class_count);
    for (const auto& p : resampled.points) {
      const double xy[2] = {p.x, p.y};
      append_sincos(xy, cfg.frequencies, cfg.wavelength, gv.data);
      gv.data.insert(gv.data.end(), onehot.begin(), onehot.end());
    }
  }
  return gv;
}

}  // namespace mapkit
