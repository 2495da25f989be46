#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mapkit/assignment.hpp"
#include "mapkit/nn.hpp"
#include "mapkit/scene.hpp"

namespace mapkit {

struct BevConfig {
  std::size_t hidden = 64;  // D_h
  std::size_t heads = 4;
  Extent extent{};
  double resolution = 1.0;  // meters per cell
  std::size_t dec_layers = 2;
  std::size_t area_queries = 20;
  std::size_t lane_queries = 30;
  std::size_t area_points = 20;  // N_a
  std::size_t lane_points = 10;  // N_s
  std::size_t lane_classes = 1;
  std::size_t topo_hidden = 64;

  void validate() const;
  /// Rows run along y, columns along x.
  std::size_t grid_rows() const;
  std::size_t grid_cols() const;
  std::size_t cells() const { return grid_rows() * grid_cols(); }
  Point2 cell_center(std::size_t row, std::size_t col) const;
  /// Meters per normalized unit: predictions are emitted as (x / E_x, y / E_y).
  Point2 scale() const { return {extent.x, extent.y}; }
  std::string to_json() const;
  static BevConfig from_json(const std::string& text);
};

/// Ordered point chain of one instance, meters.
struct AnchorChain {
  std::vector<Point2> points;
  bool closed = false;
};

/// Throws ValidationError unless the chain has `n_points` points and, when closed, nonzero area.
void validate(const AnchorChain& chain, std::size_t n_points);

/// One decoded query converted to meters.
struct InstancePrediction {
  InstanceGeometry geometry;  // one closed chain (areas) or centerline, left, right (lanes)
  std::vector<double> class_logits;  // last entry is background
  std::vector<double> feature;       // D_h, final decoder embedding
};

/// Best non-background class and its softmax probability.
struct ClassScore {
  int class_id = 0;
  double score = 0.0;
};
ClassScore foreground_score(std::span<const double> class_logits);

/// Raw head outputs for one scene. Points are in normalized units with x and y
/// interleaved per point.
struct HeadOutputs {
  Tensor area_points;    // [Q_a, 2 N_a]
  Tensor area_logits;    // [Q_a, kAreaClassCount + 1]
  Tensor lane_points;    // [Q_l, 6 N_s]: centerline, left, right
  Tensor lane_logits;    // [Q_l, lane_classes + 1]
  Tensor lane_features;  // [Q_l, D_h]
  Tensor seg_logits;     // [H W, 1], row-major over the grid
  Tensor ll_logits;      // [Q_l, Q_l]
  Tensor lt_logits;      // [Q_l, M]
};

std::vector<InstancePrediction> extract_areas(const HeadOutputs& out, const BevConfig& cfg);
std::vector<InstancePrediction> extract_lanes(const HeadOutputs& out, const BevConfig& cfg);

/// Learnable H x W x D_h query grid stored as [H W, D_h]. The first position
/// dimensions start as the sincos code of each cell center.
struct BevGrid {
  Tensor queries;

  BevGrid() = default;
  BevGrid(const BevConfig& cfg, Rng& rng);
  void collect(nn::ParameterSet& out, const std::string& prefix) const;
};

/// bev + MHA(LN(bev), G_f, G_f). With N_l = 0 the input is returned unchanged.
struct SdMapFusion {
  nn::LayerNorm norm;
  nn::MultiHeadAttention attn;

  SdMapFusion() = default;
  SdMapFusion(std::size_t hidden, std::size_t heads, Rng& rng);
  Tensor operator()(const Tensor& bev, const Tensor& map_feature) const;
  void collect(nn::ParameterSet& out, const std::string& prefix) const;
};

/// Learnable queries refined by decoder blocks over the flattened BEV memory.
/// Each query emits offsets added to its own learnable anchor and class logits.
struct InstanceDecoder {
  Tensor queries;  // [Q, D_h]
  Tensor anchors;  // [Q, point values]
  std::vector<nn::DecoderBlock> blocks;
  nn::LayerNorm final_norm;
  nn::Mlp offset_head;
  nn::Linear class_head;

  struct Output {
    Tensor points;
    Tensor logits;
    Tensor features;
  };

  InstanceDecoder() = default;
  InstanceDecoder(std::size_t hidden, std::size_t heads, std::size_t layers, std::vector<double> anchor_init,
                  std::size_t n_queries, std::size_t n_classes, Rng& rng);
  Output operator()(const Tensor& memory) const;
  void collect(nn::ParameterSet& out, const std::string& prefix) const;
};

/// Initial anchors: small rings spread over the grid.
std::vector<double> initial_area_anchors(std::size_t n_queries, std::size_t n_points);
/// Initial anchors: short straight lanes along x at spread lateral offsets.
std::vector<double> initial_lane_anchors(std::size_t n_queries, std::size_t n_points, Extent extent);

/// Per-cell foreground target, row-major over the grid. A cell is foreground
/// when any segment of a lane centerline or boundary meets its closed square,
/// or when its center lies inside an area ring (even-odd rule). `ego_scene`
/// must already be in the ego frame.
std::vector<double> rasterize_foreground(const Scene& ego_scene, const BevConfig& cfg);

/// Corners (x_min, y_min, x_max, y_max) divided by the image size.
std::array<double, 4> normalize_bbox(const BBox& box);
/// Sincos code of the normalized corners followed by the class one-hot.
std::vector<double> encode_traffic_element(const TrafficElement& element);
inline constexpr std::size_t kTrafficElementCodeDim = 4 * 2 * 8 + kTrafficElementClassCount;

/// Sincos code of one point in meters, used for topology endpoints.
std::vector<double> encode_endpoint(Point2 p);
inline constexpr std::size_t kEndpointCodeDim = 4 * 8;

/// Pairwise MLP over [f_i, f_j, code(end_i), code(start_j)]. The first layer
/// is split into a row part and a column part whose sum equals the layer
/// applied to the concatenation.
struct TopologyLL {
  nn::Linear row_proj;  // [f_i, code(end_i)] -> hidden
  nn::Linear col_proj;  // [f_j, code(start_j)] -> hidden
  nn::Linear out;

  TopologyLL() = default;
  TopologyLL(std::size_t feature_dim, std::size_t hidden, Rng& rng);
  /// features [N, D_h]; endpoints hold N (end, start) pairs in meters. Returns [N, N].
  Tensor operator()(const Tensor& features, std::span<const std::array<Point2, 2>> endpoints) const;
  void collect(nn::ParameterSet& out, const std::string& prefix) const;
};

/// Pairwise MLP over [f_i, code(box_j), onehot(class_j)]; returns [N, M].
struct TopologyLT {
  nn::Linear lane_proj;
  nn::Linear element_proj;
  nn::Linear out;

  TopologyLT() = default;
  TopologyLT(std::size_t feature_dim, std::size_t hidden, Rng& rng);
  Tensor operator()(const Tensor& features, std::span<const TrafficElement> elements) const;
  void collect(nn::ParameterSet& out, const std::string& prefix) const;
};

/// Everything downstream of the map encoder.
class BevHeads {
 public:
  BevHeads() = default;
  BevHeads(BevConfig cfg, Rng& rng);

  const BevConfig& config() const { return cfg_; }

  /// map_feature is [N_l, D_h]. `elements` feed the lane-traffic head.
  /// Lane endpoints reach the lane-lane head as constants, so the topology
  /// loss never moves lane geometry.
  HeadOutputs forward(const Tensor& map_feature, std::span<const TrafficElement> elements, bool fuse = true) const;

  const BevGrid& grid() const { return grid_; }
  const SdMapFusion& fusion() const { return fusion_; }
  InstanceDecoder& area_decoder() { return area_decoder_; }
  InstanceDecoder& lane_decoder() { return lane_decoder_; }

  /// Names: "bev.", "fusion.", "area_decoder.", "lane_decoder.", "aux_head.",
  /// "topology_ll.", "topology_lt.".
  nn::ParameterSet parameters() const;

 private:
  BevConfig cfg_;
  BevGrid grid_;
  SdMapFusion fusion_;
  InstanceDecoder area_decoder_;
  InstanceDecoder lane_decoder_;
  nn::Mlp aux_head_;
  TopologyLL topo_ll_;
  TopologyLT topo_lt_;
};

inline constexpr const char* kTopologyPrefixLL = "topology_ll.";
inline constexpr const char* kTopologyPrefixLT = "topology_lt.";

}  // namespace mapkit
