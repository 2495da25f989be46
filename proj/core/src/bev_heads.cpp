#include "mapkit/bev_heads.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "json.hpp"
#include "mapkit/checkpoint.hpp"
#include "mapkit/encoding.hpp"

namespace mapkit {

namespace {

std::size_t cells_along(double half_extent, double resolution, const char* axis) {
  const double n = 2.0 * half_extent / resolution;
  const double r = std::round(n);
  if (r < 1.0 || std::abs(n - r) > 1e-9 * std::max(1.0, n)) {
    throw std::invalid_argument(std::string("BevConfig: 2 * extent.") + axis + " must be a positive multiple of resolution");
  }
  return static_cast<std::size_t>(r);
}

}  // namespace

void BevConfig::validate() const {
  if (hidden == 0 || heads == 0 || hidden % heads != 0) throw std::invalid_argument("BevConfig: hidden must be divisible by heads");
  if (!(extent.x > 0.0) || !(extent.y > 0.0)) throw std::invalid_argument("BevConfig: extent must be positive");
  if (!(resolution > 0.0)) throw std::invalid_argument("BevConfig: resolution must be positive");
  grid_rows();
  grid_cols();
  if (dec_layers == 0) throw std::invalid_argument("BevConfig: dec_layers must be >= 1");
  if (area_queries == 0 || lane_queries == 0) throw std::invalid_argument("BevConfig: n_queries must be >= 1");
  if (area_points < 3) throw std::invalid_argument("BevConfig: area_points must be >= 3");
  if (lane_points < 2) throw std::invalid_argument("BevConfig: lane_points must be >= 2");
  if (lane_classes == 0) throw std::invalid_argument("BevConfig: lane_classes must be >= 1");
  if (topo_hidden == 0) throw std::invalid_argument("BevConfig: topo_hidden must be >= 1");
}

std::size_t BevConfig::grid_rows() const { return cells_along(extent.y, resolution, "y"); }
std::size_t BevConfig::grid_cols() const { return cells_along(extent.x, resolution, "x"); }

Point2 BevConfig::cell_center(std::size_t row, std::size_t col) const {
  return {-extent.x + (static_cast<double>(col) + 0.5) * resolution, -extent.y + (static_cast<double>(row) + 0.5) * resolution};
}

std::string BevConfig::to_json() const {
  nlohmann::json j = {{"hidden", hidden},
                      {"heads", heads},
                      {"extent_x", extent.x},
                      {"extent_y", extent.y},
                      {"resolution", resolution},
                      {"dec_layers", dec_layers},
                      {"area_queries", area_queries},
                      {"lane_queries", lane_queries},
                      {"area_points", area_points},
                      {"lane_points", lane_points},
                      {"lane_classes", lane_classes},
                      {"topo_hidden", topo_hidden}};
  return j.dump();
}

BevConfig BevConfig::from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("checkpoint field bev: ") + e.what());
  }
  auto uint_field = [&](const char* key) -> std::size_t {
    if (!j.contains(key) || !j[key].is_number_unsigned()) {
      throw CheckpointError(std::string("checkpoint field ") + key + ": missing or not an unsigned integer");
    }
    return j[key].get<std::size_t>();
  };
  auto real_field = [&](const char* key) -> double {
    if (!j.contains(key) || !j[key].is_number()) throw CheckpointError(std::string("checkpoint field ") + key + ": missing or not a number");
    return j[key].get<double>();
  };
  BevConfig c;
  c.hidden = uint_field("hidden");
  c.heads = uint_field("heads");
  c.extent = {real_field("extent_x"), real_field("extent_y")};
  c.resolution = real_field("resolution");
  c.dec_layers = uint_field("dec_layers");
  c.area_queries = uint_field("area_queries");
  c.lane_queries = uint_field("lane_queries");
  c.area_points = uint_field("area_points");
  c.lane_points = uint_field("lane_points");
  c.lane_classes = uint_field("lane_classes");
  c.topo_hidden = uint_field("topo_hidden");
  return c;
}

void validate(const AnchorChain& chain, std::size_t n_points) {
  if (chain.points.size() != n_points) {
    throw ValidationError("anchor chain has " + std::to_string(chain.points.size()) + " points, expected " +
                          std::to_string(n_points));
  }
  for (const auto& p : chain.points) {
    if (!std::isfinite(p.x) || !std::isfinite(p.y)) throw ValidationError("anchor chain has non-finite points");
  }
  if (chain.closed && signed_area(chain.points) == 0.0) throw ValidationError("closed anchor chain encloses zero area");
}

ClassScore foreground_score(std::span<const double> class_logits) {
  if (class_logits.size() < 2) throw std::invalid_argument("foreground_score: need at least one class plus background");
  const auto probs = softmax_values(class_logits);
  ClassScore best{0, probs[0]};
  for (std::size_t c = 1; c + 1 < probs.size(); ++c) {
    if (probs[c] > best.score) best = {static_cast<int>(c), probs[c]};
  }
  return best;
}

namespace {

std::vector<Point2> chain_from_row(std::span<const double> row, std::size_t offset, std::size_t n, Point2 scale) {
  std::vector<Point2> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = {row[offset + 2 * i] * scale.x, row[offset + 2 * i + 1] * scale.y};
  return out;
}

std::vector<double> row_of(const Tensor& t, std::size_t r) {
  const auto v = t.values();
  const std::size_t c = t.cols();
  return std::vector<double>(v.begin() + static_cast<std::ptrdiff_t>(r * c), v.begin() + static_cast<std::ptrdiff_t>((r + 1) * c));
}

}  // namespace

std::vector<InstancePrediction> extract_areas(const HeadOutputs& out, const BevConfig& cfg) {
  std::vector<InstancePrediction> preds;
  for (std::size_t q = 0; q < out.area_points.rows(); ++q) {
    InstancePrediction p;
    const auto row = row_of(out.area_points, q);
    p.geometry.closed = true;
    p.geometry.chains.push_back(chain_from_row(row, 0, cfg.area_points, cfg.scale()));
    p.class_logits = row_of(out.area_logits, q);
    preds.push_back(std::move(p));
  }
  return preds;
}

std::vector<InstancePrediction> extract_lanes(const HeadOutputs& out, const BevConfig& cfg) {
  std::vector<InstancePrediction> preds;
  const std::size_t n = cfg.lane_points;
  for (std::size_t q = 0; q < out.lane_points.rows(); ++q) {
    InstancePrediction p;
    const auto row = row_of(out.lane_points, q);
    for (std::size_t k = 0; k < 3; ++k) p.geometry.chains.push_back(chain_from_row(row, 2 * n * k, n, cfg.scale()));
    p.class_logits = row_of(out.lane_logits, q);
    p.feature = row_of(out.lane_features, q);
    preds.push_back(std::move(p));
  }
  return preds;
}

BevGrid::BevGrid(const BevConfig& cfg, Rng& rng) {
  const std::size_t rows = cfg.grid_rows();
  const std::size_t cols = cfg.grid_cols();
  const std::size_t d = cfg.hidden;
  const int bands = static_cast<int>(std::min<std::size_t>(8, d / 4));
  std::vector<double> init(rows * cols * d);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      double* cell = init.data() + (r * cols + c) * d;
      std::vector<double> code;
      if (bands > 0) {
        const Point2 p = cfg.cell_center(r, c);
        const double coords[2] = {p.x, p.y};
        append_sincos(coords, bands, 100.0, code);
      }
      for (std::size_t k = 0; k < d; ++k) cell[k] = k < code.size() ? code[k] : rng.normal(0.0, 0.02);
    }
  }
  queries = Tensor::parameter({rows * cols, d}, std::move(init));
}

void BevGrid::collect(nn::ParameterSet& out, const std::string& prefix) const { out.add(prefix + "queries", queries); }

SdMapFusion::SdMapFusion(std::size_t hidden, std::size_t heads, Rng& rng) : norm(hidden), attn(hidden, heads, rng) {}

Tensor SdMapFusion::operator()(const Tensor& bev, const Tensor& map_feature) const {
  if (map_feature.rows() == 0) return bev;
  if (map_feature.cols() != bev.cols()) {
    throw std::invalid_argument("fuse_sdmap: map feature width " + std::to_string(map_feature.cols()) +
                                " differs from BEV width " + std::to_string(bev.cols()));
  }
  return ops::add(bev, attn(norm(bev), map_feature, map_feature));
}

void SdMapFusion::collect(nn::ParameterSet& out, const std::string& prefix) const {
  norm.collect(out, prefix + "norm.");
  attn.collect(out, prefix + "attn.");
}

InstanceDecoder::InstanceDecoder(std::size_t hidden, std::size_t heads, std::size_t layers, std::vector<double> anchor_init,
                                 std::size_t n_queries, std::size_t n_classes, Rng& rng)
    : final_norm(hidden) {
  if (n_queries == 0 || anchor_init.size() % n_queries != 0) throw std::invalid_argument("InstanceDecoder: bad anchor layout");
  const std::size_t width = anchor_init.size() / n_queries;
  std::vector<double> q(n_queries * hidden);
  for (auto& v : q) v = rng.normal(0.0, 1.0);
  queries = Tensor::parameter({n_queries, hidden}, std::move(q));
  anchors = Tensor::parameter({n_queries, width}, std::move(anchor_init));
  for (std::size_t i = 0; i < layers; ++i) blocks.emplace_back(hidden, heads, rng);
  offset_head = nn::Mlp(hidden, {hidden, width}, nn::Activation::kRelu, rng);
  for (auto& v : offset_head.layers.back().weight.mutable_values()) v *= 0.1;
  for (auto& v : offset_head.layers.back().bias.mutable_values()) v = 0.0;
  class_head = nn::Linear(hidden, n_classes, rng);
}

InstanceDecoder::Output InstanceDecoder::operator()(const Tensor& memory) const {
  Tensor h = queries;
  for (const auto& block : blocks) h = block(h, memory);
  const Tensor f = final_norm(h);
  return Output{ops::add(anchors, offset_head(f)), class_head(f), f};
}

void InstanceDecoder::collect(nn::ParameterSet& out, const std::string& prefix) const {
  out.add(prefix + "queries", queries);
  out.add(prefix + "anchors", anchors);
  for (std::size_t i = 0; i < blocks.size(); ++i) blocks[i].collect(out, prefix + "block" + std::to_string(i) + ".");
  final_norm.collect(out, prefix + "final_norm.");
  offset_head.collect(out, prefix + "offset.");
  class_head.collect(out, prefix + "class.");
}

std::vector<double> initial_area_anchors(std::size_t n_queries, std::size_t n_points) {
  const auto cols = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(n_queries)))) + 1;
  const std::size_t rows = (n_queries + cols - 1) / cols;
  std::vector<double> out;
  out.reserve(n_queries * n_points * 2);
  for (std::size_t q = 0; q < n_queries; ++q) {
    const double cx = -1.0 + (2.0 * static_cast<double>(q % cols) + 1.0) / static_cast<double>(cols);
    const double cy = -1.0 + (2.0 * static_cast<double>(q / cols) + 1.0) / static_cast<double>(rows);
    for (std::size_t i = 0; i < n_points; ++i) {
      const double a = 2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n_points);
      out.push_back(cx + 0.05 * std::cos(a));
      out.push_back(cy + 0.05 * std::sin(a));
    }
  }
  return out;
}

std::vector<double> initial_lane_anchors(std::size_t n_queries, std::size_t n_points, Extent extent) {
  const std::size_t x_slots = n_queries >= 3 ? 3 : 1;
  const std::size_t y_slots = (n_queries + x_slots - 1) / x_slots;
  const double half_width = 1.75 / extent.y;
  std::vector<double> out;
  out.reserve(n_queries * n_points * 6);
  for (std::size_t q = 0; q < n_queries; ++q) {
    const double cx = -1.0 + (2.0 * static_cast<double>(q % x_slots) + 1.0) / static_cast<double>(x_slots);
    const double half = 0.9 / static_cast<double>(x_slots);
    const double y = y_slots == 1 ? 0.0 : -0.8 + 1.6 * static_cast<double>(q / x_slots) / static_cast<double>(y_slots - 1);
    for (const double dy : {0.0, half_width, -half_width}) {
      for (std::size_t i = 0; i < n_points; ++i) {
        const double t = static_cast<double>(i) / static_cast<double>(n_points - 1);
        out.push_back(cx - half + 2.0 * half * t);
        out.push_back(y + dy);
      }
    }
  }
  return out;
}

namespace {

// Liang-Barsky: does segment a-b meet the closed box?
bool segment_meets_box(Point2 a, Point2 b, double x0, double y0, double x1, double y1) {
  double t0 = 0.0, t1 = 1.0;
  const double dx = b.x - a.x, dy = b.y - a.y;
  const double p[4] = {-dx, dx, -dy, dy};
  const double q[4] = {a.x - x0, x1 - a.x, a.y - y0, y1 - a.y};
  for (int k = 0; k < 4; ++k) {
    if (p[k] == 0.0) {
      if (q[k] < 0.0) return false;
    } else {
      const double t = q[k] / p[k];
      if (p[k] < 0.0) {
        t0 = std::max(t0, t);
      } else {
        t1 = std::min(t1, t);
      }
      if (t0 > t1) return false;
    }
  }
  return true;
}

bool inside_even_odd(const std::vector<Point2>& ring, Point2 p) {
  bool inside = false;
  for (std::size_t i = 0, j = ring.size() - 1; i < ring.size(); j = i++) {
    const Point2 a = ring[i], b = ring[j];
    if ((a.y > p.y) != (b.y > p.y)) {
      const double x = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
      if (p.x < x) inside = !inside;
    }
  }
  return inside;
}

}  // namespace

std::vector<double> rasterize_foreground(const Scene& ego_scene, const BevConfig& cfg) {
  const std::size_t rows = cfg.grid_rows();
  const std::size_t cols = cfg.grid_cols();
  const double res = cfg.resolution;
  const double ox = -cfg.extent.x, oy = -cfg.extent.y;
  std::vector<double> out(rows * cols, 0.0);
  auto clamp_index = [](double v, std::size_t n) -> std::size_t {
    if (v < 0.0) return 0;
    const auto i = static_cast<std::size_t>(v);
    return std::min(i, n - 1);
  };
  auto mark_segment = [&](Point2 a, Point2 b) {
    const double lo_x = std::min(a.x, b.x), hi_x = std::max(a.x, b.x);
    const double lo_y = std::min(a.y, b.y), hi_y = std::max(a.y, b.y);
    if (hi_x < ox || lo_x > -ox || hi_y < oy || lo_y > -oy) return;
    // One extra cell on each side covers segments lying exactly on a cell edge.
    const std::size_t c0 = clamp_index(std::floor((lo_x - ox) / res) - 1.0, cols);
    const std::size_t c1 = clamp_index(std::floor((hi_x - ox) / res) + 1.0, cols);
    const std::size_t r0 = clamp_index(std::floor((lo_y - oy) / res) - 1.0, rows);
    const std::size_t r1 = clamp_index(std::floor((hi_y - oy) / res) + 1.0, rows);
    for (std::size_t r = r0; r <= r1; ++r) {
      for (std::size_t c = c0; c <= c1; ++c) {
        double& cell = out[r * cols + c];
        if (cell != 0.0) continue;
        const double x0 = ox + static_cast<double>(c) * res, y0 = oy + static_cast<double>(r) * res;
        if (segment_meets_box(a, b, x0, y0, x0 + res, y0 + res)) cell = 1.0;
      }
    }
  };
  for (const auto& lane : ego_scene.lane_segments) {
    for (const Polyline* line : {&lane.centerline, &lane.left_boundary, &lane.right_boundary}) {
      for (std::size_t i = 0; i + 1 < line->points.size(); ++i) mark_segment(line->points[i], line->points[i + 1]);
    }
  }
  for (const auto& area : ego_scene.areas) {
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c) {
        double& cell = out[r * cols + c];
        if (cell == 0.0 && inside_even_odd(area.boundary, cfg.cell_center(r, c))) cell = 1.0;
      }
    }
  }
  return out;
}

std::array<double, 4> normalize_bbox(const BBox& box) {
  return {box.x_min / kImageWidth, box.y_min / kImageHeight, box.x_max / kImageWidth, box.y_max / kImageHeight};
}

std::vector<double> encode_traffic_element(const TrafficElement& element) {
  validate(element, "traffic element");
  const auto corners = normalize_bbox(element.bbox);
  std::vector<double> out;
  out.reserve(kTrafficElementCodeDim);
  append_sincos(corners, 8, 2.0, out);
  const auto onehot = onehot_class(element.class_id, kTrafficElementClassCount);
  out.insert(out.end(), onehot.begin(), onehot.end());
  return out;
}

std::vector<double> encode_endpoint(Point2 p) {
  std::vector<double> out;
  out.reserve(kEndpointCodeDim);
  const double coords[2] = {p.x, p.y};
  append_sincos(coords, 8, 100.0, out);
  return out;
}

TopologyLL::TopologyLL(std::size_t feature_dim, std::size_t hidden, Rng& rng)
    : row_proj(feature_dim + kEndpointCodeDim, hidden, rng),
      col_proj(feature_dim + kEndpointCodeDim, hidden, rng),
      out(hidden, 1, rng) {}

Tensor TopologyLL::operator()(const Tensor& features, std::span<const std::array<Point2, 2>> endpoints) const {
  const std::size_t n = features.rows();
  if (endpoints.size() != n) throw std::invalid_argument("topology_ll: one endpoint pair per feature row required");
  if (n == 0) return Tensor::zeros({0, 0});
  std::vector<double> ends, starts;
  for (const auto& e : endpoints) {
    const auto ce = encode_endpoint(e[0]);
    const auto cs = encode_endpoint(e[1]);
    ends.insert(ends.end(), ce.begin(), ce.end());
    starts.insert(starts.end(), cs.begin(), cs.end());
  }
  const Tensor a = row_proj(ops::concat_cols({features, Tensor::constant({n, kEndpointCodeDim}, std::move(ends))}));
  // The column projection carries no bias of its own in the concatenated form.
  const Tensor b_in = ops::concat_cols({features, Tensor::constant({n, kEndpointCodeDim}, std::move(starts))});
  const Tensor b = ops::matmul(b_in, col_proj.weight);
  const Tensor pairs = out(ops::relu(ops::pairwise_add(a, b)));
  return ops::reshape(pairs, {n, n});
}

void TopologyLL::collect(nn::ParameterSet& o, const std::string& prefix) const {
  o.add(prefix + "row.weight", row_proj.weight);
  o.add(prefix + "row.bias", row_proj.bias);
  o.add(prefix + "col.weight", col_proj.weight);
  out.collect(o, prefix + "out.");
}

TopologyLT::TopologyLT(std::size_t feature_dim, std::size_t hidden, Rng& rng)
    : lane_proj(feature_dim, hidden, rng), element_proj(kTrafficElementCodeDim, hidden, rng), out(hidden, 1, rng) {}

Tensor TopologyLT::operator()(const Tensor& features, std::span<const TrafficElement> elements) const {
  const std::size_t n = features.rows();
  const std::size_t m = elements.size();
  std::vector<double> codes;
  codes.reserve(m * kTrafficElementCodeDim);
  for (const auto& e : elements) {
    const auto c = encode_traffic_element(e);
    codes.insert(codes.end(), c.begin(), c.end());
  }
  if (n == 0 || m == 0) return Tensor::zeros({n, m});
  const Tensor a = lane_proj(features);
  const Tensor b = ops::matmul(Tensor::constant({m, kTrafficElementCodeDim}, std::move(codes)), element_proj.weight);
  const Tensor pairs = out(ops::relu(ops::pairwise_add(a, b)));
  return ops::reshape(pairs, {n, m});
}

void TopologyLT::collect(nn::ParameterSet& o, const std::string& prefix) const {
  lane_proj.collect(o, prefix + "lane.");
  o.add(prefix + "element.weight", element_proj.weight);
  out.collect(o, prefix + "out.");
}

BevHeads::BevHeads(BevConfig cfg, Rng& rng) : cfg_(cfg) {
  cfg_.validate();
  const std::size_t d = cfg_.hidden;
  grid_ = BevGrid(cfg_, rng);
  fusion_ = SdMapFusion(d, cfg_.heads, rng);
  area_decoder_ = InstanceDecoder(d, cfg_.heads, cfg_.dec_layers, initial_area_anchors(cfg_.area_queries, cfg_.area_points),
                                  cfg_.area_queries, kAreaClassCount + 1, rng);
  lane_decoder_ = InstanceDecoder(d, cfg_.heads, cfg_.dec_layers,
                                  initial_lane_anchors(cfg_.lane_queries, cfg_.lane_points, cfg_.extent), cfg_.lane_queries,
                                  cfg_.lane_classes + 1, rng);
  aux_head_ = nn::Mlp(d, {d, 1}, nn::Activation::kRelu, rng);
  topo_ll_ = TopologyLL(d, cfg_.topo_hidden, rng);
  topo_lt_ = TopologyLT(d, cfg_.topo_hidden, rng);
}

HeadOutputs BevHeads::forward(const Tensor& map_feature, std::span<const TrafficElement> elements, bool fuse) const {
  const Tensor bev = fuse ? fusion_(grid_.queries, map_feature) : grid_.queries;
  HeadOutputs out;
  const auto areas = area_decoder_(bev);
  out.area_points = areas.points;
  out.area_logits = areas.logits;
  const auto lanes = lane_decoder_(bev);
  out.lane_points = lanes.points;
  out.lane_logits = lanes.logits;
  out.lane_features = lanes.features;
  out.seg_logits = aux_head_(bev);

  const std::size_t n = cfg_.lane_points;
  const auto lp = lanes.points.values();
  const std::size_t width = lanes.points.cols();
  std::vector<std::array<Point2, 2>> endpoints(cfg_.lane_queries);
  for (std::size_t q = 0; q < cfg_.lane_queries; ++q) {
    const double* row = lp.data() + q * width;
    endpoints[q][0] = {row[2 * (n - 1)] * cfg_.extent.x, row[2 * (n - 1) + 1] * cfg_.extent.y};
    endpoints[q][1] = {row[0] * cfg_.extent.x, row[1] * cfg_.extent.y};
  }
  out.ll_logits = topo_ll_(lanes.features, endpoints);
  out.lt_logits = topo_lt_(lanes.features, elements);
  return out;
}

nn::ParameterSet BevHeads::parameters() const {
  nn::ParameterSet out;
  grid_.collect(out, "bev.");
  fusion_.collect(out, "fusion.");
  area_decoder_.collect(out, "area_decoder.");
  lane_decoder_.collect(out, "lane_decoder.");
  aux_head_.collect(out, "aux_head.");
  topo_ll_.collect(out, kTopologyPrefixLL);
  topo_lt_.collect(out, kTopologyPrefixLT);
  return out;
}

}  // namespace mapkit
