#include <gtest/gtest.h>

#include "mapkit/bev_heads.hpp"
#include "mapkit/map_encoder.hpp"
#include "mapkit/optim.hpp"
#include "mapkit/scenegen.hpp"
#include "test_util.hpp"

namespace mapkit {
namespace {

using testing::random_values;

BevConfig small_cfg() {
  BevConfig c;
  c.hidden = 16;
  c.heads = 2;
  c.resolution = 5.0;
  c.dec_layers = 1;
  c.area_queries = 3;
  c.lane_queries = 5;
  c.area_points = 6;
  c.lane_points = 4;
  c.topo_hidden = 8;
  return c;
}

TEST(BevConfig, GridGeometry) {
  BevConfig c;
  EXPECT_EQ(c.grid_cols(), 100u);
  EXPECT_EQ(c.grid_rows(), 50u);
  const Point2 first = c.cell_center(0, 0);
  EXPECT_DOUBLE_EQ(first.x, -49.5);
  EXPECT_DOUBLE_EQ(first.y, -24.5);
  const Point2 last = c.cell_center(49, 99);
  EXPECT_DOUBLE_EQ(last.x, 49.5);
  EXPECT_DOUBLE_EQ(last.y, 24.5);
  const BevConfig back = BevConfig::from_json(c.to_json());
  EXPECT_EQ(back.to_json(), c.to_json());
  c.heads = 5;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(BevGrid, ShapeAndSincosInit) {
  const BevConfig c = small_cfg();
  Rng rng(1);
  const BevGrid g(c, rng);
  EXPECT_EQ(g.queries.shape(), (Shape{c.cells(), c.hidden}));
  // First position dims hold sin/cos codes, so each pair has unit norm.
  const double s = g.queries.at(7, 0), co = g.queries.at(7, 1);
  EXPECT_NEAR(s * s + co * co, 1.0, 1e-12);
}

TEST(Fusion, SkipAndSingleKey) {
  const BevConfig c = small_cfg();
  Rng rng(2);
  const SdMapFusion f(c.hidden, c.heads, rng);
  const BevGrid g(c, rng);
  const Tensor same = f(g.queries, Tensor::zeros({0, c.hidden}));
  EXPECT_EQ(same.node(), g.queries.node());

  const Tensor token = Tensor::constant({1, c.hidden}, random_values(rng, c.hidden));
  const Tensor fused = f(g.queries, token);
  EXPECT_EQ(fused.shape(), g.queries.shape());
  const Tensor attended = f.attn.out_proj(f.attn.v_proj(token));
  for (std::size_t r = 0; r < c.cells(); r += 17) {
    for (std::size_t k = 0; k < c.hidden; ++k) {
      EXPECT_NEAR(fused.at(r, k) - g.queries.at(r, k), attended.at(0, k), 1e-12);
    }
  }
  EXPECT_THROW(f(g.queries, Tensor::zeros({2, c.hidden + 1})), std::invalid_argument);
}

TEST(InstanceDecoder, ZeroOffsetsReturnAnchors) {
  const BevConfig c = small_cfg();
  Rng rng(3);
  InstanceDecoder d(c.hidden, c.heads, 1, initial_area_anchors(4, 6), 4, 3, rng);
  for (auto& w : d.offset_head.layers.back().weight.mutable_values()) w = 0.0;
  for (auto& b : d.offset_head.layers.back().bias.mutable_values()) b = 0.0;
  const Tensor mem = Tensor::constant({10, c.hidden}, random_values(rng, 10 * c.hidden));
  const auto out = d(mem);
  EXPECT_EQ(out.points.shape(), (Shape{4, 12}));
  EXPECT_EQ(out.logits.shape(), (Shape{4, 3}));
  EXPECT_EQ(out.features.shape(), (Shape{4, c.hidden}));
  for (std::size_t i = 0; i < out.points.numel(); ++i) EXPECT_EQ(out.points.values()[i], d.anchors.values()[i]);
}

TEST(Anchors, ValidChains) {
  const auto a = initial_area_anchors(5, 8);
  ASSERT_EQ(a.size(), 5u * 16u);
  for (std::size_t q = 0; q < 5; ++q) {
    AnchorChain ch{{}, true};
    for (std::size_t k = 0; k < 8; ++k) ch.points.push_back({a[q * 16 + 2 * k] * 50, a[q * 16 + 2 * k + 1] * 25});
    EXPECT_NO_THROW(validate(ch, 8));
  }
  const auto l = initial_lane_anchors(4, 5, {});
  EXPECT_EQ(l.size(), 4u * 30u);
  EXPECT_THROW(validate(AnchorChain{{{0, 0}, {1, 0}, {2, 0}}, true}, 3), ValidationError);
  EXPECT_THROW(validate(AnchorChain{{{0, 0}, {1, 0}}, false}, 3), ValidationError);
}

// Separating-axis test of a closed segment against a closed square.
bool segment_hits_square(Point2 a, Point2 b, double x0, double y0, double x1, double y1) {
  if (std::max(a.x, b.x) < x0 || std::min(a.x, b.x) > x1 || std::max(a.y, b.y) < y0 || std::min(a.y, b.y) > y1) return false;
  const Point2 d = b - a;
  const Point2 corners[4] = {{x0, y0}, {x1, y0}, {x1, y1}, {x0, y1}};
  int pos = 0, neg = 0;
  for (const auto& c : corners) {
    const double s = d.x * (c.y - a.y) - d.y * (c.x - a.x);
    if (s > 0) ++pos;
    if (s < 0) ++neg;
  }
  return !(pos == 4 || neg == 4);
}

// Even-odd ray crossing to +x.
bool inside_crossing(const std::vector<Point2>& ring, Point2 p) {
  bool in = false;
  for (std::size_t i = 0, j = ring.size() - 1; i < ring.size(); j = i++) {
    const Point2 a = ring[i], b = ring[j];
    if ((a.y > p.y) != (b.y > p.y) && p.x < (b.x - a.x) * (p.y - a.y) / (b.y - a.y) + a.x) in = !in;
  }
  return in;
}

std::vector<double> oracle_raster(const Scene& s, const BevConfig& c) {
  std::vector<double> out(c.cells(), 0.0);
  for (std::size_t r = 0; r < c.grid_rows(); ++r) {
    for (std::size_t col = 0; col < c.grid_cols(); ++col) {
      const double x0 = -c.extent.x + col * c.resolution, y0 = -c.extent.y + r * c.resolution;
      bool hit = false;
      for (const auto& lane : s.lane_segments) {
        for (const Polyline* l : {&lane.centerline, &lane.left_boundary, &lane.right_boundary}) {
          for (std::size_t i = 0; i + 1 < l->points.size() && !hit; ++i) {
            hit = segment_hits_square(l->points[i], l->points[i + 1], x0, y0, x0 + c.resolution, y0 + c.resolution);
          }
        }
      }
      for (const auto& a : s.areas) hit = hit || inside_crossing(a.boundary, c.cell_center(r, col));
      out[r * c.grid_cols() + col] = hit ? 1.0 : 0.0;
    }
  }
  return out;
}

TEST(Rasterize, EmptyAndPointCases) {
  BevConfig c;
  c.extent = {10, 5};
  c.resolution = 1.0;
  EXPECT_EQ(rasterize_foreground(Scene{}, c), std::vector<double>(c.cells(), 0.0));
  Scene s;
  s.lane_segments = {testing::straight_lane(2.2, 2.8, 0.5, 2)};
  const auto fg = rasterize_foreground(s, c);
  // Centerline lies inside the cell spanning x in [2, 3], y in [0, 1].
  EXPECT_EQ(fg[5 * c.grid_cols() + 12], 1.0);
}

TEST(Rasterize, MatchesBruteForceOracle) {
  GenConfig g;
  for (double res : {2.5, 5.0}) {
    BevConfig c;
    c.resolution = res;
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
      const Scene s = scene_in_ego_frame(generate_scene(seed, g));
      EXPECT_EQ(rasterize_foreground(s, c), oracle_raster(s, c)) << "seed " << seed << " res " << res;
    }
  }
  Rng rng(4);
  BevConfig c;
  c.extent = {8, 6};
  c.resolution = 1.0;
  for (int t = 0; t < 50; ++t) {
    Scene s;
    LaneSegment lane;
    lane.centerline = testing::random_polyline(rng, 4, 6.0, 1);
    lane.left_boundary = testing::random_polyline(rng, 4, 6.0, 1);
    lane.right_boundary = testing::random_polyline(rng, 4, 6.0, 1);
    s.lane_segments = {lane};
    const double x = rng.uniform(-6, 3), y = rng.uniform(-5, 2);
    s.areas = {{{{x, y}, {x + rng.uniform(1, 4), y + rng.uniform(-1, 1)}, {x + 2, y + rng.uniform(2, 4)}}, 0}};
    EXPECT_EQ(rasterize_foreground(s, c), oracle_raster(s, c)) << t;
  }
}

TEST(TrafficCode, NormalizedCornersAndWidth) {
  const auto n = normalize_bbox({0, 0, kImageWidth, kImageHeight});
  EXPECT_EQ(n[0], 0.0);
  EXPECT_EQ(n[2], 1.0);
  EXPECT_EQ(n[3], 1.0);
  Rng rng(5);
  for (int i = 0; i < 100; ++i) {
    const double x = rng.uniform(0, 1400), y = rng.uniform(0, 2300);
    const auto v = normalize_bbox({x, y, x + rng.uniform(1, 150), y + rng.uniform(1, 180)});
    for (double e : v) {
      EXPECT_GE(e, 0.0);
      EXPECT_LE(e, 1.0);
    }
  }
  EXPECT_EQ(encode_traffic_element({{10, 20, 30, 40}, 4}).size(), kTrafficElementCodeDim);
  EXPECT_EQ(kTrafficElementCodeDim, 77u);
  EXPECT_EQ(encode_endpoint({3, 4}).size(), kEndpointCodeDim);
}

TEST(TopologyLL, ShapeAndLocality) {
  Rng rng(6);
  const TopologyLL head(16, 8, rng);
  EXPECT_EQ(head(Tensor::zeros({0, 16}), {}).shape(), (Shape{0, 0}));
  const std::size_t n = 5;
  auto feats = random_values(rng, n * 16);
  std::vector<std::array<Point2, 2>> ends(n);
  for (auto& e : ends) e = {Point2{rng.uniform(-40, 40), rng.uniform(-20, 20)}, Point2{rng.uniform(-40, 40), rng.uniform(-20, 20)}};
  const Tensor a = head(Tensor::constant({n, 16}, feats), ends);
  EXPECT_EQ(a.shape(), (Shape{n, n}));
  // Perturbing lane 4 leaves pairs among lanes 0..3 untouched.
  for (std::size_t k = 0; k < 16; ++k) feats[4 * 16 + k] += 1.0;
  ends[4][0].x += 3.0;
  const Tensor b = head(Tensor::constant({n, 16}, feats), ends);
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(a.at(i, j), b.at(i, j));
  }
  EXPECT_NE(a.at(4, 0), b.at(4, 0));
}

TEST(TopologyLT, EmptyAndColumnEquivariance) {
  Rng rng(7);
  const TopologyLT head(16, 8, rng);
  const Tensor f = Tensor::constant({4, 16}, random_values(rng, 64));
  EXPECT_EQ(head(f, {}).shape(), (Shape{4, 0}));
  const std::vector<TrafficElement> els{{{10, 20, 60, 90}, 1}, {{400, 800, 450, 900}, 7}, {{900, 100, 990, 160}, 12}};
  const std::vector<TrafficElement> perm{els[2], els[0], els[1]};
  const Tensor a = head(f, els), b = head(f, perm);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(b.at(i, 0), a.at(i, 2));
    EXPECT_EQ(b.at(i, 1), a.at(i, 0));
    EXPECT_EQ(b.at(i, 2), a.at(i, 1));
  }
}

TEST(TopologyHeads, Gradients) {
  Rng rng(8);
  const TopologyLL ll(16, 8, rng);
  const TopologyLT lt(16, 8, rng);
  const Tensor f = testing::random_parameter(rng, {5, 16});
  std::vector<std::array<Point2, 2>> ends(5);
  for (auto& e : ends) e = {Point2{rng.uniform(-40, 40), rng.uniform(-20, 20)}, Point2{rng.uniform(-40, 40), rng.uniform(-20, 20)}};
  const std::vector<TrafficElement> els{{{10, 20, 60, 90}, 1}, {{400, 800, 450, 900}, 7}};
  nn::ParameterSet ps;
  ll.collect(ps, "ll.");
  lt.collect(ps, "lt.");
  std::vector<Tensor> inputs{f};
  for (const auto& [n, t] : ps.items()) inputs.push_back(t);
  Rng wr(9);
  const Tensor w1 = Tensor::constant({5, 5}, random_values(wr, 25));
  const Tensor w2 = Tensor::constant({5, 2}, random_values(wr, 10));
  const auto res = grad_check([&] { return ops::add(ops::sum(ops::mul(ll(f, ends), w1)), ops::sum(ops::mul(lt(f, els), w2))); },
                              inputs, 1e-5, 100, 3);
  EXPECT_LT(res.max_relative_error, 1e-4);
  EXPECT_GE(res.coordinates, 100u);
}

TEST(BevHeads, OutputShapesAndDeterminism) {
  const BevConfig c = small_cfg();
  Rng rng(10);
  const BevHeads heads(c, rng);
  const Tensor feat = Tensor::constant({3, c.hidden}, random_values(rng, 3 * c.hidden));
  const std::vector<TrafficElement> els{{{10, 20, 60, 90}, 1}, {{400, 800, 450, 900}, 7}};
  const HeadOutputs a = heads.forward(feat, els);
  EXPECT_EQ(a.area_points.shape(), (Shape{3, 12}));
  EXPECT_EQ(a.area_logits.shape(), (Shape{3, 3}));
  EXPECT_EQ(a.lane_points.shape(), (Shape{5, 24}));
  EXPECT_EQ(a.lane_logits.shape(), (Shape{5, 2}));
  EXPECT_EQ(a.lane_features.shape(), (Shape{5, c.hidden}));
  EXPECT_EQ(a.seg_logits.shape(), (Shape{c.cells(), 1}));
  EXPECT_EQ(a.ll_logits.shape(), (Shape{5, 5}));
  EXPECT_EQ(a.lt_logits.shape(), (Shape{5, 2}));
  const HeadOutputs b = heads.forward(feat, els);
  for (auto [x, y] : {std::pair{a.lane_points, b.lane_points}, std::pair{a.ll_logits, b.ll_logits}, std::pair{a.lt_logits, b.lt_logits}}) {
    EXPECT_EQ(std::vector<double>(x.values().begin(), x.values().end()), std::vector<double>(y.values().begin(), y.values().end()));
  }
  const auto lanes = extract_lanes(a, c);
  ASSERT_EQ(lanes.size(), 5u);
  for (const auto& l : lanes) {
    ASSERT_EQ(l.geometry.chains.size(), 3u);
    for (const auto& ch : l.geometry.chains) EXPECT_EQ(ch.size(), c.lane_points);
    EXPECT_EQ(l.feature.size(), c.hidden);
  }
  // Fusion changes the outputs; turning it off ignores the map entirely.
  const HeadOutputs off1 = heads.forward(feat, els, false);
  const HeadOutputs off2 = heads.forward(Tensor::zeros({0, c.hidden}), els, false);
  EXPECT_EQ(std::vector<double>(off1.lane_points.values().begin(), off1.lane_points.values().end()),
            std::vector<double>(off2.lane_points.values().begin(), off2.lane_points.values().end()));
  EXPECT_NE(std::vector<double>(off1.lane_points.values().begin(), off1.lane_points.values().end()),
            std::vector<double>(a.lane_points.values().begin(), a.lane_points.values().end()));
  Tape::current().clear();
}

TEST(BevHeads, LaneLaneLogitsIgnoreLaneGeometryGradient) {
  const BevConfig c = small_cfg();
  Rng rng(12);
  BevHeads heads(c, rng);
  const Tensor feat = Tensor::constant({3, c.hidden}, random_values(rng, 3 * c.hidden));
  const HeadOutputs out = heads.forward(feat, {});
  backward(ops::sum(out.ll_logits));
  // Offsets only shape lane points, which reach the lane-lane head as constants.
  const auto& offsets = heads.lane_decoder().offset_head.layers.back().weight;
  const auto g = offsets.has_grad() ? offsets.grad() : std::vector<double>(offsets.numel(), 0.0);
  EXPECT_EQ(g, std::vector<double>(offsets.numel(), 0.0));
  ASSERT_TRUE(heads.lane_decoder().queries.has_grad());
  const auto q = heads.lane_decoder().queries.grad();
  EXPECT_TRUE(std::any_of(q.begin(), q.end(), [](double v) { return v != 0.0; }));
  heads.parameters().zero_grad();
}

TEST(BevHeads, ParameterPrefixes) {
  Rng rng(11);
  const BevHeads heads(small_cfg(), rng);
  const auto ps = heads.parameters();
  for (const char* p : {"bev.", "fusion.", "area_decoder.", "lane_decoder.", "aux_head.", kTopologyPrefixLL, kTopologyPrefixLT}) {
    EXPECT_GT(ps.with_prefix(p).size(), 0u) << p;
  }
  std::size_t total = 0;
  for (const char* p : {"bev.", "fusion.", "area_decoder.", "lane_decoder.", "aux_head.", kTopologyPrefixLL, kTopologyPrefixLT}) {
    total += ps.with_prefix(p).size();
  }
  EXPECT_EQ(total, ps.size());
}

TEST(ForegroundScore, SkipsBackground) {
  const auto s = foreground_score(std::vector<double>{0.0, 2.0, 5.0});
  EXPECT_EQ(s.class_id, 1);
  EXPECT_NEAR(s.score, std::exp(2.0) / (1 + std::exp(2.0) + std::exp(5.0)), 1e-12);
}

}  // namespace
}  // namespace mapkit
