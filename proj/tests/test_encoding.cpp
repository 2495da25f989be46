#include <gtest/gtest.h>

#include <numbers>
#include <numeric>

#include "mapkit/encoding.hpp"
#include "test_util.hpp"

namespace mapkit {
namespace {

TEST(Sincos, ZeroPoint) {
  const EncodingConfig cfg;
  const auto e = sincos_encode_point({0, 0}, cfg);
  ASSERT_EQ(e.size(), 32u);
  for (std::size_t i = 0; i < e.size(); i += 2) {
    EXPECT_EQ(e[i], 0.0);
    EXPECT_EQ(e[i + 1], 1.0);
  }
}

TEST(Sincos, HalfWavelengthFirstBand) {
  const EncodingConfig cfg;
  const auto e = sincos_encode_point({cfg.wavelength / 2, 0}, cfg);
  EXPECT_NEAR(e[0], 1.0, 1e-15);
  EXPECT_NEAR(e[1], 0.0, 1e-15);
  // y block starts after all x bands.
  EXPECT_EQ(e[2 * cfg.frequencies], 0.0);
  EXPECT_EQ(e[2 * cfg.frequencies + 1], 1.0);
}

TEST(Sincos, BandsDoubleInFrequency) {
  const EncodingConfig cfg{4, 100.0, 7};
  const double x = 13.7;
  const auto e = sincos_encode_point({x, -2.0}, cfg);
  for (int k = 0; k < 4; ++k) {
    const double phase = std::ldexp(std::numbers::pi / 100.0, k) * x;
    EXPECT_NEAR(e[2 * k], std::sin(phase), 1e-12);
    EXPECT_NEAR(e[2 * k + 1], std::cos(phase), 1e-12);
  }
}

TEST(Sincos, PeriodTwoWavelengths) {
  const EncodingConfig cfg;
  Rng rng(1);
  for (int i = 0; i < 200; ++i) {
    const Point2 p{rng.uniform(-60, 60), rng.uniform(-60, 60)};
    const auto a = sincos_encode_point(p, cfg);
    const auto b = sincos_encode_point({p.x + 2 * cfg.wavelength, p.y}, cfg);
    EXPECT_LT(testing::max_abs_diff(a, b), 1e-9);
  }
}

TEST(Onehot, Values) {
  EXPECT_EQ(onehot_class(0, 3), (std::vector<double>{1, 0, 0}));
  EXPECT_EQ(onehot_class(2, 3), (std::vector<double>{0, 0, 1}));
  EXPECT_THROW(onehot_class(3, 3), std::out_of_range);
  EXPECT_THROW(onehot_class(-1, 3), std::out_of_range);
  for (int c = 0; c < 7; ++c) {
    const auto v = onehot_class(c, 7);
    EXPECT_EQ(std::accumulate(v.begin(), v.end(), 0.0), 1.0);
  }
}

TEST(GraphVector, ShapeContract) {
  const EncodingConfig cfg;
  EXPECT_EQ(cfg.point_dim(), 39u);
  LocalView view;
  view.lines = {{{{0, 0}, {10, 0}}, 0}, {{{0, 1}, {0, 5}, {3, 5}}, 3}, {{{-4, -4}, {4, 4}}, 6}};
  const GraphVector gv = build_graph_vector(view, cfg);
  EXPECT_EQ(gv.lines, 3u);
  EXPECT_EQ(gv.points, 11u);
  EXPECT_EQ(gv.dim, 39u);
  EXPECT_EQ(gv.data.size(), 3u * 11u * 39u);

  const GraphVector empty = build_graph_vector(LocalView{}, cfg);
  EXPECT_EQ(empty.lines, 0u);
  EXPECT_EQ(empty.points, 11u);
  EXPECT_EQ(empty.dim, 39u);
  EXPECT_TRUE(empty.data.empty());
}

TEST(GraphVector, RowIsComposition) {
  const EncodingConfig cfg;
  const Polyline line{{{2, 3}, {7, -1}, {9, 9}}, 5};
  const GraphVector gv = build_graph_vector(LocalView{{line}, {}}, cfg);
  const Polyline r = resample_polyline(line, 11);
  std::vector<double> expect;
  for (const auto& p : r.points) {
    const auto s = sincos_encode_point(p, cfg);
    const auto o = onehot_class(5, 7);
    expect.insert(expect.end(), s.begin(), s.end());
    expect.insert(expect.end(), o.begin(), o.end());
  }
  EXPECT_EQ(std::vector<double>(gv.data.begin(), gv.data.end()), expect);
}

TEST(GraphVector, ResampleWorkedExamples) {
  const Polyline straight{{{0, 0}, {10, 0}}, 0};
  const Polyline r = resample_polyline(straight, 11);
  for (std::size_t i = 0; i < 11; ++i) {
    EXPECT_NEAR(r.points[i].x, static_cast<double>(i), 1e-12);
    EXPECT_EQ(r.points[i].y, 0.0);
  }
  const Polyline two = resample_polyline(Polyline{{{1, 1}, {2, 5}, {3, 3}}, 0}, 2);
  EXPECT_EQ(two.points, (std::vector<Point2>{{1, 1}, {3, 3}}));
  const Polyline l = resample_polyline(Polyline{{{0, 0}, {4, 0}, {4, 4}}, 0}, 5);
  const std::vector<Point2> expect{{0, 0}, {2, 0}, {4, 0}, {4, 2}, {4, 4}};
  for (std::size_t i = 0; i < 5; ++i) {
    EXPECT_NEAR(l.points[i].x, expect[i].x, 1e-12);
    EXPECT_NEAR(l.points[i].y, expect[i].y, 1e-12);
  }
}

TEST(GraphVector, RandomizedShapes) {
  Rng rng(99);
  const EncodingConfig cfg;
  for (int t = 0; t < 100; ++t) {
    LocalView v;
    const int n = rng.uniform_int(0, 40);
    for (int i = 0; i < n; ++i) v.lines.push_back(testing::random_polyline(rng, rng.uniform_int(2, 6), 30.0, 7));
    const GraphVector gv = build_graph_vector(v, cfg);
    EXPECT_EQ(gv.lines, static_cast<std::size_t>(n));
    EXPECT_EQ(gv.data.size(), static_cast<std::size_t>(n) * 11u * 39u);
  }
}

}  // namespace
}  // namespace mapkit
