#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

#include "mapkit/assignment.hpp"
#include "mapkit/optim.hpp"
#include "test_util.hpp"

namespace mapkit {
namespace {

// Minimum over all injections of the smaller side, summed in ascending row order.
struct Brute {
  double cost = 0.0;
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
};

Brute brute_force(const CostMatrix& c) {
  Brute best;
  best.cost = std::numeric_limits<double>::infinity();
  const bool rows_small = c.rows <= c.cols;
  const std::size_t small = rows_small ? c.rows : c.cols;
  const std::size_t big = rows_small ? c.cols : c.rows;
  std::vector<std::size_t> pick(big);
  std::iota(pick.begin(), pick.end(), std::size_t{0});
  do {
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    for (std::size_t i = 0; i < small; ++i) pairs.emplace_back(rows_small ? i : pick[i], rows_small ? pick[i] : i);
    std::sort(pairs.begin(), pairs.end());
    double total = 0.0;
    for (const auto& [r, col] : pairs) total += c(r, col);
    if (total < best.cost || (total == best.cost && pairs < best.pairs)) best = {total, pairs};
  } while (std::next_permutation(pick.begin(), pick.end()));
  if (small == 0) best.cost = 0.0;
  return best;
}

double recomputed(const CostMatrix& c, const Assignment& a) {
  double total = 0.0;
  for (const auto& [r, col] : a.pairs) total += c(r, col);
  return total;
}

TEST(Hungarian, TrivialCases) {
  CostMatrix one(1, 1, 4.5);
  const Assignment a = hungarian(one);
  ASSERT_EQ(a.pairs.size(), 1u);
  EXPECT_EQ(a.pairs[0], (std::pair<std::size_t, std::size_t>{0, 0}));
  EXPECT_EQ(a.total_cost, 4.5);

  CostMatrix diag(4, 4, 1.0);
  for (std::size_t i = 0; i < 4; ++i) diag(i, i) = 0.0;
  const Assignment d = hungarian(diag);
  EXPECT_EQ(d.total_cost, 0.0);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(d.pairs[i], (std::pair<std::size_t, std::size_t>{i, i}));

  EXPECT_TRUE(hungarian(CostMatrix(0, 3)).pairs.empty());
  EXPECT_TRUE(hungarian(CostMatrix(3, 0)).pairs.empty());
}

TEST(Hungarian, RectangularUsesMinSide) {
  CostMatrix c(2, 4);
  c.data = {5, 1, 9, 9, 2, 8, 0, 3};
  const Assignment a = hungarian(c);
  ASSERT_EQ(a.pairs.size(), 2u);
  EXPECT_EQ(a.total_cost, 1.0);
  EXPECT_EQ(a.prediction_to_gt(2), (std::vector<int>{1, 2}));
  CostMatrix t(4, 2);
  t.data = {5, 2, 1, 8, 9, 0, 9, 3};
  const Assignment b = hungarian(t);
  EXPECT_EQ(b.total_cost, 1.0);
  EXPECT_EQ(b.prediction_to_gt(4), (std::vector<int>{-1, 0, 1, -1}));
}

TEST(Hungarian, MatchesBruteForceOnRandomReals) {
  Rng rng(42);
  for (int t = 0; t < 1000; ++t) {
    CostMatrix c(rng.uniform_int(1, 6), rng.uniform_int(1, 6));
    for (auto& v : c.data) v = rng.uniform(-5.0, 10.0);
    const Assignment a = hungarian(c);
    const Brute b = brute_force(c);
    EXPECT_EQ(a.total_cost, b.cost) << "trial " << t;
    EXPECT_EQ(recomputed(c, a), a.total_cost);
    EXPECT_EQ(a.pairs.size(), std::min(c.rows, c.cols));
  }
}

TEST(Hungarian, LexicographicTieBreakOnIntegerCosts) {
  Rng rng(43);
  for (int t = 0; t < 500; ++t) {
    CostMatrix c(rng.uniform_int(1, 5), rng.uniform_int(1, 5));
    for (auto& v : c.data) v = rng.uniform_int(0, 3);
    const Assignment a = hungarian(c);
    const Brute b = brute_force(c);
    EXPECT_EQ(a.total_cost, b.cost) << "trial " << t;
    EXPECT_EQ(a.pairs, b.pairs) << "trial " << t;
  }
}

TEST(Hungarian, RejectsNonFinite) {
  CostMatrix c(2, 2, 1.0);
  c(0, 1) = std::nan("");
  EXPECT_THROW(hungarian(c), std::invalid_argument);
}

TEST(P2PIoU, Properties) {
  Rng rng(7);
  for (int t = 0; t < 500; ++t) {
    const std::size_t n = rng.uniform_int(1, 12);
    const auto a = testing::random_chain(rng, n, -5, 5);
    const auto b = testing::random_chain(rng, n, -5, 5);
    const double ab = p2p_iou(a, b), ba = p2p_iou(b, a);
    EXPECT_EQ(ab, ba);
    EXPECT_GE(ab, 0.0);
    EXPECT_LE(ab, 1.0);
    EXPECT_EQ(p2p_iou(a, a), 1.0);
    if (ab == 1.0) {
      EXPECT_EQ(a, b);
    }
    auto far = a;
    for (auto& p : far) p.x += 2.0 * kP2PHalfWidth + rng.uniform(0.0, 3.0);
    EXPECT_EQ(p2p_iou(a, far), 0.0);
    EXPECT_EQ(p2p_iou_loss(a, far), 1.0);
    EXPECT_EQ(p2p_iou_loss(a, a), 0.0);
  }
  const std::vector<Point2> p{{0, 0}}, q{{kP2PHalfWidth, 0}};
  EXPECT_DOUBLE_EQ(p2p_iou(p, q), 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(p2p_iou(std::vector<Point2>{{0, 0}}, std::vector<Point2>{{0, 0.5}}, 0.5), 1.0 / 3.0);
}

TEST(P2PIoU, TensorFormMatchesValueForm) {
  Rng rng(9);
  const Point2 scale{50, 25};
  const std::size_t rows = 3, pts = 5;
  std::vector<double> pred, target;
  double expect = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    std::vector<Point2> a, b;
    for (std::size_t k = 0; k < pts; ++k) {
      const double ax = rng.uniform(-1, 1), ay = rng.uniform(-1, 1);
      const double bx = ax + rng.uniform(-0.03, 0.03), by = ay + rng.uniform(-0.05, 0.05);
      pred.insert(pred.end(), {ax, ay});
      target.insert(target.end(), {bx, by});
      a.push_back({ax * scale.x, ay * scale.y});
      b.push_back({bx * scale.x, by * scale.y});
    }
    expect += p2p_iou_loss(a, b) / rows;
  }
  const Tensor t = Tensor::constant({rows, 2 * pts}, pred);
  EXPECT_NEAR(p2p_iou_loss(t, target, scale).item(), expect, 1e-12);
}

TEST(P2PIoU, GradientAwayFromClamp) {
  Rng rng(10);
  const Point2 scale{50, 25};
  const std::size_t rows = 4, pts = 15;
  std::vector<double> pred, target;
  for (std::size_t i = 0; i < rows * pts; ++i) {
    const double x = rng.uniform(-1, 1), y = rng.uniform(-1, 1);
    pred.insert(pred.end(), {x, y});
    // Offsets between 0.2 and 1.5 m keep every pair strictly inside (0, 2w).
    const double d = rng.uniform(0.2, 1.5), ang = rng.uniform(0, 6.283);
    target.insert(target.end(), {x + d * std::cos(ang) / scale.x, y + d * std::sin(ang) / scale.y});
  }
  const Tensor t = Tensor::parameter({rows, 2 * pts}, pred);
  const auto res = grad_check([&] { return p2p_iou_loss(t, target, scale); }, {t}, 1e-6, 120);
  EXPECT_LT(res.max_relative_error, 1e-4);
  EXPECT_GE(res.coordinates, 100u);
}

InstanceGeometry ring_geom(std::vector<Point2> pts) { return {{std::move(pts)}, true}; }

TEST(AlignRing, RecoversShiftAndOrientation) {
  const std::vector<Point2> ring{{0, 0}, {2, 0}, {2, 1}, {1, 2}, {0, 1}};
  for (std::size_t s = 0; s < ring.size(); ++s) {
    std::vector<Point2> shifted(ring.size());
    for (std::size_t i = 0; i < ring.size(); ++i) shifted[i] = ring[(i + s) % ring.size()];
    EXPECT_EQ(align_ring(ring, shifted), ring);
    std::vector<Point2> reversed(shifted.rbegin(), shifted.rend());
    EXPECT_EQ(align_ring(ring, reversed), ring);
  }
}

TEST(MatchCost, PerfectPredictionIsZero) {
  const CostWeights w;
  const InstanceGeometry g{{{{0, 0}, {1, 0}, {2, 0}}}, false};
  const std::vector<double> logits{40.0, -40.0, -40.0};
  EXPECT_NEAR(match_cost(logits, g, 0, g, w, {50, 25}), 0.0, 1e-15);
}

TEST(MatchCost, MonotoneInTranslation) {
  const CostWeights w;
  const InstanceGeometry g{{{{0, 0}, {3, 1}, {6, 0}}, {{0, 2}, {3, 3}, {6, 2}}}, false};
  const std::vector<double> logits{0.3, -0.1};
  double prev = -1.0;
  for (int k = 0; k <= 40; ++k) {
    InstanceGeometry p = g;
    for (auto& ch : p.chains) {
      for (auto& q : ch) q.x += 0.1 * k;
    }
    const double c = match_cost(logits, p, 0, g, w, {50, 25});
    EXPECT_GE(c, prev);
    prev = c;
  }
}

TEST(MatchCost, RingStartVertexIrrelevant) {
  const CostWeights w;
  const std::vector<Point2> gt{{0, 0}, {4, 0}, {4, 3}, {0, 3}};
  const auto pred = ring_geom({{0.2, -0.1}, {4.1, 0.3}, {3.8, 2.9}, {-0.2, 3.1}});
  const std::vector<double> logits{1.0, 0.0, -1.0};
  const double base = match_cost(logits, pred, 1, ring_geom(gt), w, {50, 25});
  for (std::size_t s = 1; s < 4; ++s) {
    std::vector<Point2> rot(4);
    for (std::size_t i = 0; i < 4; ++i) rot[i] = gt[(i + s) % 4];
    EXPECT_EQ(match_cost(logits, pred, 1, ring_geom(rot), w, {50, 25}), base);
  }
}

TEST(CostWeights, Validation) {
  CostWeights w;
  EXPECT_NO_THROW(w.validate());
  w.pt = -1.0;
  EXPECT_THROW(w.validate(), std::invalid_argument);
}

}  // namespace
}  // namespace mapkit
