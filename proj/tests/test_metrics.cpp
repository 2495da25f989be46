#include <gtest/gtest.h>

#include <functional>

#include "mapkit/metrics.hpp"
#include "mapkit/scenegen.hpp"
#include "test_util.hpp"

namespace mapkit {
namespace {

using testing::random_chain;

// Coupling distance by plain recursion over the three predecessor moves.
double recursive_frechet(std::span<const Point2> a, std::span<const Point2> b, std::size_t i, std::size_t j) {
  const double d = distance(a[i], b[j]);
  if (i == 0 && j == 0) return d;
  if (i == 0) return std::max(d, recursive_frechet(a, b, 0, j - 1));
  if (j == 0) return std::max(d, recursive_frechet(a, b, i - 1, 0));
  const double prev = std::min({recursive_frechet(a, b, i - 1, j), recursive_frechet(a, b, i - 1, j - 1),
                                recursive_frechet(a, b, i, j - 1)});
  return std::max(d, prev);
}

TEST(Frechet, MatchesRecursiveDefinition) {
  Rng rng(1);
  for (int t = 0; t < 200; ++t) {
    const auto a = random_chain(rng, rng.uniform_int(1, 8), -10, 10);
    const auto b = random_chain(rng, rng.uniform_int(1, 8), -10, 10);
    EXPECT_EQ(frechet_distance(a, b), recursive_frechet(a, b, a.size() - 1, b.size() - 1)) << t;
  }
}

TEST(Frechet, SimpleCases) {
  const std::vector<Point2> a{{0, 0}, {1, 0}, {2, 0}};
  EXPECT_EQ(frechet_distance(a, a), 0.0);
  const std::vector<Point2> b{{0, 1.5}, {1, 1.5}, {2, 1.5}};
  EXPECT_DOUBLE_EQ(frechet_distance(a, b), 1.5);
}

TEST(Chamfer, MatchesQuadraticLoop) {
  Rng rng(2);
  for (int t = 0; t < 200; ++t) {
    const auto a = random_chain(rng, rng.uniform_int(1, 12), -10, 10);
    const auto b = random_chain(rng, rng.uniform_int(1, 12), -10, 10);
    auto directed = [](const std::vector<Point2>& x, const std::vector<Point2>& y) {
      double acc = 0.0;
      for (const auto& p : x) {
        double best = 1e300;
        for (const auto& q : y) best = std::min(best, distance(p, q));
        acc += best;
      }
      return acc / static_cast<double>(x.size());
    };
    EXPECT_NEAR(chamfer_distance(a, b), 0.5 * (directed(a, b) + directed(b, a)), 1e-12);
  }
  const std::vector<Point2> p{{1, 2}}, q{{4, 6}};
  EXPECT_DOUBLE_EQ(chamfer_distance(p, q), 5.0);
  EXPECT_EQ(chamfer_distance(p, p), 0.0);
}

TEST(AveragePrecision, HandWorkedCurve) {
  // Ranked outcomes TP, FP, TP against 2 gt: precisions 1, 1/2, 2/3; envelope 1, 2/3, 2/3.
  const std::vector<char> tp{1, 0, 1};
  EXPECT_DOUBLE_EQ(average_precision(tp, 2), (1.0 + 2.0 / 3.0) / 2.0);
  EXPECT_EQ(average_precision(std::vector<char>{1, 1}, 2), 1.0);
  EXPECT_EQ(average_precision(std::vector<char>{}, 3), 0.0);
  EXPECT_EQ(average_precision(std::vector<char>{1}, 0), 0.0);
  // Misses lower recall: one TP of 3 gt.
  EXPECT_DOUBLE_EQ(average_precision(std::vector<char>{0, 1}, 3), 0.5 / 3.0);
}

TEST(DetScore, ThreePredictionsTwoTruths) {
  // Points on a line; distance is |x_p - x_g|.
  const std::vector<double> px{0.1, 5.0, 10.2};
  const std::vector<double> gx{0.0, 10.0};
  const std::vector<DetEntry> preds{{0, 0, 0, 0.9}, {0, 1, 0, 0.8}, {0, 2, 0, 0.7}};
  const std::vector<DetEntry> gts{{0, 0, 0, 1.0}, {0, 1, 0, 1.0}};
  const DistanceFn d = [&](const DetEntry& p, const DetEntry& g) { return std::abs(px[p.index] - gx[g.index]); };
  const std::vector<double> tau{1.0};
  EXPECT_DOUBLE_EQ(det_score(preds, gts, d, tau), 5.0 / 6.0);
  // Tight threshold: only the first prediction hits.
  const std::vector<double> tight{0.15};
  EXPECT_DOUBLE_EQ(det_score(preds, gts, d, tight), 0.5);
  const std::vector<double> both{0.15, 1.0};
  EXPECT_DOUBLE_EQ(det_score(preds, gts, d, both), (0.5 + 5.0 / 6.0) / 2.0);
}

TEST(DetScore, PerfectAndEmpty) {
  const std::vector<DetEntry> gts{{0, 0, 0, 1}, {0, 1, 1, 1}, {1, 2, 0, 1}};
  const DistanceFn zero = [](const DetEntry& p, const DetEntry& g) { return p.index == g.index ? 0.0 : 9.0; };
  const std::vector<double> tau{0.5, 1.0};
  EXPECT_EQ(det_score(gts, gts, zero, tau), 1.0);
  EXPECT_EQ(det_score({}, gts, zero, tau), 0.0);
  // Scene boundaries are respected: a prediction in scene 1 cannot take a scene-0 gt.
  const std::vector<DetEntry> wrong_scene{{1, 0, 0, 1}};
  const std::vector<DetEntry> one_gt{{0, 0, 0, 1}};
  EXPECT_EQ(det_score(wrong_scene, one_gt, zero, tau), 0.0);
}

TEST(DetT, BoxCases) {
  const std::vector<BBox> g{{0, 0, 2, 2}};
  const std::vector<DetEntry> ge{{0, 0, 0, 1}};
  const std::vector<DetEntry> pe{{0, 0, 0, 0.9}};
  EXPECT_EQ(det_t_score(pe, g, ge, g), 1.0);
  const std::vector<BBox> disjoint{{10, 10, 12, 12}};
  EXPECT_EQ(det_t_score(pe, disjoint, ge, g), 0.0);
  const std::vector<BBox> shifted{{1, 1, 3, 3}};  // IoU 1/7
  EXPECT_DOUBLE_EQ(bbox_iou(shifted[0], g[0]), 1.0 / 7.0);
  EXPECT_EQ(det_t_score(pe, shifted, ge, g), 0.0);
}

TEST(Top, PerfectEmptyAndHandCase) {
  BoolMatrix gt(3, 3);
  gt.set(0, 1, true);
  gt.set(1, 2, true);
  const std::vector<int> ident{0, 1, 2};
  std::vector<double> perfect(9, 0.0);
  perfect[1] = perfect[5] = 1.0;
  EXPECT_EQ(top_score(perfect, 3, 3, gt, ident, ident, true), 1.0);
  const std::vector<int> none{-1, -1, -1};
  EXPECT_EQ(top_score(perfect, 3, 3, gt, none, none, true), 0.0);

  // One wrong edge ranked between the two right ones: TP, FP, TP over 2 gt edges.
  std::vector<double> p(9, 0.1);
  p[0 * 3 + 1] = 0.9;
  p[0 * 3 + 2] = 0.8;
  p[1 * 3 + 2] = 0.6;
  EXPECT_DOUBLE_EQ(top_score(p, 3, 3, gt, ident, ident, true), 5.0 / 6.0);
}

TEST(Top, NoGroundTruthEdgesScoresZero) {
  BoolMatrix gt(2, 2);
  const std::vector<int> ident{0, 1};
  const std::vector<double> p{0.0, 0.5, 0.5, 0.0};
  EXPECT_EQ(top_score(p, 2, 2, gt, ident, ident, true), 0.0);
}

TEST(Top, AccumulatorPoolsScenes) {
  BoolMatrix gt(1, 1);
  gt.set(0, 0, true);
  const std::vector<int> ident{0};
  TopAccumulator acc;
  acc.add(std::vector<double>{0.9}, 1, 1, gt, ident, ident, false);
  acc.add(std::vector<double>{0.2}, 1, 1, BoolMatrix(1, 1), ident, ident, false);
  acc.add(std::vector<double>{0.1}, 1, 1, gt, ident, ident, false);
  EXPECT_EQ(acc.gt_edges(), 2u);
  EXPECT_DOUBLE_EQ(acc.score(), (1.0 + 2.0 / 3.0) / 2.0);
}

TEST(Olus, TableRowsAndRange) {
  EXPECT_NEAR(olus(0.29, 0.20, 0.36, 0.26, 0.21), 0.3636, 1e-4);
  EXPECT_NEAR(olus(0.39, 0.40, 0.80, 0.38, 0.48), 0.5798, 1e-4);
  EXPECT_EQ(olus(1, 1, 1, 1, 1), 1.0);
  EXPECT_THROW(olus(1.1, 0, 0, 0, 0), std::invalid_argument);
  EXPECT_THROW(olus(0, 0, 0, -0.1, 0), std::invalid_argument);
  EXPECT_THROW(olus(0, 0, 0, 0, std::nan("")), std::invalid_argument);
}

TEST(MetricReport, OlusConsistentWithFields) {
  Rng rng(3);
  for (int i = 0; i < 200; ++i) {
    const auto r = MetricReport::from_parts(rng.uniform(), rng.uniform(), rng.uniform(), rng.uniform(), rng.uniform());
    EXPECT_EQ(r.olus, olus(r.det_l, r.det_a, r.det_t, r.top_ll, r.top_lt));
  }
  EXPECT_EQ(MetricReport::csv_header(), "det_l,det_a,det_t,top_ll,top_lt,olus");
  EXPECT_EQ(MetricReport::from_parts(1, 0.5, 0.25, 0, 1).csv_row(), "1.0000,0.5000,0.2500,0.0000,1.0000,0.5500");
}

std::vector<Scene> ego_corpus(std::size_t n, std::uint64_t seed) {
  GenConfig cfg;
  std::vector<Scene> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(scene_in_ego_frame(generate_scene(derive_seed(seed, i), cfg)));
  return out;
}

TEST(Evaluate, OracleIsPerfect) {
  const auto scenes = ego_corpus(20, 5);
  const EvalConfig cfg;
  std::vector<ScenePrediction> preds;
  for (const auto& s : scenes) preds.push_back(oracle_prediction(s, cfg));
  const MetricReport r = evaluate(scenes, preds, cfg);
  EXPECT_EQ(r.det_l, 1.0);
  EXPECT_EQ(r.det_a, 1.0);
  EXPECT_EQ(r.det_t, 1.0);
  EXPECT_EQ(r.top_ll, 1.0);
  EXPECT_EQ(r.top_lt, 1.0);
  EXPECT_EQ(r.olus, 1.0);
}

TEST(Evaluate, EmptyPredictionsScoreZero) {
  const auto scenes = ego_corpus(10, 6);
  std::vector<ScenePrediction> preds(scenes.size());
  const MetricReport r = evaluate(scenes, preds);
  EXPECT_EQ(r.det_l, 0.0);
  EXPECT_EQ(r.det_a, 0.0);
  EXPECT_EQ(r.det_t, 0.0);
  EXPECT_EQ(r.olus, 0.0);
}

TEST(Evaluate, ShiftedLanesLoseTightThresholdsFirst) {
  const auto scenes = ego_corpus(10, 7);
  const EvalConfig cfg;
  std::vector<ScenePrediction> preds;
  for (const auto& s : scenes) {
    auto p = oracle_prediction(s, cfg);
    for (auto& l : p.lanes) {
      for (auto& ch : l.geometry.chains) {
        for (auto& q : ch) q.y += 1.5;
      }
    }
    preds.push_back(std::move(p));
  }
  const MetricReport r = evaluate(scenes, preds, cfg);
  // A 1.5 m offset passes the 2 m and 3 m thresholds only.
  EXPECT_NEAR(r.det_l, 2.0 / 3.0, 1e-12);
  EXPECT_EQ(r.det_a, 1.0);
}

TEST(Evaluate, RejectsMismatchedInputs) {
  const auto scenes = ego_corpus(2, 8);
  std::vector<ScenePrediction> preds(1);
  EXPECT_THROW(evaluate(scenes, preds), std::invalid_argument);
}

TEST(TopMatching, DistanceCap) {
  ScoredInstance a{{{{{0, 0}, {5, 0}}, {{0, 1}, {5, 1}}, {{0, -1}, {5, -1}}}, false}, 0, 1.0};
  ScoredInstance far = a;
  for (auto& ch : far.geometry.chains) {
    for (auto& p : ch) p.y += 4.0;
  }
  const std::vector<ScoredInstance> truth{a};
  EXPECT_EQ(match_lanes_for_topology(std::vector<ScoredInstance>{a}, truth, 3.0), std::vector<int>{0});
  EXPECT_EQ(match_lanes_for_topology(std::vector<ScoredInstance>{far}, truth, 3.0), std::vector<int>{-1});
}

}  // namespace
}  // namespace mapkit
