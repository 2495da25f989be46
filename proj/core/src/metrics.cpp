#include "mapkit/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <stdexcept>

#include "mapkit/losses.hpp"

namespace mapkit {

double frechet_distance(std::span<const Point2> a, std::span<const Point2> b) {
  if (a.empty() || b.empty()) throw std::invalid_argument("frechet_distance: empty polyline");
  const std::size_t n = a.size(), m = b.size();
  std::vector<double> ca(n * m);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      const double d = distance(a[i], b[j]);
      double prev;
      if (i == 0 && j == 0) {
        prev = 0.0;
      } else if (i == 0) {
        prev = ca[j - 1];
      } else if (j == 0) {
        prev = ca[(i - 1) * m];
      } else {
        prev = std::min({ca[(i - 1) * m + j], ca[(i - 1) * m + j - 1], ca[i * m + j - 1]});
      }
      ca[i * m + j] = std::max(prev, d);
    }
  }
  return ca.back();
}

double chamfer_distance(std::span<const Point2> a, std::span<const Point2> b) {
  if (a.empty() || b.empty()) throw std::invalid_argument("chamfer_distance: empty point set");
  auto directed = [](std::span<const Point2> from, std::span<const Point2> to) {
    double total = 0.0;
    for (const auto& p : from) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& q : to) best = std::min(best, distance(p, q));
      total += best;
    }
    return total / static_cast<double>(from.size());
  };
  return 0.5 * (directed(a, b) + directed(b, a));
}

double average_precision(std::span<const char> tp, std::size_t n_gt) {
  if (n_gt == 0) return 0.0;
  const std::size_t n = tp.size();
  std::vector<double> precision(n);
  std::size_t hits = 0;
  for (std::size_t k = 0; k < n; ++k) {
    hits += tp[k] ? 1 : 0;
    precision[k] = static_cast<double>(hits) / static_cast<double>(k + 1);
  }
  // Envelope: precision at rank k becomes the best precision at any rank >= k.
  for (std::size_t k = n; k-- > 1;) precision[k - 1] = std::max(precision[k - 1], precision[k]);
  double total = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    if (tp[k]) total += precision[k];
  }
  return total / static_cast<double>(n_gt);
}

namespace {

std::vector<std::size_t> ranked(std::span<const DetEntry> preds) {
  std::vector<std::size_t> order(preds.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return preds[x].score > preds[y].score; });
  return order;
}

}  // namespace

double det_score(std::span<const DetEntry> preds, std::span<const DetEntry> gts, const DistanceFn& distance_fn,
                 std::span<const double> thresholds) {
  if (thresholds.empty()) throw std::invalid_argument("det_score: thresholds must be nonempty");
  for (std::size_t i = 1; i < thresholds.size(); ++i) {
    if (!(thresholds[i] > thresholds[i - 1])) throw std::invalid_argument("det_score: thresholds must be ascending");
  }
  std::set<int> classes;
  for (const auto& g : gts) classes.insert(g.class_id);
  if (classes.empty()) return 0.0;

  const auto order = ranked(preds);
  // Distances depend only on the pair, so compute them once per (pred, candidate gt).
  std::vector<std::vector<std::pair<std::size_t, double>>> candidates(preds.size());
  for (std::size_t p = 0; p < preds.size(); ++p) {
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (gts[g].scene == preds[p].scene && gts[g].class_id == preds[p].class_id) {
        candidates[p].emplace_back(g, distance_fn(preds[p], gts[g]));
      }
    }
  }
  double total = 0.0;
  for (const double tau : thresholds) {
    double class_total = 0.0;
    for (const int c : classes) {
      std::vector<char> taken(gts.size(), 0);
      std::vector<char> tp;
      std::size_t n_gt = 0;
      for (const auto& g : gts) n_gt += g.class_id == c ? 1 : 0;
      for (const std::size_t p : order) {
        if (preds[p].class_id != c) continue;
        std::size_t best = gts.size();
        double best_d = std::numeric_limits<double>::infinity();
        for (const auto& [g, d] : candidates[p]) {
          if (!taken[g] && d <= tau && d < best_d) {
            best = g;
            best_d = d;
          }
        }
        if (best < gts.size()) taken[best] = 1;
        tp.push_back(best < gts.size() ? 1 : 0);
      }
      class_total += average_precision(tp, n_gt);
    }
    total += class_total / static_cast<double>(classes.size());
  }
  return total / static_cast<double>(thresholds.size());
}

double det_t_score(std::span<const DetEntry> preds, std::span<const BBox> pred_boxes, std::span<const DetEntry> gts,
                   std::span<const BBox> gt_boxes, double iou_threshold) {
  // Negated IoU acts as the distance so the threshold test is exact.
  const double thresholds[1] = {-iou_threshold};
  return det_score(
      preds, gts,
      [&](const DetEntry& p, const DetEntry& g) { return -bbox_iou(pred_boxes[p.index], gt_boxes[g.index]); },
      thresholds);
}

void TopAccumulator::add(std::span<const double> prob, std::size_t n, std::size_t m, const BoolMatrix& gt,
                         std::span<const int> row_to_gt, std::span<const int> col_to_gt, bool skip_diagonal) {
  if (prob.size() != n * m || row_to_gt.size() != n || col_to_gt.size() != m) {
    throw std::invalid_argument("top_score: shape mismatch");
  }
  for (const int g : row_to_gt) {
    if (g >= static_cast<int>(gt.rows())) throw std::invalid_argument("top_score: row matching outside gt");
  }
  for (const int g : col_to_gt) {
    if (g >= static_cast<int>(gt.cols())) throw std::invalid_argument("top_score: column matching outside gt");
  }
  for (std::size_t r = 0; r < gt.rows(); ++r) {
    for (std::size_t c = 0; c < gt.cols(); ++c) {
      if (gt(r, c) && !(skip_diagonal && r == c)) ++gt_edges_;
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      if (skip_diagonal && i == j) continue;
      const bool label = row_to_gt[i] >= 0 && col_to_gt[j] >= 0 &&
                         gt(static_cast<std::size_t>(row_to_gt[i]), static_cast<std::size_t>(col_to_gt[j]));
      pairs_.emplace_back(prob[i * m + j], label ? 1 : 0);
    }
  }
}

double TopAccumulator::score() const {
  if (gt_edges_ == 0) return 0.0;
  std::vector<std::size_t> order(pairs_.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return pairs_[x].first > pairs_[y].first; });
  std::vector<char> tp;
  tp.reserve(order.size());
  for (const auto k : order) tp.push_back(pairs_[k].second);
  return average_precision(tp, gt_edges_);
}

double top_score(std::span<const double> prob, std::size_t n, std::size_t m, const BoolMatrix& gt,
                 std::span<const int> row_to_gt, std::span<const int> col_to_gt, bool skip_diagonal) {
  TopAccumulator acc;
  acc.add(prob, n, m, gt, row_to_gt, col_to_gt, skip_diagonal);
  return acc.score();
}

double olus(double det_l, double det_a, double det_t, double top_ll, double top_lt) {
  for (const double v : {det_l, det_a, det_t, top_ll, top_lt}) {
    if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument("olus: inputs must lie in [0, 1]");
  }
  return (det_l + det_a + det_t + std::sqrt(top_ll) + std::sqrt(top_lt)) / 5.0;
}

MetricReport MetricReport::from_parts(double det_l, double det_a, double det_t, double top_ll, double top_lt) {
  return {det_l, det_a, det_t, top_ll, top_lt, mapkit::olus(det_l, det_a, det_t, top_ll, top_lt)};
}

std::string MetricReport::csv_row() const {
  char buf[128];
  std::snprintf(buf, sizeof buf, "%.4f,%.4f,%.4f,%.4f,%.4f,%.4f", det_l, det_a, det_t, top_ll, top_lt, olus);
  return buf;
}

double lane_distance(const InstanceGeometry& a, const InstanceGeometry& b) {
  if (a.chains.size() != b.chains.size() || a.chains.empty()) throw std::invalid_argument("lane_distance: chain counts differ");
  double total = 0.0;
  for (std::size_t c = 0; c < a.chains.size(); ++c) total += frechet_distance(a.chains[c], b.chains[c]);
  return total / static_cast<double>(a.chains.size());
}

double area_distance(const InstanceGeometry& a, const InstanceGeometry& b) {
  if (a.chains.size() != 1 || b.chains.size() != 1) throw std::invalid_argument("area_distance: expected one ring each");
  return chamfer_distance(a.chains[0], b.chains[0]);
}

EvalTruth eval_truth(const Scene& ego_scene, const EvalConfig& cfg) {
  EvalTruth t;
  for (const auto& area : ego_scene.areas) {
    ScoredInstance s;
    s.geometry.closed = true;
    s.geometry.chains.push_back(resample_ring(area.boundary, cfg.area_points));
    s.class_id = area.class_id;
    t.areas.push_back(std::move(s));
  }
  for (const auto& lane : ego_scene.lane_segments) {
    ScoredInstance s;
    for (const Polyline* line : {&lane.centerline, &lane.left_boundary, &lane.right_boundary}) {
      s.geometry.chains.push_back(resample_polyline(*line, cfg.lane_points).points);
    }
    s.class_id = lane.class_id;
    t.lanes.push_back(std::move(s));
  }
  return t;
}

ScenePrediction oracle_prediction(const Scene& ego_scene, const EvalConfig& cfg) {
  EvalTruth t = eval_truth(ego_scene, cfg);
  ScenePrediction p;
  p.areas = std::move(t.areas);
  p.lanes = std::move(t.lanes);
  p.elements = perfect_detections(ego_scene.traffic_elements);
  const std::size_t n = p.lanes.size(), m = p.elements.size();
  p.ll_prob.assign(n * n, 0.0);
  p.lt_prob.assign(n * m, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) p.ll_prob[i * n + j] = ego_scene.adj_ll(i, j) ? 1.0 : 0.0;
    for (std::size_t j = 0; j < m; ++j) p.lt_prob[i * m + j] = ego_scene.adj_lt(i, j) ? 1.0 : 0.0;
  }
  return p;
}

std::vector<int> match_lanes_for_topology(std::span<const ScoredInstance> preds, std::span<const ScoredInstance> truth,
                                          double max_distance) {
  std::vector<int> out(preds.size(), -1);
  if (preds.empty() || truth.empty()) return out;
  const double blocked = max_distance + 1.0;
  CostMatrix cost(preds.size(), truth.size(), blocked);
  for (std::size_t i = 0; i < preds.size(); ++i) {
    for (std::size_t j = 0; j < truth.size(); ++j) {
      const double d = lane_distance(preds[i].geometry, truth[j].geometry);
      if (d <= max_distance) cost(i, j) = d;
    }
  }
  for (const auto& [i, j] : hungarian(cost).pairs) {
    if (cost(i, j) <= max_distance) out[i] = static_cast<int>(j);
  }
  return out;
}

MetricReport evaluate(std::span<const Scene> ego_scenes, std::span<const ScenePrediction> predictions, const EvalConfig& cfg) {
  if (ego_scenes.size() != predictions.size()) {
    throw std::invalid_argument("evaluate: " + std::to_string(ego_scenes.size()) + " scenes but " +
                                std::to_string(predictions.size()) + " predictions");
  }
  std::vector<const InstanceGeometry*> lane_pred_geo, lane_gt_geo, area_pred_geo, area_gt_geo;
  std::vector<DetEntry> lane_preds, lane_gts, area_preds, area_gts, el_preds, el_gts;
  std::vector<BBox> el_pred_boxes, el_gt_boxes;
  std::vector<EvalTruth> truths;
  truths.reserve(ego_scenes.size());
  TopAccumulator top_ll, top_lt;

  for (std::size_t s = 0; s < ego_scenes.size(); ++s) {
    const Scene& scene = ego_scenes[s];
    const ScenePrediction& pred = predictions[s];
    truths.push_back(eval_truth(scene, cfg));
    const EvalTruth& truth = truths.back();
    const std::size_t n = pred.lanes.size(), m = pred.elements.size();
    if (pred.ll_prob.size() != n * n || pred.lt_prob.size() != n * m) {
      throw std::invalid_argument("evaluate: topology shape mismatch in scene " + std::to_string(s));
    }
    for (const auto& l : pred.lanes) {
      lane_preds.push_back({s, lane_pred_geo.size(), l.class_id, l.score});
      lane_pred_geo.push_back(&l.geometry);
    }
    for (const auto& l : truth.lanes) {
      lane_gts.push_back({s, lane_gt_geo.size(), l.class_id, 1.0});
      lane_gt_geo.push_back(&l.geometry);
    }
    for (const auto& a : pred.areas) {
      area_preds.push_back({s, area_pred_geo.size(), a.class_id, a.score});
      area_pred_geo.push_back(&a.geometry);
    }
    for (const auto& a : truth.areas) {
      area_gts.push_back({s, area_gt_geo.size(), a.class_id, 1.0});
      area_gt_geo.push_back(&a.geometry);
    }
    for (const auto& d : pred.elements) {
      el_preds.push_back({s, el_pred_boxes.size(), d.element.class_id, d.score});
      el_pred_boxes.push_back(d.element.bbox);
    }
    for (const auto& e : scene.traffic_elements) {
      el_gts.push_back({s, el_gt_boxes.size(), e.class_id, 1.0});
      el_gt_boxes.push_back(e.bbox);
    }

    const auto row_to_gt = match_lanes_for_topology(pred.lanes, truth.lanes, cfg.top_match_distance);
    top_ll.add(pred.ll_prob, n, n, scene.adj_ll, row_to_gt, row_to_gt, true);
    const auto elements = elements_of(pred.elements);
    const auto col_to_gt = match_elements(elements, scene.traffic_elements, cfg.element_iou);
    top_lt.add(pred.lt_prob, n, m, scene.adj_lt, row_to_gt, col_to_gt, false);
  }

  const double det_l = det_score(
      lane_preds, lane_gts,
      [&](const DetEntry& p, const DetEntry& g) { return lane_distance(*lane_pred_geo[p.index], *lane_gt_geo[g.index]); },
      cfg.lane_thresholds);
  const double det_a = det_score(
      area_preds, area_gts,
      [&](const DetEntry& p, const DetEntry& g) { return area_distance(*area_pred_geo[p.index], *area_gt_geo[g.index]); },
      cfg.area_thresholds);
  const double det_t = det_t_score(el_preds, el_pred_boxes, el_gts, el_gt_boxes, cfg.element_iou);
  return MetricReport::from_parts(det_l, det_a, det_t, top_ll.score(), top_lt.score());
}

}  // namespace mapkit
