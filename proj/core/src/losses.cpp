#include "mapkit/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace mapkit {

Tensor classification_loss(const Tensor& logits, std::span<const int> targets, double normalizer, FocalParams params) {
  const std::size_t rows = logits.rows();
  const std::size_t cols = logits.cols();
  if (targets.size() != rows) throw std::invalid_argument("classification_loss: one target per row required");
  if (!(normalizer > 0.0)) throw std::invalid_argument("classification_loss: normalizer must be positive");
  if (params.alpha < 0.0 || params.gamma < 0.0) throw std::invalid_argument("classification_loss: alpha and gamma must be >= 0");
  const auto z = logits.values();
  std::vector<double> grad_local(rows * cols, 0.0);
  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    const int t = targets[r];
    if (t < 0 || static_cast<std::size_t>(t) >= cols) throw std::invalid_argument("classification_loss: target out of range");
    const double* row = z.data() + r * cols;
    const double mx = *std::max_element(row, row + cols);
    double s = 0.0;
    for (std::size_t c = 0; c < cols; ++c) s += std::exp(row[c] - mx);
    const double log_p = row[t] - mx - std::log(s);
    const double p = std::exp(log_p);
    const double q = 1.0 - p;
    const double mod = params.gamma == 0.0 ? 1.0 : std::pow(q, params.gamma);
    total += -params.alpha * mod * log_p;
    // dL/dz_k = g (delta_tk - p_k), g = alpha (gamma q^(gamma-1) p log p - q^gamma)
    const double focus = (params.gamma == 0.0 || q <= 0.0) ? 0.0 : params.gamma * std::pow(q, params.gamma - 1.0) * p * log_p;
    const double g = params.alpha * (focus - mod);
    for (std::size_t c = 0; c < cols; ++c) {
      const double pc = std::exp(row[c] - mx) / s;
      grad_local[r * cols + c] = g * ((static_cast<int>(c) == t ? 1.0 : 0.0) - pc) / normalizer;
    }
  }
  return make_result("focal_loss", {1}, {total / normalizer}, {logits}, [logits, grad_local](std::span<const double> g) {
    if (!logits.requires_grad()) return;
    auto gl = logits.node()->grad_buffer();
    for (std::size_t i = 0; i < gl.size(); ++i) gl[i] += g[0] * grad_local[i];
  });
}

Tensor topology_loss(const Tensor& logits, const BoolMatrix& gt, std::span<const int> row_to_gt, std::span<const int> col_to_gt,
                     bool skip_diagonal) {
  const std::size_t n = logits.rank() == 2 ? logits.dim(0) : logits.rows();
  const std::size_t m = logits.rank() == 2 ? logits.dim(1) : logits.cols();
  if (row_to_gt.size() != n || col_to_gt.size() != m) throw std::invalid_argument("topology_loss: assignment shape mismatch");
  for (const int g : row_to_gt) {
    if (g >= static_cast<int>(gt.rows())) throw std::invalid_argument("topology_loss: row assignment outside gt");
  }
  for (const int g : col_to_gt) {
    if (g >= static_cast<int>(gt.cols())) throw std::invalid_argument("topology_loss: column assignment outside gt");
  }
  std::vector<double> target(n * m, 0.0);
  std::vector<char> keep(n * m, 1);
  std::size_t count = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      if (skip_diagonal && i == j) {
        keep[i * m + j] = 0;
        continue;
      }
      ++count;
      if (row_to_gt[i] >= 0 && col_to_gt[j] >= 0) {
        target[i * m + j] = gt(static_cast<std::size_t>(row_to_gt[i]), static_cast<std::size_t>(col_to_gt[j])) ? 1.0 : 0.0;
      }
    }
  }
  if (count == 0) return Tensor::scalar(0.0);
  const auto z = logits.values();
  const double inv = 1.0 / static_cast<double>(count);
  double total = 0.0;
  std::vector<double> grad_local(n * m, 0.0);
  for (std::size_t k = 0; k < n * m; ++k) {
    if (!keep[k]) continue;
    total += std::max(z[k], 0.0) - z[k] * target[k] + std::log1p(std::exp(-std::abs(z[k])));
    grad_local[k] = (1.0 / (1.0 + std::exp(-z[k])) - target[k]) * inv;
  }
  return make_result("topology_bce", {1}, {total * inv}, {logits}, [logits, grad_local](std::span<const double> g) {
    if (!logits.requires_grad()) return;
    auto gl = logits.node()->grad_buffer();
    for (std::size_t i = 0; i < gl.size(); ++i) gl[i] += g[0] * grad_local[i];
  });
}

std::vector<int> match_elements(std::span<const TrafficElement> inputs, std::span<const TrafficElement> truth, double min_iou) {
  std::vector<int> out(inputs.size(), -1);
  if (inputs.empty() || truth.empty()) return out;
  constexpr double kBlocked = 2.0;
  CostMatrix cost(inputs.size(), truth.size(), kBlocked);
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    for (std::size_t j = 0; j < truth.size(); ++j) {
      if (inputs[i].class_id != truth[j].class_id) continue;
      const double iou = bbox_iou(inputs[i].bbox, truth[j].bbox);
      if (iou >= min_iou) cost(i, j) = 1.0 - iou;
    }
  }
  for (const auto& [i, j] : hungarian(cost).pairs) {
    if (cost(i, j) < kBlocked) out[i] = static_cast<int>(j);
  }
  return out;
}

SceneTargets build_targets(const Scene& ego_scene, const BevConfig& cfg, std::span<const TrafficElement> lt_inputs) {
  SceneTargets t;
  for (const auto& area : ego_scene.areas) {
    InstanceGeometry g;
    g.closed = true;
    g.chains.push_back(resample_ring(area.boundary, cfg.area_points));
    t.areas.push_back(std::move(g));
    t.area_classes.push_back(area.class_id);
  }
  for (std::size_t i = 0; i < ego_scene.lane_segments.size(); ++i) {
    const auto& lane = ego_scene.lane_segments[i];
    if (lane.class_id < 0 || static_cast<std::size_t>(lane.class_id) >= cfg.lane_classes) {
      throw ValidationError("lane_segments[" + std::to_string(i) + "]: class_id " + std::to_string(lane.class_id) +
                            " exceeds the model's " + std::to_string(cfg.lane_classes) + " lane classes");
    }
    InstanceGeometry g;
    for (const Polyline* line : {&lane.centerline, &lane.left_boundary, &lane.right_boundary}) {
      g.chains.push_back(resample_polyline(*line, cfg.lane_points).points);
    }
    t.lanes.push_back(std::move(g));
    t.lane_classes.push_back(lane.class_id);
  }
  t.adj_ll = ego_scene.adj_ll;
  t.adj_lt = ego_scene.adj_lt;
  t.foreground = rasterize_foreground(ego_scene, cfg);
  t.element_to_gt = match_elements(lt_inputs, ego_scene.traffic_elements);
  return t;
}

namespace {

CostMatrix cost_matrix(const std::vector<InstancePrediction>& preds, const std::vector<InstanceGeometry>& gts,
                       const std::vector<int>& classes, const BevConfig& cfg, const CostWeights& w) {
  CostMatrix cost(preds.size(), gts.size());
  for (std::size_t p = 0; p < preds.size(); ++p) {
    for (std::size_t g = 0; g < gts.size(); ++g) {
      cost(p, g) = match_cost(preds[p].class_logits, preds[p].geometry, classes[g], gts[g], w, cfg.scale());
    }
  }
  return cost;
}

struct HeadTerms {
  Tensor cls, pt, iou;
};

HeadTerms head_terms(const Tensor& points, const Tensor& logits, const std::vector<InstancePrediction>& preds,
                     const std::vector<InstanceGeometry>& gts, const std::vector<int>& classes, const Assignment& match,
                     const BevConfig& cfg) {
  const std::size_t background = logits.cols() - 1;
  std::vector<int> cls_targets(logits.rows(), static_cast<int>(background));
  std::vector<std::size_t> rows;
  std::vector<double> target;
  for (const auto& [p, g] : match.pairs) {
    cls_targets[p] = classes[g];
    rows.push_back(p);
    const InstanceGeometry aligned = align_to(preds[p].geometry, gts[g]);
    for (const auto& chain : aligned.chains) {
      for (const auto& pt : chain) {
        target.push_back(pt.x / cfg.extent.x);
        target.push_back(pt.y / cfg.extent.y);
      }
    }
  }
  HeadTerms t;
  t.cls = classification_loss(logits, cls_targets, std::max<double>(1.0, static_cast<double>(gts.size())));
  if (rows.empty()) {
    t.pt = Tensor::scalar(0.0);
    t.iou = Tensor::scalar(0.0);
  } else {
    const Tensor matched = ops::gather_rows(points, rows);
    t.pt = ops::l1_loss(matched, target);
    t.iou = p2p_iou_loss(matched, target, cfg.scale());
  }
  return t;
}

}  // namespace

CostMatrix area_cost_matrix(const HeadOutputs& out, const SceneTargets& targets, const BevConfig& cfg, const CostWeights& w) {
  return cost_matrix(extract_areas(out, cfg), targets.areas, targets.area_classes, cfg, w);
}

CostMatrix lane_cost_matrix(const HeadOutputs& out, const SceneTargets& targets, const BevConfig& cfg, const CostWeights& w) {
  return cost_matrix(extract_lanes(out, cfg), targets.lanes, targets.lane_classes, cfg, w);
}

LossResult total_loss(const HeadOutputs& out, const SceneTargets& targets, const BevConfig& cfg, const CostWeights& weights,
                      const LossOptions& options) {
  weights.validate();
  LossResult res;
  std::vector<Tensor> terms;
  auto add_term = [&](const Tensor& t, double w, double& slot) {
    slot = w * t.item();
    if (w != 0.0) terms.push_back(ops::scale(t, w));
  };

  const auto lane_preds = extract_lanes(out, cfg);
  res.lane_match = hungarian(cost_matrix(lane_preds, targets.lanes, targets.lane_classes, cfg, weights));
  if (options.detection) {
    const auto area_preds = extract_areas(out, cfg);
    res.area_match = hungarian(cost_matrix(area_preds, targets.areas, targets.area_classes, cfg, weights));
    const HeadTerms a = head_terms(out.area_points, out.area_logits, area_preds, targets.areas, targets.area_classes,
                                   res.area_match, cfg);
    const HeadTerms l = head_terms(out.lane_points, out.lane_logits, lane_preds, targets.lanes, targets.lane_classes,
                                   res.lane_match, cfg);
    add_term(a.cls, weights.cls, res.parts.area_cls);
    add_term(a.pt, weights.pt, res.parts.area_pt);
    add_term(a.iou, weights.iou, res.parts.area_iou);
    add_term(l.cls, weights.cls, res.parts.lane_cls);
    add_term(l.pt, weights.pt, res.parts.lane_pt);
    add_term(l.iou, weights.iou, res.parts.lane_iou);
  }
  if (options.topology) {
    const auto lane_to_gt = res.lane_match.prediction_to_gt(out.lane_points.rows());
    add_term(topology_loss(out.ll_logits, targets.adj_ll, lane_to_gt, lane_to_gt, true), weights.topo, res.parts.topo_ll);
    if (out.lt_logits.numel() > 0) {
      if (targets.element_to_gt.size() != out.lt_logits.dim(1)) {
        throw std::invalid_argument("total_loss: lane-traffic columns differ from the element matching");
      }
      add_term(topology_loss(out.lt_logits, targets.adj_lt, lane_to_gt, targets.element_to_gt, false), weights.topo,
               res.parts.topo_lt);
    }
  }
  if (options.aux && weights.aux != 0.0) {
    add_term(ops::bce_with_logits(out.seg_logits, targets.foreground), weights.aux, res.parts.aux);
  }
  const auto& p = res.parts;
  res.parts.total = p.area_cls + p.area_pt + p.area_iou + p.lane_cls + p.lane_pt + p.lane_iou + p.topo_ll + p.topo_lt + p.aux;
  if (terms.empty()) {
    res.total = Tensor::scalar(0.0);
  } else {
    Tensor total = terms.front();
    for (std::size_t i = 1; i < terms.size(); ++i) total = ops::add(total, terms[i]);
    res.total = total;
  }
  return res;
}

}  // namespace mapkit
