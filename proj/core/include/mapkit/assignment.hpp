#pragma once

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "mapkit/scene.hpp"
#include "mapkit/tensor.hpp"

namespace mapkit {

/// Dense row-major cost matrix; rows are predictions, columns ground truth.
struct CostMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  CostMatrix() = default;
  CostMatrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}
  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
};

struct Assignment {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;  // (prediction, ground truth), ascending prediction
  double total_cost = 0.0;

  /// gt index per prediction, -1 if unmatched.
  std::vector<int> prediction_to_gt(std::size_t n_pred) const;
};

/// Minimum-cost assignment of min(n, m) pairs. Among optimal assignments the
/// lexicographically smallest pair list is returned.
Assignment hungarian(const CostMatrix& cost);

/// Loss weights; the same weights price the matching cost.
struct CostWeights {
  double cls = 2.0;
  double pt = 5.0;
  double iou = 2.0;
  double topo = 1.0;
  double aux = 1.0;

  void validate() const;
};

/// Default half-width of the per-point overlap interval, meters.
inline constexpr double kP2PHalfWidth = 1.0;

/// Mean over aligned point pairs of max(0, 2w - d) / (2w + d), d = |a_i - b_i|.
double p2p_iou(std::span<const Point2> a, std::span<const Point2> b, double w = kP2PHalfWidth);

/// 1 - p2p_iou.
double p2p_iou_loss(std::span<const Point2> a, std::span<const Point2> b, double w = kP2PHalfWidth);

/// Differentiable P2P IoU loss over a batch of chains.
///
/// `pred` is [R, 2P] holding P interleaved (x, y) points per row in normalized
/// units; `target` has the same layout. Points are scaled by `scale` into
/// meters before measuring distance. Returns mean over rows of (1 - p2p_iou).
/// At d = 0 and at the clamp d = 2w the subgradient 0 is used.
Tensor p2p_iou_loss(const Tensor& pred, std::span<const double> target, Point2 scale, double w = kP2PHalfWidth);

/// One predicted or ground-truth instance as one or more point chains (meters).
/// Areas carry one closed chain; lane segments carry centerline, left, right.
struct InstanceGeometry {
  std::vector<std::vector<Point2>> chains;
  bool closed = false;
};

/// Mean absolute coordinate difference after dividing x by scale.x and y by scale.y.
double geometry_l1(const InstanceGeometry& a, const InstanceGeometry& b, Point2 scale);
/// P2P IoU averaged over chains.
double geometry_p2p(const InstanceGeometry& a, const InstanceGeometry& b, double w = kP2PHalfWidth);

/// Cyclic shift and orientation of the closed ring `gt` that minimizes the L1
/// distance to `pred`. Ties keep the smallest shift, forward orientation first.
std::vector<Point2> align_ring(std::span<const Point2> pred, std::span<const Point2> gt);

/// gt with closed chains aligned to pred; open chains are copied unchanged.
InstanceGeometry align_to(const InstanceGeometry& pred, const InstanceGeometry& gt);

/// cls * (1 - softmax(logits)[gt_class]) + pt * L1 + iou * (1 - p2p), with gt
/// cyclically aligned first when closed.
double match_cost(std::span<const double> class_logits, const InstanceGeometry& pred, int gt_class,
                  const InstanceGeometry& gt, const CostWeights& weights, Point2 scale, double w = kP2PHalfWidth);

std::vector<double> softmax_values(std::span<const double> logits);

}  // namespace mapkit
