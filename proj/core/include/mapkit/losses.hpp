#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "mapkit/assignment.hpp"
#include "mapkit/bev_heads.hpp"
#include "mapkit/scene.hpp"
#include "mapkit/tensor.hpp"

namespace mapkit {

struct FocalParams {
  double alpha = 0.25;
  double gamma = 2.0;
};

/// Sum over rows of -alpha (1 - p_t)^gamma log p_t with p = softmax(row),
/// divided by `normalizer`. targets[r] indexes a column of `logits`.
Tensor classification_loss(const Tensor& logits, std::span<const int> targets, double normalizer = 1.0,
                           FocalParams params = {});

/// Mean binary cross-entropy over the logits of an N x M pair matrix.
/// Row r stands for gt row row_to_gt[r] and column c for gt column col_to_gt[c]
/// (-1 when unmatched); a pair's target is the gt entry when both sides are
/// matched and 0 otherwise. With `skip_diagonal` the (i, i) pairs are left out.
/// Returns a constant 0 when no pair remains.
Tensor topology_loss(const Tensor& logits, const BoolMatrix& gt, std::span<const int> row_to_gt,
                     std::span<const int> col_to_gt, bool skip_diagonal);

/// Ground truth for one scene in the model's output conventions (ego frame, meters).
struct SceneTargets {
  std::vector<InstanceGeometry> areas;  // one ring of N_a points each
  std::vector<int> area_classes;
  std::vector<InstanceGeometry> lanes;  // centerline, left, right with N_s points each
  std::vector<int> lane_classes;
  BoolMatrix adj_ll;
  BoolMatrix adj_lt;                    // lanes x gt traffic elements
  std::vector<double> foreground;       // H W cells
  std::vector<int> element_to_gt;       // per lane-traffic input column, gt element or -1
};

/// `ego_scene` must be in the ego frame. `lt_inputs` are the boxes fed to the
/// lane-traffic head; each is paired to a gt element by IoU matching.
SceneTargets build_targets(const Scene& ego_scene, const BevConfig& cfg, std::span<const TrafficElement> lt_inputs);

/// One-to-one pairing of boxes to gt elements: Hungarian on 1 - IoU restricted
/// to pairs of the same class with IoU >= `min_iou`. Returns the gt index per input or -1.
std::vector<int> match_elements(std::span<const TrafficElement> inputs, std::span<const TrafficElement> truth,
                                double min_iou = 0.5);

/// Cost matrices used for matching, predictions x gt.
CostMatrix area_cost_matrix(const HeadOutputs& out, const SceneTargets& targets, const BevConfig& cfg, const CostWeights& w);
CostMatrix lane_cost_matrix(const HeadOutputs& out, const SceneTargets& targets, const BevConfig& cfg, const CostWeights& w);

/// Weighted components; `total` is their sum.
struct LossBreakdown {
  double area_cls = 0.0;
  double area_pt = 0.0;
  double area_iou = 0.0;
  double lane_cls = 0.0;
  double lane_pt = 0.0;
  double lane_iou = 0.0;
  double topo_ll = 0.0;
  double topo_lt = 0.0;
  double aux = 0.0;
  double total = 0.0;
};

struct LossResult {
  Tensor total;
  LossBreakdown parts;
  Assignment area_match;
  Assignment lane_match;
};

struct LossOptions {
  bool detection = true;  // area and lane terms
  bool topology = true;
  bool aux = true;
};

/// Hungarian matching per head with match_cost, then
/// cls * focal + pt * L1 + iou * (1 - P2P IoU) per head, topo * (ll + lt) and aux * BCE.
LossResult total_loss(const HeadOutputs& out, const SceneTargets& targets, const BevConfig& cfg, const CostWeights& weights,
                      const LossOptions& options = {});

}  // namespace mapkit
