#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "mapkit/assignment.hpp"
#include "mapkit/detections.hpp"
#include "mapkit/scene.hpp"

namespace mapkit {

/// Discrete Fréchet distance (coupling DP over point pairs).
double frechet_distance(std::span<const Point2> a, std::span<const Point2> b);
/// (mean over a of nearest b + mean over b of nearest a) / 2.
double chamfer_distance(std::span<const Point2> a, std::span<const Point2> b);

/// One scored prediction or one ground-truth item for AP accumulation.
/// `index` points back into caller-owned geometry; `scene` keeps matches
/// within a frame.
struct DetEntry {
  std::size_t scene = 0;
  std::size_t index = 0;
  int class_id = 0;
  double score = 1.0;  // ignored for ground truth
};

using DistanceFn = std::function<double(const DetEntry& pred, const DetEntry& gt)>;

/// Average precision with all-point interpolation:
/// (1 / n_gt) * sum over true positives of the precision envelope at that rank.
/// `tp` lists each ranked prediction's outcome.
double average_precision(std::span<const char> tp, std::size_t n_gt);

/// Mean over thresholds of the mean over gt classes of AP. For each threshold
/// predictions are visited by descending score (ties in input order) and take
/// the nearest unmatched gt of the same scene and class within the threshold.
double det_score(std::span<const DetEntry> preds, std::span<const DetEntry> gts, const DistanceFn& distance,
                 std::span<const double> thresholds);

/// det_score over boxes with IoU >= iou_threshold as the match rule.
/// Boxes are indexed by DetEntry::index into the given arrays.
double det_t_score(std::span<const DetEntry> preds, std::span<const BBox> pred_boxes, std::span<const DetEntry> gts,
                   std::span<const BBox> gt_boxes, double iou_threshold = 0.5);

/// Accumulates topology edges across scenes.
class TopAccumulator {
 public:
  /// prob is N x M row-major. row_to_gt / col_to_gt map predictions to gt rows
  /// and columns (-1 unmatched). Every gt edge counts toward recall; an edge
  /// whose endpoints are not both matched cannot be recovered.
  void add(std::span<const double> prob, std::size_t n, std::size_t m, const BoolMatrix& gt, std::span<const int> row_to_gt,
           std::span<const int> col_to_gt, bool skip_diagonal);
  /// AP over all accumulated pairs; 0 when there are no gt edges.
  double score() const;
  std::size_t gt_edges() const { return gt_edges_; }

 private:
  std::vector<std::pair<double, char>> pairs_;
  std::size_t gt_edges_ = 0;
};

/// Single-scene convenience wrapper over TopAccumulator.
double top_score(std::span<const double> prob, std::size_t n, std::size_t m, const BoolMatrix& gt,
                 std::span<const int> row_to_gt, std::span<const int> col_to_gt, bool skip_diagonal);

/// (det_l + det_a + det_t + sqrt(top_ll) + sqrt(top_lt)) / 5. Inputs must lie in [0, 1].
double olus(double det_l, double det_a, double det_t, double top_ll, double top_lt);

struct MetricReport {
  double det_l = 0.0;
  double det_a = 0.0;
  double det_t = 0.0;
  double top_ll = 0.0;
  double top_lt = 0.0;
  double olus = 0.0;

  static MetricReport from_parts(double det_l, double det_a, double det_t, double top_ll, double top_lt);
  static std::string csv_header() { return "det_l,det_a,det_t,top_ll,top_lt,olus"; }
  /// Six values with 4 decimals.
  std::string csv_row() const;
};

struct ScoredInstance {
  InstanceGeometry geometry;
  int class_id = 0;
  double score = 1.0;
};

/// Everything the evaluator needs from one scene's predictions (ego frame).
struct ScenePrediction {
  std::vector<ScoredInstance> areas;
  std::vector<ScoredInstance> lanes;
  std::vector<Detection> elements;
  std::vector<double> ll_prob;  // lanes x lanes
  std::vector<double> lt_prob;  // lanes x elements
};

struct EvalConfig {
  std::size_t area_points = 20;
  std::size_t lane_points = 10;
  std::vector<double> lane_thresholds{1.0, 2.0, 3.0};
  std::vector<double> area_thresholds{0.5, 1.0, 1.5};
  double element_iou = 0.5;
  double top_match_distance = 3.0;  // lanes farther apart than this stay unmatched for TOP
};

/// Mean Fréchet distance over the chains of two lane segments.
double lane_distance(const InstanceGeometry& a, const InstanceGeometry& b);
/// Chamfer distance between two area rings.
double area_distance(const InstanceGeometry& a, const InstanceGeometry& b);

/// Ground truth resampled the same way predictions are represented.
struct EvalTruth {
  std::vector<ScoredInstance> areas;
  std::vector<ScoredInstance> lanes;
};
EvalTruth eval_truth(const Scene& ego_scene, const EvalConfig& cfg);

/// Ground truth replayed as a prediction with score 1 and exact topology.
ScenePrediction oracle_prediction(const Scene& ego_scene, const EvalConfig& cfg);

/// Lane matching used for TOP: Hungarian on lane_distance, pairs beyond
/// top_match_distance dropped. Returns the gt index per predicted lane or -1.
std::vector<int> match_lanes_for_topology(std::span<const ScoredInstance> preds, std::span<const ScoredInstance> truth,
                                          double max_distance);

/// Dataset-level report; matches are pooled over all scenes before AP.
/// `ego_scenes` must already be in the ego frame.
MetricReport evaluate(std::span<const Scene> ego_scenes, std::span<const ScenePrediction> predictions,
                      const EvalConfig& cfg = {});

}  // namespace mapkit
