#include "mapkit/scene.hpp"

#include <algorithm>
#include <numbers>
#include <optional>
#include <sstream>

namespace mapkit {

double normalize_angle(double radians) {
  constexpr double kTwoPi = 2.0 * std::numbers::pi;
  double a = std::fmod(radians, kTwoPi);
  if (a <= -std::numbers::pi) a += kTwoPi;
  if (a > std::numbers::pi) a -= kTwoPi;
  return a;
}

Pose2D Pose2D::make(double x, double y, double yaw) {
  if (!std::isfinite(x) || !std::isfinite(y) || !std::isfinite(yaw)) {
    throw ValidationError("Pose2D: non-finite component");
  }
  return Pose2D{x, y, normalize_angle(yaw)};
}

Point2 Pose2D::to_local(Point2 world) const {
  const double c = std::cos(yaw);
  const double s = std::sin(yaw);
  const Point2 d = world - Point2{x, y};
  return {c * d.x + s * d.y, -s * d.x + c * d.y};
}

Point2 Pose2D::to_world(Point2 local) const {
  const double c = std::cos(yaw);
  const double s = std::sin(yaw);
  return {c * local.x - s * local.y + x, s * local.x + c * local.y + y};
}

double Polyline::length() const {
  double total = 0.0;
  for (std::size_t i = 1; i < points.size(); ++i) total += distance(points[i - 1], points[i]);
  return total;
}

void validate(const Polyline& line, int class_count, const std::string& where) {
  if (line.points.size() < 2) throw ValidationError(where + ": polyline needs at least 2 points");
  for (const auto& p : line.points) {
    if (!std::isfinite(p.x) || !std::isfinite(p.y)) throw ValidationError(where + ": non-finite point");
  }
  for (std::size_t i = 1; i < line.points.size(); ++i) {
    if (distance(line.points[i - 1], line.points[i]) <= kMinPointSpacing) {
      throw ValidationError(where + ": repeated consecutive point at index " + std::to_string(i));
    }
  }
  if (line.class_id < 0 || line.class_id >= class_count) {
    throw ValidationError(where + ": class_id " + std::to_string(line.class_id) + " out of range");
  }
}

double signed_area(const std::vector<Point2>& ring) {
  double acc = 0.0;
  const std::size_t n = ring.size();
  for (std::size_t i = 0; i < n; ++i) {
    const Point2& a = ring[i];
    const Point2& b = ring[(i + 1) % n];
    acc += a.x * b.y - b.x * a.y;
  }
  return 0.5 * acc;
}

double bbox_iou(const BBox& a, const BBox& b) {
  const double ix = std::max(0.0, std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min));
  const double iy = std::max(0.0, std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min));
  const double inter = ix * iy;
  const double uni = a.area() + b.area() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

void validate(const TrafficElement& element, const std::string& where) {
  const BBox& b = element.bbox;
  if (!(b.x_min < b.x_max) || !(b.y_min < b.y_max)) throw ValidationError(where + ": degenerate bbox");
  if (b.x_min < 0.0 || b.y_min < 0.0 || b.x_max > kImageWidth || b.y_max > kImageHeight) {
    throw ValidationError(where + ": bbox outside the image plane");
  }
  if (element.class_id < 0 || element.class_id >= kTrafficElementClassCount) {
    throw ValidationError(where + ": class_id " + std::to_string(element.class_id) + " out of range");
  }
}

std::size_t BoolMatrix::count() const {
  return static_cast<std::size_t>(std::count(data_.begin(), data_.end(), std::uint8_t{1}));
}

namespace {

void validate_area(const AreaInstance& area, const std::string& where) {
  if (area.class_id < 0 || area.class_id >= kAreaClassCount) {
    throw ValidationError(where + ": class_id out of range");
  }
  const auto& ring = area.boundary;
  for (const auto& p : ring) {
    if (!std::isfinite(p.x) || !std::isfinite(p.y)) throw ValidationError(where + ": non-finite point");
  }
  if (ring.size() >= 2 && distance(ring.front(), ring.back()) <= kMinPointSpacing) {
    throw ValidationError(where + ": ring closure vertex duplicated");
  }
  std::vector<Point2> distinct;
  for (const auto& p : ring) {
    const bool seen = std::any_of(distinct.begin(), distinct.end(),
                                  [&](Point2 q) { return distance(p, q) <= kMinPointSpacing; });
    if (!seen) distinct.push_back(p);
  }
  if (distinct.size() < 3) throw ValidationError(where + ": ring needs at least 3 distinct vertices");
  if (signed_area(ring) == 0.0) throw ValidationError(where + ": ring has zero area");
}

}  // namespace

void validate(const Scene& scene) {
  const auto& map = scene.sd_map;
  if (map.class_count <= 0) throw ValidationError("sd_map: class_count must be positive");
  for (std::size_t i = 0; i < map.lines.size(); ++i) {
    validate(map.lines[i], map.class_count, "sd_map.lines[" + std::to_string(i) + "]");
  }
  const std::size_t n_lanes = scene.lane_segments.size();
  for (std::size_t i = 0; i < n_lanes; ++i) {
    const auto& lane = scene.lane_segments[i];
    const std::string where = "lane_segments[" + std::to_string(i) + "]";
    constexpr int kAnyClass = 1 << 20;
    validate(lane.centerline, kAnyClass, where + ".centerline");
    validate(lane.left_boundary, kAnyClass, where + ".left_boundary");
    validate(lane.right_boundary, kAnyClass, where + ".right_boundary");
    if (lane.left_boundary.points.size() != lane.centerline.points.size() ||
        lane.right_boundary.points.size() != lane.centerline.points.size()) {
      throw ValidationError(where + ": polylines have different point counts");
    }
    if (lane.class_id < 0) throw ValidationError(where + ": negative class_id");
  }
  for (std::size_t i = 0; i < scene.areas.size(); ++i) {
    validate_area(scene.areas[i], "areas[" + std::to_string(i) + "]");
  }
  for (std::size_t i = 0; i < scene.traffic_elements.size(); ++i) {
    validate(scene.traffic_elements[i], "traffic_elements[" + std::to_string(i) + "]");
  }
  if (scene.adj_ll.rows() != n_lanes || scene.adj_ll.cols() != n_lanes) {
    throw ValidationError("adj_ll: shape does not match lane count");
  }
  if (scene.adj_lt.rows() != n_lanes || scene.adj_lt.cols() != scene.traffic_elements.size()) {
    throw ValidationError("adj_lt: shape does not match lane/traffic element counts");
  }
  for (std::size_t i = 0; i < n_lanes; ++i) {
    if (scene.adj_ll(i, i)) throw ValidationError("adj_ll: diagonal entry " + std::to_string(i) + " is set");
    for (std::size_t j = 0; j < n_lanes; ++j) {
      if (!scene.adj_ll(i, j)) continue;
      const Point2 end = scene.lane_segments[i].centerline.points.back();
      const Point2 start = scene.lane_segments[j].centerline.points.front();
      if (distance(end, start) > kConnectivityEpsilon) {
        std::ostringstream os;
        os << "adj_ll: edge " << i << "->" << j << " endpoints are " << distance(end, start) << " m apart";
        throw ValidationError(os.str());
      }
    }
  }
}

namespace {

// Liang-Barsky clip of segment a->b to the window. Returns the parameter interval kept.
std::optional<std::pair<double, double>> clip_segment(Point2 a, Point2 b, Extent e) {
  double t0 = 0.0;
  double t1 = 1.0;
  const double dx = b.x - a.x;
  const double dy = b.y - a.y;
  const double p[4] = {-dx, dx, -dy, dy};
  const double q[4] = {a.x + e.x, e.x - a.x, a.y + e.y, e.y - a.y};
  for (int k = 0; k < 4; ++k) {
    if (p[k] == 0.0) {
      if (q[k] < 0.0) return std::nullopt;
      continue;
    }
    const double t = q[k] / p[k];
    if (p[k] < 0.0) {
      t0 = std::max(t0, t);
    } else {
      t1 = std::min(t1, t);
    }
    if (t0 > t1) return std::nullopt;
  }
  return std::make_pair(t0, t1);
}

Point2 clamp_to(Point2 p, Extent e) {
  return {std::clamp(p.x, -e.x, e.x), std::clamp(p.y, -e.y, e.y)};
}

void push_distinct(std::vector<Point2>& run, Point2 p) {
  if (run.empty() || distance(run.back(), p) > kMinPointSpacing) run.push_back(p);
}

}  // namespace

LocalView crop_local_view(const SDMap& map, const Pose2D& ego, Extent extent) {
  if (!(extent.x > 0.0) || !(extent.y > 0.0)) throw std::invalid_argument("crop_local_view: extent must be positive");
  LocalView view;
  view.extent = extent;
  for (const auto& line : map.lines) {
    std::vector<Point2> local;
    local.reserve(line.points.size());
    for (const auto& p : line.points) local.push_back(ego.to_local(p));

    std::vector<Point2> run;
    auto flush = [&] {
      if (run.size() >= 2) view.lines.push_back(Polyline{run, line.class_id});
      run.clear();
    };
    for (std::size_t i = 1; i < local.size(); ++i) {
      const Point2 a = local[i - 1];
      const Point2 b = local[i];
      const auto kept = clip_segment(a, b, extent);
      if (!kept) {
        flush();
        continue;
      }
      const auto [t0, t1] = *kept;
      if (t0 > 0.0) flush();
      // Exact endpoints when unclipped; clamped interpolation otherwise.
      const Point2 start = t0 == 0.0 ? a : clamp_to(a + t0 * (b - a), extent);
      const Point2 end = t1 == 1.0 ? b : clamp_to(a + t1 * (b - a), extent);
      push_distinct(run, start);
      push_distinct(run, end);
      if (t1 < 1.0) flush();
    }
    flush();
  }
  return view;
}

Polyline resample_polyline(const Polyline& line, std::size_t n) {
  if (n < 2) throw std::invalid_argument("resample_polyline: n must be >= 2");
  if (line.points.size() < 2) throw ValidationError("resample_polyline: fewer than 2 points");
  const std::size_t m = line.points.size();
  std::vector<double> cumulative(m, 0.0);
  for (std::size_t i = 1; i < m; ++i) {
    cumulative[i] = cumulative[i - 1] + distance(line.points[i - 1], line.points[i]);
  }
  const double total = cumulative.back();
  if (!(total > 0.0)) throw ValidationError("resample_polyline: zero-length polyline");

  Polyline out;
  out.class_id = line.class_id;
  out.points.reserve(n);
  out.points.push_back(line.points.front());
  std::size_t seg = 1;
  for (std::size_t k = 1; k + 1 < n; ++k) {
    const double s = total * static_cast<double>(k) / static_cast<double>(n - 1);
    while (seg + 1 < m && cumulative[seg] < s) ++seg;
    const double seg_len = cumulative[seg] - cumulative[seg - 1];
    const double t = seg_len > 0.0 ? (s - cumulative[seg - 1]) / seg_len : 0.0;
    out.points.push_back(line.points[seg - 1] + t * (line.points[seg] - line.points[seg - 1]));
  }
  out.points.push_back(line.points.back());
  return out;
}

std::vector<Point2> resample_ring(const std::vector<Point2>& ring, std::size_t n) {
  if (ring.size() < 3) throw ValidationError("resample_ring: fewer than 3 vertices");
  if (n < 3) throw std::invalid_argument("resample_ring: n must be >= 3");
  std::vector<Point2> closed = ring;
  closed.push_back(ring.front());
  const std::size_t m = closed.size();
  std::vector<double> cumulative(m, 0.0);
  for (std::size_t i = 1; i < m; ++i) cumulative[i] = cumulative[i - 1] + distance(closed[i - 1], closed[i]);
  const double perimeter = cumulative.back();
  if (!(perimeter > 0.0)) throw ValidationError("resample_ring: zero perimeter");

  std::vector<Point2> out;
  out.reserve(n);
  out.push_back(ring.front());
  std::size_t seg = 1;
  for (std::size_t k = 1; k < n; ++k) {
    const double s = perimeter * static_cast<double>(k) / static_cast<double>(n);
    while (seg + 1 < m && cumulative[seg] < s) ++seg;
    const double seg_len = cumulative[seg] - cumulative[seg - 1];
    const double t = seg_len > 0.0 ? (s - cumulative[seg - 1]) / seg_len : 0.0;
    out.push_back(closed[seg - 1] + t * (closed[seg] - closed[seg - 1]));
  }
  return out;
}

Polyline transform_to_local(const Polyline& line, const Pose2D& frame) {
  Polyline out{{}, line.class_id};
  out.points.reserve(line.points.size());
  for (const auto& p : line.points) out.points.push_back(frame.to_local(p));
  return out;
}

Polyline transform_to_world(const Polyline& line, const Pose2D& frame) {
  Polyline out{{}, line.class_id};
  out.points.reserve(line.points.size());
  for (const auto& p : line.points) out.points.push_back(frame.to_world(p));
  return out;
}

Scene scene_in_ego_frame(const Scene& scene) {
  Scene out = scene;
  for (auto& lane : out.lane_segments) {
    lane.centerline = transform_to_local(lane.centerline, scene.ego);
    lane.left_boundary = transform_to_local(lane.left_boundary, scene.ego);
    lane.right_boundary = transform_to_local(lane.right_boundary, scene.ego);
  }
  for (auto& area : out.areas) {
    for (auto& p : area.boundary) p = scene.ego.to_local(p);
  }
  return out;
}

}  // namespace mapkit
