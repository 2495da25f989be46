#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace mapkit {

/// Raised when a value violates a documented type invariant.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when an input file cannot be parsed at all.
class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Point2 {
  double x = 0.0;
  double y = 0.0;

  friend Point2 operator+(Point2 a, Point2 b) { return {a.x + b.x, a.y + b.y}; }
  friend Point2 operator-(Point2 a, Point2 b) { return {a.x - b.x, a.y - b.y}; }
  friend Point2 operator*(double s, Point2 p) { return {s * p.x, s * p.y}; }
  friend bool operator==(const Point2&, const Point2&) = default;
};

inline double norm(Point2 p) { return std::hypot(p.x, p.y); }
inline double distance(Point2 a, Point2 b) { return norm(a - b); }

/// Wraps an angle into (-pi, pi].
double normalize_angle(double radians);

/// Ego pose in the world frame. Constructed through make() so yaw is always normalized.
struct Pose2D {
  double x = 0.0;
  double y = 0.0;
  double yaw = 0.0;

  static Pose2D make(double x, double y, double yaw);

  /// World point into this pose's frame: rotate(-yaw) * (p - t).
  Point2 to_local(Point2 world) const;
  /// Local point back into the world frame.
  Point2 to_world(Point2 local) const;

  friend bool operator==(const Pose2D&, const Pose2D&) = default;
};

/// Minimum separation of consecutive polyline points, in meters.
inline constexpr double kMinPointSpacing = 1e-9;
/// Lane connectivity tolerance between an end point and the next start point.
inline constexpr double kConnectivityEpsilon = 0.5;
/// SD-map road classes: motorway, trunk, primary, secondary, residential, service, pedestrian.
inline constexpr int kSdMapClassCount = 7;
inline constexpr int kTrafficElementClassCount = 13;
/// Virtual image plane for traffic elements, in pixels.
inline constexpr double kImageWidth = 1550.0;
inline constexpr double kImageHeight = 2480.0;

struct Polyline {
  std::vector<Point2> points;
  int class_id = 0;

  double length() const;
  friend bool operator==(const Polyline&, const Polyline&) = default;
};

/// Throws ValidationError if the polyline has < 2 points, repeated points or zero length.
void validate(const Polyline& line, int class_count, const std::string& where);

struct SDMap {
  std::vector<Polyline> lines;
  int class_count = kSdMapClassCount;

  friend bool operator==(const SDMap&, const SDMap&) = default;
};

struct LaneSegment {
  Polyline centerline;
  Polyline left_boundary;
  Polyline right_boundary;
  int class_id = 0;

  friend bool operator==(const LaneSegment&, const LaneSegment&) = default;
};

enum class AreaClass : int { kPedestrianCrossing = 0, kRoadBoundary = 1 };
inline constexpr int kAreaClassCount = 2;

/// Closed ring; the closing edge from back() to front() is implicit.
struct AreaInstance {
  std::vector<Point2> boundary;
  int class_id = 0;

  friend bool operator==(const AreaInstance&, const AreaInstance&) = default;
};

/// Shoelace area, positive for counter-clockwise rings.
double signed_area(const std::vector<Point2>& ring);

struct BBox {
  double x_min = 0.0;
  double y_min = 0.0;
  double x_max = 0.0;
  double y_max = 0.0;

  double area() const { return (x_max - x_min) * (y_max - y_min); }
  friend bool operator==(const BBox&, const BBox&) = default;
};

double bbox_iou(const BBox& a, const BBox& b);

struct TrafficElement {
  BBox bbox;
  int class_id = 0;

  friend bool operator==(const TrafficElement&, const TrafficElement&) = default;
};

void validate(const TrafficElement& element, const std::string& where);

/// Dense row-major 0/1 matrix.
class BoolMatrix {
 public:
  BoolMatrix() = default;
  BoolMatrix(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), data_(rows * cols, 0) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  bool operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c] != 0; }
  void set(std::size_t r, std::size_t c, bool v) { data_[r * cols_ + c] = v ? 1 : 0; }
  std::size_t count() const;

  friend bool operator==(const BoolMatrix&, const BoolMatrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<std::uint8_t> data_;
};

struct Scene {
  SDMap sd_map;
  std::vector<LaneSegment> lane_segments;
  std::vector<AreaInstance> areas;
  std::vector<TrafficElement> traffic_elements;
  BoolMatrix adj_ll;
  BoolMatrix adj_lt;
  Pose2D ego;

  friend bool operator==(const Scene&, const Scene&) = default;
};

/// Checks every Scene invariant; the message names the first violation.
void validate(const Scene& scene);

struct Extent {
  double x = 50.0;
  double y = 25.0;
};

struct LocalView {
  std::vector<Polyline> lines;
  Extent extent;
};

/// Moves map lines into the ego frame and clips them to [-E_x, E_x] x [-E_y, E_y].
/// Lines crossing the window edge are split into separate in-window pieces.
LocalView crop_local_view(const SDMap& map, const Pose2D& ego, Extent extent = {});

/// n points at equal arc-length spacing; endpoints copied exactly.
Polyline resample_polyline(const Polyline& line, std::size_t n);

/// n points at equal spacing along the closed perimeter, starting at ring[0].
std::vector<Point2> resample_ring(const std::vector<Point2>& ring, std::size_t n);

Polyline transform_to_local(const Polyline& line, const Pose2D& frame);
Polyline transform_to_world(const Polyline& line, const Pose2D& frame);

/// Ground truth of a scene re-expressed in the ego frame (the BEV frame).
/// The SD map is left in world coordinates; use crop_local_view for it.
Scene scene_in_ego_frame(const Scene& scene);

// Scene files (JSON, see docs/scene_format.md).
Scene load_scene(const std::filesystem::path& path);
Scene parse_scene(const std::string& text);
std::string serialize_scene(const Scene& scene);
void write_scene(const Scene& scene, const std::filesystem::path& path);

}  // namespace mapkit
