#include "mapkit/scenegen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "mapkit/random.hpp"

namespace mapkit {

void GenConfig::validate() const {
  if (n_eval > n_scenes) throw std::invalid_argument("GenConfig: n_eval exceeds n_scenes");
  if (lanes_min < 0 || lanes_max < lanes_min) throw std::invalid_argument("GenConfig: lanes range must satisfy 0 <= min <= max");
  if (lanes_max > 4) throw std::invalid_argument("GenConfig: at most 4 parallel lanes fit the crop");
  if (elements_min < 0 || elements_max < elements_min) {
    throw std::invalid_argument("GenConfig: traffic element range must satisfy 0 <= min <= max");
  }
  for (const double p : {area_probability, split_probability, merge_probability}) {
    if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("GenConfig: probabilities must lie in [0, 1]");
  }
  if (!(sdmap_sigma >= 0.0)) throw std::invalid_argument("GenConfig: sdmap_sigma must be >= 0");
  if (sdmap_stride < 1) throw std::invalid_argument("GenConfig: sdmap_stride must be >= 1");
  if (!(extent.x >= 40.0) || !(extent.y >= 20.0)) throw std::invalid_argument("GenConfig: extent must be at least 40 x 20 m");
}

namespace {

constexpr double kLaneWidth = 3.5;
constexpr double kPointSpacing = 3.0;

// Relative frequencies of the 13 traffic-element classes; the tail is rare on purpose.
constexpr double kElementClassWeights[kTrafficElementClassCount] = {30, 20, 15, 10, 8, 6, 4, 3, 1.5, 1.0, 0.7, 0.5, 0.3};

// Gently curved reference road in the ego frame: heading theta, curvature kappa.
struct Road {
  double theta = 0.0;
  double kappa = 0.0;
  double center = 0.0;  // lateral offset of the road axis, meters

  Point2 base(double s) const {
    const double lx = s, ly = center + 0.5 * kappa * s * s;
    return {std::cos(theta) * lx - std::sin(theta) * ly, std::sin(theta) * lx + std::cos(theta) * ly};
  }
  Point2 normal(double s) const {
    const double tx = 1.0, ty = kappa * s;
    const double n = std::hypot(tx, ty);
    const Point2 t{(std::cos(theta) * tx - std::sin(theta) * ty) / n, (std::sin(theta) * tx + std::cos(theta) * ty) / n};
    return {-t.y, t.x};
  }
  Point2 tangent(double s) const {
    const Point2 n = normal(s);
    return {n.y, -n.x};
  }
  Point2 at(double s, double offset) const { return base(s) + offset * normal(s); }
};

std::size_t samples_for(double length) {
  return std::max<std::size_t>(3, static_cast<std::size_t>(std::ceil(length / kPointSpacing)) + 1);
}

// Lane segment between arc positions s0 < s1 whose lateral offset moves
// smoothly from off0 to off1.
LaneSegment make_lane(const Road& road, double s0, double s1, double off0, double off1) {
  const std::size_t n = samples_for(s1 - s0);
  LaneSegment lane;
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / static_cast<double>(n - 1);
    const double blend = t * t * (3.0 - 2.0 * t);
    const double s = s0 + (s1 - s0) * t;
    const double off = off0 + (off1 - off0) * blend;
    lane.centerline.points.push_back(road.at(s, off));
    lane.left_boundary.points.push_back(road.at(s, off + 0.5 * kLaneWidth));
    lane.right_boundary.points.push_back(road.at(s, off - 0.5 * kLaneWidth));
  }
  return lane;
}

std::vector<Point2> crossing_ring(const Road& road, double s, double lo, double hi) {
  const Point2 c = road.base(s);
  const Point2 t = road.tangent(s);
  const Point2 n = road.normal(s);
  const double h = 2.0;
  // Counter-clockwise in the road frame.
  return {c + (-h) * t + lo * n, c + h * t + lo * n, c + h * t + hi * n, c + (-h) * t + hi * n};
}

std::vector<Point2> boundary_ring(const Road& road, double s0, double s1, double offset, double thickness) {
  const std::size_t n = samples_for(s1 - s0);
  std::vector<Point2> ring;
  for (std::size_t i = 0; i < n; ++i) {
    const double s = s0 + (s1 - s0) * static_cast<double>(i) / static_cast<double>(n - 1);
    ring.push_back(road.at(s, offset));
  }
  for (std::size_t i = n; i-- > 0;) {
    const double s = s0 + (s1 - s0) * static_cast<double>(i) / static_cast<double>(n - 1);
    ring.push_back(road.at(s, offset + thickness));
  }
  if (signed_area(ring) < 0.0) std::reverse(ring.begin(), ring.end());
  return ring;
}

int sample_element_class(Rng& rng) {
  double total = 0.0;
  for (const double w : kElementClassWeights) total += w;
  double u = rng.uniform(0.0, total);
  for (int c = 0; c < kTrafficElementClassCount; ++c) {
    u -= kElementClassWeights[c];
    if (u < 0.0) return c;
  }
  return kTrafficElementClassCount - 1;
}

Polyline to_world(const Polyline& line, const Pose2D& pose) { return transform_to_world(line, pose); }

}  // namespace

Scene generate_scene(std::uint64_t seed, const GenConfig& cfg) {
  cfg.validate();
  Rng rng(derive_seed(seed, 0x5CE));
  Scene scene;
  const double reach = cfg.extent.x - 5.0;

  Road road;
  road.theta = rng.uniform(-0.1, 0.1);
  road.kappa = rng.uniform(-0.003, 0.003);
  road.center = rng.uniform(-6.0, 6.0);
  const int n_lanes = rng.uniform_int(cfg.lanes_min, cfg.lanes_max);
  const int n_pieces = rng.bernoulli(0.5) ? 3 : 2;
  std::vector<double> breaks{-reach};
  if (n_pieces == 3) {
    breaks.push_back(-reach / 3.0 + rng.uniform(-5.0, 5.0));
    breaks.push_back(reach / 3.0 + rng.uniform(-5.0, 5.0));
  } else {
    breaks.push_back(rng.uniform(-8.0, 8.0));
  }
  breaks.push_back(reach);

  std::vector<int> road_class;       // SD class per lane segment
  std::vector<std::size_t> last_of;  // last segment of each parallel lane
  std::vector<std::pair<std::size_t, std::size_t>> edges;
  std::vector<double> offsets;
  for (int k = 0; k < n_lanes; ++k) {
    const double off = (static_cast<double>(k) - 0.5 * static_cast<double>(n_lanes - 1)) * kLaneWidth;
    offsets.push_back(off);
    for (int p = 0; p < n_pieces; ++p) {
      if (p > 0) edges.emplace_back(scene.lane_segments.size() - 1, scene.lane_segments.size());
      scene.lane_segments.push_back(make_lane(road, breaks[p], breaks[p + 1], off, off));
      road_class.push_back(n_lanes - 1);
    }
    last_of.push_back(scene.lane_segments.size() - 1);
  }
  if (n_lanes > 0 && rng.bernoulli(cfg.split_probability)) {
    // Leaves the outermost lane at the last break and drifts one lane width outward.
    const bool left = rng.bernoulli(0.5);
    const std::size_t k = left ? static_cast<std::size_t>(n_lanes - 1) : 0;
    const double off = offsets[k];
    const std::size_t from = last_of[k] - 1;
    scene.lane_segments.push_back(
        make_lane(road, breaks[n_pieces - 1], breaks[n_pieces], off, off + (left ? kLaneWidth : -kLaneWidth)));
    edges.emplace_back(from, scene.lane_segments.size() - 1);
    road_class.push_back(3);
  }
  if (n_lanes > 0 && rng.bernoulli(cfg.merge_probability)) {
    // Joins the outermost lane at the first break from one lane width outside.
    const bool left = rng.bernoulli(0.5);
    const std::size_t k = left ? static_cast<std::size_t>(n_lanes - 1) : 0;
    const double off = offsets[k];
    const std::size_t to = last_of[k] - static_cast<std::size_t>(n_pieces - 1) + 1;
    scene.lane_segments.push_back(make_lane(road, breaks[0], breaks[1], off + (left ? kLaneWidth : -kLaneWidth), off));
    edges.emplace_back(scene.lane_segments.size() - 1, to);
    road_class.push_back(4);
  }
  const std::size_t n_segments = scene.lane_segments.size();
  scene.adj_ll = BoolMatrix(n_segments, n_segments);
  for (const auto& [i, j] : edges) scene.adj_ll.set(i, j, true);

  if (n_lanes > 0) {
    const double half_span = 0.5 * static_cast<double>(n_lanes) * kLaneWidth;
    if (rng.bernoulli(cfg.area_probability)) {
      const double s = rng.uniform(-0.6 * reach, 0.6 * reach);
      scene.areas.push_back({crossing_ring(road, s, -half_span - 0.5, half_span + 0.5),
                             static_cast<int>(AreaClass::kPedestrianCrossing)});
    }
    if (rng.bernoulli(cfg.area_probability)) {
      const bool left = rng.bernoulli(0.5);
      const double off = left ? half_span + 0.5 : -half_span - 1.5;
      scene.areas.push_back({boundary_ring(road, -reach, reach, off, 1.0), static_cast<int>(AreaClass::kRoadBoundary)});
    }
  }

  const int n_elements = n_lanes > 0 ? rng.uniform_int(cfg.elements_min, cfg.elements_max) : 0;
  scene.adj_lt = BoolMatrix(n_segments, static_cast<std::size_t>(n_elements));
  for (int e = 0; e < n_elements; ++e) {
    // The box sits above the lane it governs: image u falls as lateral offset grows.
    const auto k = static_cast<std::size_t>(rng.uniform_int(0, n_lanes - 1));
    const double lateral = road.center + offsets[k];
    const double w = rng.uniform(60.0, 140.0), h = rng.uniform(60.0, 140.0);
    const double u = std::clamp(0.5 * kImageWidth - 45.0 * lateral + rng.normal(0.0, 15.0), 0.5 * w + 1.0,
                                kImageWidth - 0.5 * w - 1.0);
    const double v = rng.uniform(600.0, 1200.0);
    TrafficElement te;
    te.bbox = {u - 0.5 * w, v - 0.5 * h, u + 0.5 * w, v + 0.5 * h};
    te.class_id = sample_element_class(rng);
    scene.traffic_elements.push_back(te);
    scene.adj_lt.set(last_of[k], static_cast<std::size_t>(e), true);
  }

  // Ego pose in the world; geometry so far is in the ego frame.
  scene.ego = Pose2D::make(rng.uniform(-500.0, 500.0), rng.uniform(-500.0, 500.0), rng.uniform(-std::numbers::pi, std::numbers::pi));
  for (auto& lane : scene.lane_segments) {
    lane.centerline = to_world(lane.centerline, scene.ego);
    lane.left_boundary = to_world(lane.left_boundary, scene.ego);
    lane.right_boundary = to_world(lane.right_boundary, scene.ego);
  }
  for (auto& area : scene.areas) {
    for (auto& p : area.boundary) p = scene.ego.to_world(p);
  }
  scene.sd_map = degrade_to_sdmap(scene, cfg.sdmap_sigma, cfg.sdmap_stride, derive_seed(seed, 0x5D), road_class);
  validate(scene);
  return scene;
}

SDMap degrade_to_sdmap(const Scene& scene, double sigma, int stride, std::uint64_t seed, std::span<const int> classes) {
  if (!(sigma >= 0.0)) throw std::invalid_argument("degrade_to_sdmap: sigma must be >= 0");
  if (stride < 1) throw std::invalid_argument("degrade_to_sdmap: stride must be >= 1");
  if (!classes.empty() && classes.size() != scene.lane_segments.size()) {
    throw std::invalid_argument("degrade_to_sdmap: one class per lane segment required");
  }
  Rng rng(seed);
  SDMap map;
  for (std::size_t i = 0; i < scene.lane_segments.size(); ++i) {
    const auto& pts = scene.lane_segments[i].centerline.points;
    Polyline line;
    line.class_id = classes.empty() ? 0 : std::clamp(classes[i], 0, map.class_count - 1);
    for (std::size_t k = 0; k < pts.size(); k += static_cast<std::size_t>(stride)) line.points.push_back(pts[k]);
    if ((pts.size() - 1) % static_cast<std::size_t>(stride) != 0) line.points.push_back(pts.back());
    if (sigma > 0.0) {
      for (auto& p : line.points) p = {p.x + rng.normal(0.0, sigma), p.y + rng.normal(0.0, sigma)};
    }
    map.lines.push_back(std::move(line));
  }
  return map;
}

std::vector<double> compute_resampling_weights(std::span<const Scene> scenes) {
  if (scenes.empty()) throw std::invalid_argument("compute_resampling_weights: empty dataset");
  std::map<int, std::size_t> freq;
  for (const auto& s : scenes) {
    for (const auto& e : s.traffic_elements) ++freq[e.class_id];
  }
  std::vector<double> w(scenes.size(), 1.0);
  double total = 0.0;
  std::size_t with_elements = 0;
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    if (scenes[i].traffic_elements.empty()) continue;
    double best = 0.0;
    for (const auto& e : scenes[i].traffic_elements) best = std::max(best, 1.0 / std::sqrt(static_cast<double>(freq[e.class_id])));
    w[i] = best;
    total += best;
    ++with_elements;
  }
  if (with_elements > 0) {
    const double mean = total / static_cast<double>(with_elements);
    for (std::size_t i = 0; i < scenes.size(); ++i) {
      if (!scenes[i].traffic_elements.empty()) w[i] /= mean;
    }
  }
  return w;
}

DetectorNoise external_detector_noise() { return DetectorNoise{8.0, 0.05, 0.1, 0.01}; }

namespace {

std::string scene_name(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "scene_%05zu.json", i);
  return buf;
}

}  // namespace

std::vector<ManifestEntry> write_corpus(const std::filesystem::path& root, const GenConfig& cfg, bool force) {
  namespace fs = std::filesystem;
  cfg.validate();
  if (fs::exists(root) && !fs::is_empty(root)) {
    if (!force) throw std::runtime_error("output directory " + root.string() + " is not empty; pass --force to overwrite");
    fs::remove_all(root / "scenes");
    fs::remove_all(root / "detections");
    fs::remove(root / "manifest.csv");
  }
  fs::create_directories(root / "scenes");
  fs::create_directories(root / "detections");
  std::vector<ManifestEntry> entries;
  const std::size_t n_train = cfg.n_scenes - cfg.n_eval;
  for (std::size_t i = 0; i < cfg.n_scenes; ++i) {
    const std::uint64_t seed = derive_seed(cfg.seed, i);
    const Scene scene = generate_scene(seed, cfg);
    const std::string name = scene_name(i);
    write_scene(scene, root / "scenes" / name);
    export_detections(simulate_detections(scene.traffic_elements, external_detector_noise(), derive_seed(seed, 0xE7)),
                      root / "detections" / name);
    entries.push_back({"scenes/" + name, seed, i < n_train ? "train" : "eval"});
  }
  std::ofstream out(root / "manifest.csv", std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + (root / "manifest.csv").string());
  out << "path,seed,split\n";
  for (const auto& e : entries) out << e.path << ',' << e.seed << ',' << e.split << '\n';
  if (!out) throw std::runtime_error("failed writing manifest");
  return entries;
}

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& root) {
  const auto path = root / "manifest.csv";
  std::ifstream in(path);
  if (!in) throw std::runtime_error("missing corpus manifest " + path.string());
  std::string line;
  std::getline(in, line);
  if (line != "path,seed,split") throw ParseError(path.string() + ": unexpected header '" + line + "'");
  std::vector<ManifestEntry> out;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    std::stringstream ss(line);
    ManifestEntry e;
    std::string seed;
    if (!std::getline(ss, e.path, ',') || !std::getline(ss, seed, ',') || !std::getline(ss, e.split)) {
      throw ParseError(path.string() + ": row " + std::to_string(row) + " needs 3 fields");
    }
    try {
      e.seed = std::stoull(seed);
    } catch (const std::exception&) {
      throw ParseError(path.string() + ": row " + std::to_string(row) + " has a bad seed");
    }
    if (e.split != "train" && e.split != "eval") {
      throw ParseError(path.string() + ": row " + std::to_string(row) + " split must be train or eval");
    }
    out.push_back(std::move(e));
  }
  return out;
}

std::filesystem::path detections_path_for(const std::filesystem::path& detections_dir, const ManifestEntry& entry) {
  return detections_dir / std::filesystem::path(entry.path).filename();
}

}  // namespace mapkit
