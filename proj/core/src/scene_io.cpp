#include <cstdio>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "mapkit/scene.hpp"

namespace mapkit {

namespace {

using nlohmann::json;

const json& require(const json& obj, const char* key, const std::string& where) {
  if (!obj.is_object() || !obj.contains(key)) {
    throw ValidationError(where + ": missing key \"" + key + "\"");
  }
  return obj.at(key);
}

double as_number(const json& v, const std::string& where) {
  if (!v.is_number()) throw ValidationError(where + ": expected a number");
  return v.get<double>();
}

int as_int(const json& v, const std::string& where) {
  if (!v.is_number_integer()) throw ValidationError(where + ": expected an integer");
  return v.get<int>();
}

std::vector<Point2> parse_points(const json& v, const std::string& where) {
  if (!v.is_array()) throw ValidationError(where + ": expected an array of [x, y] pairs");
  std::vector<Point2> out;
  out.reserve(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    const auto& p = v[i];
    const std::string at = where + "[" + std::to_string(i) + "]";
    if (!p.is_array() || p.size() != 2) throw ValidationError(at + ": expected [x, y]");
    out.push_back({as_number(p[0], at), as_number(p[1], at)});
  }
  return out;
}

BoolMatrix parse_matrix(const json& v, std::size_t rows, std::size_t cols, const std::string& where) {
  if (!v.is_array()) throw ValidationError(where + ": expected an array of rows");
  if (v.size() != rows) {
    throw ValidationError(where + ": has " + std::to_string(v.size()) + " rows, expected " + std::to_string(rows));
  }
  BoolMatrix m(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    const auto& row = v[r];
    const std::string at = where + "[" + std::to_string(r) + "]";
    if (!row.is_array() || row.size() != cols) {
      throw ValidationError(at + ": row length does not match, expected " + std::to_string(cols));
    }
    for (std::size_t c = 0; c < cols; ++c) {
      const int bit = as_int(row[c], at);
      if (bit != 0 && bit != 1) throw ValidationError(at + ": entries must be 0 or 1");
      m.set(r, c, bit == 1);
    }
  }
  return m;
}

std::string fmt(double v) {
  if (v == 0.0) return "0";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

void write_points(std::ostringstream& os, const std::vector<Point2>& pts) {
  os << '[';
  for (std::size_t i = 0; i < pts.size(); ++i) {
    if (i) os << ',';
    os << '[' << fmt(pts[i].x) << ',' << fmt(pts[i].y) << ']';
  }
  os << ']';
}

void write_matrix(std::ostringstream& os, const BoolMatrix& m) {
  os << '[';
  for (std::size_t r = 0; r < m.rows(); ++r) {
    if (r) os << ',';
    os << '[';
    for (std::size_t c = 0; c < m.cols(); ++c) {
      if (c) os << ',';
      os << (m(r, c) ? '1' : '0');
    }
    os << ']';
  }
  os << ']';
}

}  // namespace

Scene parse_scene(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("scene: ") + e.what());
  }
  if (!doc.is_object()) throw ParseError("scene: top level must be an object");

  Scene scene;
  const auto& map = require(doc, "sd_map", "scene");
  scene.sd_map.class_count = as_int(require(map, "class_count", "sd_map"), "sd_map.class_count");
  const auto& lines = require(map, "lines", "sd_map");
  if (!lines.is_array()) throw ValidationError("sd_map.lines: expected an array");
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const std::string where = "sd_map.lines[" + std::to_string(i) + "]";
    Polyline line;
    line.class_id = as_int(require(lines[i], "class_id", where), where + ".class_id");
    line.points = parse_points(require(lines[i], "points", where), where + ".points");
    scene.sd_map.lines.push_back(std::move(line));
  }

  const auto& lanes = require(doc, "lane_segments", "scene");
  if (!lanes.is_array()) throw ValidationError("lane_segments: expected an array");
  for (std::size_t i = 0; i < lanes.size(); ++i) {
    const std::string where = "lane_segments[" + std::to_string(i) + "]";
    LaneSegment lane;
    lane.class_id = as_int(require(lanes[i], "class_id", where), where + ".class_id");
    lane.centerline.points = parse_points(require(lanes[i], "centerline", where), where + ".centerline");
    lane.left_boundary.points = parse_points(require(lanes[i], "left_boundary", where), where + ".left_boundary");
    lane.right_boundary.points = parse_points(require(lanes[i], "right_boundary", where), where + ".right_boundary");
    lane.centerline.class_id = lane.left_boundary.class_id = lane.right_boundary.class_id = lane.class_id;
    scene.lane_segments.push_back(std::move(lane));
  }

  const auto& areas = require(doc, "areas", "scene");
  if (!areas.is_array()) throw ValidationError("areas: expected an array");
  for (std::size_t i = 0; i < areas.size(); ++i) {
    const std::string where = "areas[" + std::to_string(i) + "]";
    AreaInstance area;
    area.class_id = as_int(require(areas[i], "class_id", where), where + ".class_id");
    area.boundary = parse_points(require(areas[i], "boundary", where), where + ".boundary");
    scene.areas.push_back(std::move(area));
  }

  const auto& elements = require(doc, "traffic_elements", "scene");
  if (!elements.is_array()) throw ValidationError("traffic_elements: expected an array");
  for (std::size_t i = 0; i < elements.size(); ++i) {
    const std::string where = "traffic_elements[" + std::to_string(i) + "]";
    TrafficElement el;
    el.class_id = as_int(require(elements[i], "class_id", where), where + ".class_id");
    const auto& box = require(elements[i], "bbox", where);
    if (!box.is_array() || box.size() != 4) throw ValidationError(where + ".bbox: expected 4 numbers");
    el.bbox = {as_number(box[0], where), as_number(box[1], where), as_number(box[2], where),
               as_number(box[3], where)};
    scene.traffic_elements.push_back(el);
  }

  const std::size_t n_lanes = scene.lane_segments.size();
  scene.adj_ll = parse_matrix(require(doc, "adj_ll", "scene"), n_lanes, n_lanes, "adj_ll");
  scene.adj_lt = parse_matrix(require(doc, "adj_lt", "scene"), n_lanes, scene.traffic_elements.size(), "adj_lt");

  const auto& ego = require(doc, "ego", "scene");
  scene.ego = Pose2D::make(as_number(require(ego, "x", "ego"), "ego.x"), as_number(require(ego, "y", "ego"), "ego.y"),
                           as_number(require(ego, "yaw", "ego"), "ego.yaw"));

  validate(scene);
  return scene;
}

Scene load_scene(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open scene file " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_scene(buf.str());
}

std::string serialize_scene(const Scene& scene) {
  std::ostringstream os;
  os << "{\n  \"sd_map\": {\"class_count\": " << scene.sd_map.class_count << ", \"lines\": [";
  for (std::size_t i = 0; i < scene.sd_map.lines.size(); ++i) {
    const auto& line = scene.sd_map.lines[i];
    os << (i ? ",\n" : "\n") << "    {\"class_id\": " << line.class_id << ", \"points\": ";
    write_points(os, line.points);
    os << '}';
  }
  os << (scene.sd_map.lines.empty() ? "" : "\n  ") << "]},\n  \"lane_segments\": [";
  for (std::size_t i = 0; i < scene.lane_segments.size(); ++i) {
    const auto& lane = scene.lane_segments[i];
    os << (i ? ",\n" : "\n") << "    {\"class_id\": " << lane.class_id << ", \"centerline\": ";
    write_points(os, lane.centerline.points);
    os << ", \"left_boundary\": ";
    write_points(os, lane.left_boundary.points);
    os << ", \"right_boundary\": ";
    write_points(os, lane.right_boundary.points);
    os << '}';
  }
  os << (scene.lane_segments.empty() ? "" : "\n  ") << "],\n  \"areas\": [";
  for (std::size_t i = 0; i < scene.areas.size(); ++i) {
    os << (i ? ",\n" : "\n") << "    {\"class_id\": " << scene.areas[i].class_id << ", \"boundary\": ";
    write_points(os, scene.areas[i].boundary);
    os << '}';
  }
  os << (scene.areas.empty() ? "" : "\n  ") << "],\n  \"traffic_elements\": [";
  for (std::size_t i = 0; i < scene.traffic_elements.size(); ++i) {
    const auto& el = scene.traffic_elements[i];
    os << (i ? ",\n" : "\n") << "    {\"class_id\": " << el.class_id << ", \"bbox\": [" << fmt(el.bbox.x_min) << ','
       << fmt(el.bbox.y_min) << ',' << fmt(el.bbox.x_max) << ',' << fmt(el.bbox.y_max) << "]}";
  }
  os << (scene.traffic_elements.empty() ? "" : "\n  ") << "],\n  \"adj_ll\": ";
  write_matrix(os, scene.adj_ll);
  os << ",\n  \"adj_lt\": ";
  write_matrix(os, scene.adj_lt);
  os << ",\n  \"ego\": {\"x\": " << fmt(scene.ego.x) << ", \"y\": " << fmt(scene.ego.y)
     << ", \"yaw\": " << fmt(scene.ego.yaw) << "}\n}\n";
  return os.str();
}

void write_scene(const Scene& scene, const std::filesystem::path& path) {
  validate(scene);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write scene file " + path.string());
  out << serialize_scene(scene);
  if (!out) throw std::runtime_error("failed writing scene file " + path.string());
}

}  // namespace mapkit
