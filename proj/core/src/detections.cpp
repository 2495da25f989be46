#include "mapkit/detections.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "mapkit/random.hpp"

namespace mapkit {

std::vector<Detection> parse_detections(const std::string& text) {
  if (std::all_of(text.begin(), text.end(), [](unsigned char c) { return std::isspace(c); })) return {};
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("detections: ") + e.what());
  }
  if (!j.is_array()) throw ValidationError("detections: expected a JSON array");
  std::vector<Detection> out;
  for (std::size_t i = 0; i < j.size(); ++i) {
    const auto& item = j[i];
    const std::string where = "detections[" + std::to_string(i) + "]";
    if (!item.is_object()) throw ValidationError(where + ": expected an object");
    for (const char* key : {"bbox", "class_id", "score"}) {
      if (!item.contains(key)) throw ValidationError(where + ": missing field " + key);
    }
    const auto& box = item["bbox"];
    if (!box.is_array() || box.size() != 4 || !std::all_of(box.begin(), box.end(), [](const auto& v) { return v.is_number(); })) {
      throw ValidationError(where + ".bbox: expected 4 numbers");
    }
    if (!item["class_id"].is_number_integer()) throw ValidationError(where + ".class_id: expected an integer");
    if (!item["score"].is_number()) throw ValidationError(where + ".score: expected a number");
    Detection d;
    d.element.bbox = {box[0].get<double>(), box[1].get<double>(), box[2].get<double>(), box[3].get<double>()};
    d.element.class_id = item["class_id"].get<int>();
    d.score = item["score"].get<double>();
    validate(d.element, where);
    if (!(d.score >= 0.0 && d.score <= 1.0)) throw ValidationError(where + ".score: outside [0, 1]");
    out.push_back(d);
  }
  return out;
}

std::vector<Detection> ingest_external_detections(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open detections file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_detections(ss.str());
}

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::string serialize_detections(std::span<const Detection> detections) {
  std::string out = "[";
  for (std::size_t i = 0; i < detections.size(); ++i) {
    const auto& d = detections[i];
    const auto& b = d.element.bbox;
    out += i ? ",\n " : "\n ";
    out += "{\"bbox\": [" + fmt(b.x_min) + ", " + fmt(b.y_min) + ", " + fmt(b.x_max) + ", " + fmt(b.y_max) +
           "], \"class_id\": " + std::to_string(d.element.class_id) + ", \"score\": " + fmt(d.score) + "}";
  }
  out += detections.empty() ? "]\n" : "\n]\n";
  return out;
}

void export_detections(std::span<const Detection> detections, const std::filesystem::path& path) {
  for (std::size_t i = 0; i < detections.size(); ++i) {
    validate(detections[i].element, "detections[" + std::to_string(i) + "]");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write detections file " + path.string());
  out << serialize_detections(detections);
  if (!out) throw std::runtime_error("failed writing detections file " + path.string());
}

void DetectorNoise::validate() const {
  if (!(jitter_px >= 0.0)) throw std::invalid_argument("DetectorNoise: jitter_px must be >= 0");
  for (const double p : {drop_rate, class_flip_rate}) {
    if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("DetectorNoise: rates must lie in [0, 1]");
  }
  if (!(false_positive_rate >= 0.0)) throw std::invalid_argument("DetectorNoise: false_positive_rate must be >= 0");
}

namespace {

BBox clamp_box(double x0, double y0, double x1, double y1) {
  x0 = std::clamp(x0, 0.0, kImageWidth - 2.0);
  y0 = std::clamp(y0, 0.0, kImageHeight - 2.0);
  x1 = std::clamp(x1, x0 + 1.0, kImageWidth);
  y1 = std::clamp(y1, y0 + 1.0, kImageHeight);
  return {x0, y0, x1, y1};
}

}  // namespace

std::vector<Detection> simulate_detections(std::span<const TrafficElement> truth, const DetectorNoise& noise, std::uint64_t seed) {
  noise.validate();
  Rng rng(derive_seed(seed, 0xDE7));
  std::vector<Detection> out;
  for (const auto& t : truth) {
    if (rng.bernoulli(noise.drop_rate)) continue;
    const BBox& b = t.bbox;
    Detection d;
    d.element.bbox = clamp_box(b.x_min + rng.normal(0.0, noise.jitter_px), b.y_min + rng.normal(0.0, noise.jitter_px),
                               b.x_max + rng.normal(0.0, noise.jitter_px), b.y_max + rng.normal(0.0, noise.jitter_px));
    d.element.class_id = t.class_id;
    if (rng.bernoulli(noise.class_flip_rate)) d.element.class_id = rng.uniform_int(0, kTrafficElementClassCount - 1);
    d.score = rng.uniform(0.5, 1.0);
    out.push_back(d);
  }
  // Spurious boxes: Poisson count by inversion.
  const double limit = std::exp(-noise.false_positive_rate);
  double prod = rng.uniform();
  while (prod > limit) {
    const double w = rng.uniform(40.0, 160.0), h = rng.uniform(40.0, 160.0);
    const double x = rng.uniform(0.0, kImageWidth - w), y = rng.uniform(0.0, kImageHeight - h);
    Detection d;
    d.element.bbox = clamp_box(x, y, x + w, y + h);
    d.element.class_id = rng.uniform_int(0, kTrafficElementClassCount - 1);
    d.score = rng.uniform(0.05, 0.6);
    out.push_back(d);
    prod *= rng.uniform();
  }
  return out;
}

std::vector<Detection> perfect_detections(std::span<const TrafficElement> truth) {
  std::vector<Detection> out;
  for (const auto& t : truth) out.push_back({t, 1.0});
  return out;
}

std::vector<TrafficElement> elements_of(std::span<const Detection> detections) {
  std::vector<TrafficElement> out;
  for (const auto& d : detections) out.push_back(d.element);
  return out;
}

}  // namespace mapkit
