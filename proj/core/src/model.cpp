#include "mapkit/model.hpp"

#include <cmath>
#include <stdexcept>

#include "json.hpp"

namespace mapkit {

void ModelConfig::validate() const {
  encoding.validate();
  encoder.validate();
  bev.validate();
  if (encoder.point_dim != encoding.point_dim()) {
    throw std::invalid_argument("ModelConfig: encoder point_dim " + std::to_string(encoder.point_dim) +
                                " differs from the encoding width " + std::to_string(encoding.point_dim()));
  }
  if (encoder.hidden != bev.hidden) {
    throw std::invalid_argument("ModelConfig: encoder hidden " + std::to_string(encoder.hidden) + " differs from BEV hidden " +
                                std::to_string(bev.hidden));
  }
}

std::string ModelConfig::to_json() const {
  nlohmann::json j;
  j["kind"] = "model";
  j["encoding"] = {{"frequencies", encoding.frequencies}, {"wavelength", encoding.wavelength}, {"class_count", encoding.class_count}};
  j["encoder"] = nlohmann::json::parse(encoder.to_json());
  j["bev"] = nlohmann::json::parse(bev.to_json());
  return j.dump();
}

ModelConfig ModelConfig::from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("checkpoint field header: ") + e.what());
  }
  if (!j.is_object() || j.value("kind", "") != "model") throw CheckpointError("checkpoint field kind: not a model checkpoint");
  for (const char* key : {"encoding", "encoder", "bev"}) {
    if (!j.contains(key) || !j[key].is_object()) throw CheckpointError(std::string("checkpoint field ") + key + ": missing");
  }
  ModelConfig c;
  const auto& e = j["encoding"];
  if (!e.contains("frequencies") || !e["frequencies"].is_number_integer()) throw CheckpointError("checkpoint field frequencies: missing");
  if (!e.contains("wavelength") || !e["wavelength"].is_number()) throw CheckpointError("checkpoint field wavelength: missing");
  if (!e.contains("class_count") || !e["class_count"].is_number_integer()) throw CheckpointError("checkpoint field class_count: missing");
  c.encoding.frequencies = e["frequencies"].get<int>();
  c.encoding.wavelength = e["wavelength"].get<double>();
  c.encoding.class_count = e["class_count"].get<int>();
  c.encoder = MapEncoderConfig::from_json(j["encoder"].dump());
  c.bev = BevConfig::from_json(j["bev"].dump());
  try {
    c.validate();
  } catch (const std::invalid_argument& err) {
    throw CheckpointError(std::string("checkpoint field config: ") + err.what());
  }
  return c;
}

PreparedScene prepare_scene(const Scene& world_scene, const ModelConfig& cfg, std::vector<Detection> detections) {
  PreparedScene p;
  p.ego_scene = scene_in_ego_frame(world_scene);
  const LocalView view = crop_local_view(world_scene.sd_map, world_scene.ego, cfg.bev.extent);
  p.graph = build_graph_vector(view, cfg.encoding, cfg.encoder.n_points);
  p.detections = std::move(detections);
  return p;
}

Model::Model(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
  cfg_.validate();
  Rng enc_rng(derive_seed(seed, 1));
  Rng head_rng(derive_seed(seed, 2));
  encoder_ = MapEncoder(cfg_.encoder, enc_rng);
  heads_ = BevHeads(cfg_.bev, head_rng);
}

HeadOutputs Model::forward(const GraphVector& graph, std::span<const TrafficElement> lt_inputs, bool fuse) const {
  const Tensor features = fuse ? encoder_.forward(graph) : Tensor::zeros({0, cfg_.encoder.hidden});
  return heads_.forward(features, lt_inputs, fuse);
}

namespace {

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

}  // namespace

ScenePrediction to_prediction(const HeadOutputs& out, const BevConfig& cfg, std::span<const Detection> detections) {
  ScenePrediction pred;
  for (auto& a : extract_areas(out, cfg)) {
    const ClassScore cs = foreground_score(a.class_logits);
    pred.areas.push_back({std::move(a.geometry), cs.class_id, cs.score});
  }
  std::vector<double> lane_scores;
  for (auto& l : extract_lanes(out, cfg)) {
    const ClassScore cs = foreground_score(l.class_logits);
    lane_scores.push_back(cs.score);
    pred.lanes.push_back({std::move(l.geometry), cs.class_id, cs.score});
  }
  pred.elements.assign(detections.begin(), detections.end());
  const std::size_t n = pred.lanes.size(), m = detections.size();
  const auto ll = out.ll_logits.values();
  pred.ll_prob.resize(n * n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) pred.ll_prob[i * n + j] = sigmoid(ll[i * n + j]) * lane_scores[i] * lane_scores[j];
  }
  pred.lt_prob.assign(n * m, 0.0);
  if (m > 0) {
    const auto lt = out.lt_logits.values();
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < m; ++j) pred.lt_prob[i * m + j] = sigmoid(lt[i * m + j]) * lane_scores[i] * detections[j].score;
    }
  }
  return pred;
}

ScenePrediction Model::predict(const PreparedScene& scene, bool fuse) const {
  NoGradGuard no_grad;
  const auto elements = elements_of(scene.detections);
  return to_prediction(forward(scene.graph, elements, fuse), cfg_.bev, scene.detections);
}

nn::ParameterSet Model::parameters() const {
  nn::ParameterSet out;
  out.append("encoder.", encoder_.parameters());
  out.append("", heads_.parameters());
  return out;
}

void Model::save(const std::filesystem::path& path) const { save_checkpoint(path, parameters(), cfg_.to_json()); }

Model Model::load(const std::filesystem::path& path) {
  const Checkpoint ckpt = read_checkpoint(path);
  Model m(ModelConfig::from_json(ckpt.header), 0);
  load_parameters(ckpt, m.parameters());
  return m;
}

}  // namespace mapkit
