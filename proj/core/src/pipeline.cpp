#include "mapkit/pipeline.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "mapkit/optim.hpp"

namespace mapkit {

namespace fs = std::filesystem;

namespace {

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

std::vector<std::size_t> shuffled(std::size_t n, Rng& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[static_cast<std::size_t>(rng.next() % i)]);
  return order;
}

std::string metrics_csv(std::span<const MetricReport> reports) {
  std::string out = MetricReport::csv_header() + "\n";
  for (const auto& r : reports) out += r.csv_row() + "\n";
  return out;
}

// Training view of a scene: graph, lane-traffic inputs and matching targets.
struct TrainItem {
  GraphVector graph;
  std::vector<TrafficElement> lt_inputs;
  SceneTargets targets;
};

TrainItem make_train_item(const Scene& world, const ModelConfig& mcfg, std::vector<TrafficElement> lt_inputs) {
  PreparedScene p = prepare_scene(world, mcfg, {});
  TrainItem item;
  item.graph = std::move(p.graph);
  item.targets = build_targets(p.ego_scene, mcfg.bev, lt_inputs);
  item.lt_inputs = std::move(lt_inputs);
  return item;
}

std::vector<PreparedScene> prepare_eval(const RunConfig& cfg, const Corpus& corpus) {
  std::vector<PreparedScene> out;
  for (std::size_t i = 0; i < corpus.eval.size(); ++i) {
    out.push_back(prepare_scene(corpus.eval[i], cfg.model, detections_for(cfg, corpus.eval_entries[i], corpus.eval[i])));
  }
  return out;
}

void say(std::ostream* log, const std::string& msg) {
  if (log) *log << msg << std::endl;
}

CostWeights effective_weights(const RunConfig& cfg) {
  CostWeights w = cfg.weights;
  if (!cfg.aux_head) w.aux = 0.0;
  return w;
}

}  // namespace

Corpus load_corpus(const RunConfig& cfg) {
  const fs::path root(cfg.corpus);
  Corpus c;
  for (const auto& e : read_manifest(root)) {
    Scene s = load_scene(root / e.path);
    if (e.split == "train") {
      c.train_entries.push_back(e);
      c.train.push_back(std::move(s));
    } else {
      c.eval_entries.push_back(e);
      c.eval.push_back(std::move(s));
    }
  }
  return c;
}

std::vector<Detection> detections_for(const RunConfig& cfg, const ManifestEntry& entry, const Scene& scene) {
  if (cfg.detections != "none") return ingest_external_detections(detections_path_for(cfg.detections, entry));
  return simulate_detections(scene.traffic_elements, DetectorNoise{}, derive_seed(entry.seed, 0x57B));
}

std::string corpus_digest(const fs::path& root) {
  std::uint64_t h = 1469598103934665603ull;
  auto feed = [&](const std::string& bytes) {
    for (const unsigned char c : bytes) {
      h ^= c;
      h *= 1099511628211ull;
    }
  };
  feed(read_file(root / "manifest.csv"));
  for (const auto& e : read_manifest(root)) {
    feed(read_file(root / e.path));
    feed(read_file(detections_path_for(root / "detections", e)));
  }
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

MetricReport evaluate_model(const Model& model, std::span<const PreparedScene> scenes, bool fuse) {
  std::vector<Scene> truth;
  std::vector<ScenePrediction> preds;
  for (const auto& s : scenes) {
    truth.push_back(s.ego_scene);
    preds.push_back(model.predict(s, fuse));
  }
  EvalConfig ecfg;
  ecfg.area_points = model.config().bev.area_points;
  ecfg.lane_points = model.config().bev.lane_points;
  return evaluate(truth, preds, ecfg);
}

void prepare_run_dir(const RunConfig& cfg, const fs::path& out, bool force) {
  if (fs::exists(out) && !fs::is_directory(out)) throw std::runtime_error(out.string() + " exists and is not a directory");
  if (fs::exists(out) && !fs::is_empty(out) && !force) {
    throw std::runtime_error("output directory " + out.string() + " is not empty; pass --force to overwrite");
  }
  fs::create_directories(out);
  write_file(out / "config.txt", cfg.echo());
}

void cmd_gen_data(const RunConfig& cfg, const fs::path& out, bool force, std::ostream* log) {
  cfg.validate();
  GenConfig gen = cfg.gen;
  gen.seed = cfg.seed;
  const auto entries = write_corpus(out, gen, force);
  write_file(out / "config.txt", cfg.echo());
  say(log, "wrote " + std::to_string(entries.size()) + " scenes to " + out.string() + " (digest " + corpus_digest(out) + ")");
}

PretrainResult cmd_pretrain(const RunConfig& cfg, const fs::path& out, bool force, std::ostream* log) {
  cfg.validate();
  const Corpus corpus = load_corpus(cfg);
  prepare_run_dir(cfg, out, force);
  std::vector<GraphVector> views;
  for (const auto& s : corpus.train) views.push_back(prepare_scene(s, cfg.model, {}).graph);
  Rng rng(derive_seed(cfg.seed, 1));
  MapEncoder encoder(cfg.model.encoder, rng);
  PretrainConfig pc{cfg.pretrain_epochs, cfg.pretrain_lr, cfg.seed, cfg.mask_ratio};
  PretrainResult res;
  res.log = cfg.pretrain_mode == "mae" ? pretrain_mae(encoder, views, pc) : pretrain_autoencoder(encoder, views, pc);
  res.checkpoint = out / "encoder.ckpt";
  save_encoder(encoder, res.checkpoint);
  std::string csv = "epoch,loss\n";
  for (std::size_t e = 0; e < res.log.epoch_losses.size(); ++e) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%zu,%.10g\n", e + 1, res.log.epoch_losses[e]);
    csv += buf;
  }
  write_file(out / "pretrain_loss.csv", csv);
  if (!res.log.epoch_losses.empty()) {
    say(log, "pretrain " + cfg.pretrain_mode + ": loss " + std::to_string(res.log.epoch_losses.front()) + " -> " +
                 std::to_string(res.log.epoch_losses.back()));
  }
  return res;
}

TrainResult cmd_train(const RunConfig& cfg, const fs::path& out, bool force, std::ostream* log) {
  cfg.validate();
  const Corpus corpus = load_corpus(cfg);
  if (corpus.train.empty()) throw std::runtime_error("corpus " + cfg.corpus + " has no training scenes");
  Model model(cfg.model, cfg.seed);
  if (cfg.pretrained_encoder != "none") load_encoder(model.encoder(), fs::path(cfg.pretrained_encoder));
  prepare_run_dir(cfg, out, force);

  std::vector<TrainItem> items;
  for (const auto& s : corpus.train) {
    const Scene ego = scene_in_ego_frame(s);
    items.push_back(make_train_item(s, cfg.model, ego.traffic_elements));
  }
  const auto eval_scenes = prepare_eval(cfg, corpus);
  const CostWeights weights = effective_weights(cfg);
  const LossOptions options{true, true, cfg.aux_head};

  nn::ParameterSet params = model.parameters();
  AdamW opt(params, AdamWConfig{.lr = cfg.lr, .weight_decay = cfg.weight_decay});
  Rng order_rng(derive_seed(cfg.seed, 3));
  TrainResult res;
  std::string train_log = "epoch,loss,area_cls,area_pt,area_iou,lane_cls,lane_pt,lane_iou,topo_ll,topo_lt,aux\n";
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    LossBreakdown sum;
    for (const auto idx : shuffled(items.size(), order_rng)) {
      const TrainItem& item = items[idx];
      opt.zero_grad();
      const HeadOutputs outs = model.forward(item.graph, item.lt_inputs, cfg.sdmap_fusion);
      const LossResult lr = total_loss(outs, item.targets, cfg.model.bev, weights, options);
      if (lr.total.requires_grad()) {
        backward(lr.total);
        opt.step();
      } else {
        Tape::current().clear();
      }
      sum.area_cls += lr.parts.area_cls;
      sum.area_pt += lr.parts.area_pt;
      sum.area_iou += lr.parts.area_iou;
      sum.lane_cls += lr.parts.lane_cls;
      sum.lane_pt += lr.parts.lane_pt;
      sum.lane_iou += lr.parts.lane_iou;
      sum.topo_ll += lr.parts.topo_ll;
      sum.topo_lt += lr.parts.topo_lt;
      sum.aux += lr.parts.aux;
      sum.total += lr.parts.total;
    }
    const double n = static_cast<double>(items.size());
    res.epoch_losses.push_back(sum.total / n);
    char buf[512];
    std::snprintf(buf, sizeof buf, "%zu,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g\n", epoch, sum.total / n,
                  sum.area_cls / n, sum.area_pt / n, sum.area_iou / n, sum.lane_cls / n, sum.lane_pt / n, sum.lane_iou / n,
                  sum.topo_ll / n, sum.topo_lt / n, sum.aux / n);
    train_log += buf;
    std::string line = "epoch " + std::to_string(epoch) + " loss " + std::to_string(sum.total / n);
    if (!eval_scenes.empty() && (epoch % cfg.eval_every == 0 || epoch == cfg.epochs)) {
      res.reports.push_back(evaluate_model(model, eval_scenes, cfg.sdmap_fusion));
      line += " eval " + res.reports.back().csv_row();
    }
    say(log, line);
  }
  res.final_loss = res.epoch_losses.empty() ? 0.0 : res.epoch_losses.back();
  res.final_report = res.reports.empty() ? MetricReport{} : res.reports.back();
  res.checkpoint = out / "model.ckpt";
  model.save(res.checkpoint);
  write_file(out / "metrics.csv", metrics_csv(res.reports));
  write_file(out / "train_log.csv", train_log);
  return res;
}

FinetuneResult cmd_finetune_topology(const RunConfig& cfg, const fs::path& out, bool force, std::ostream* log) {
  cfg.validate();
  if (cfg.checkpoint == "none") throw std::runtime_error("finetune-topology needs checkpoint = <model.ckpt>");
  Model model = Model::load(fs::path(cfg.checkpoint));
  const Corpus corpus = load_corpus(cfg);
  prepare_run_dir(cfg, out, force);
  const ModelConfig& mcfg = model.config();

  std::vector<TrainItem> items;
  for (std::size_t i = 0; i < corpus.train.size(); ++i) {
    const auto dets = detections_for(cfg, corpus.train_entries[i], corpus.train[i]);
    items.push_back(make_train_item(corpus.train[i], mcfg, elements_of(dets)));
  }
  std::vector<PreparedScene> eval_scenes;
  for (std::size_t i = 0; i < corpus.eval.size(); ++i) {
    eval_scenes.push_back(prepare_scene(corpus.eval[i], mcfg, detections_for(cfg, corpus.eval_entries[i], corpus.eval[i])));
  }

  FinetuneResult res;
  if (!eval_scenes.empty()) res.before = evaluate_model(model, eval_scenes, cfg.sdmap_fusion);
  const nn::ParameterSet all = model.parameters();
  nn::ParameterSet frozen = all.without_prefixes({kTopologyPrefixLL, kTopologyPrefixLT});
  nn::ParameterSet trainable = all.with_prefix(kTopologyPrefixLL);
  trainable.append("", all.with_prefix(kTopologyPrefixLT));
  res.frozen_tensors = frozen.size();
  res.trainable_tensors = trainable.size();
  res.frozen_hash_before = parameter_hash(frozen);
  frozen.set_requires_grad(false);

  AdamW opt(trainable, AdamWConfig{.lr = cfg.topology_lr, .weight_decay = cfg.weight_decay});
  const LossOptions options{false, true, false};
  Rng order_rng(derive_seed(cfg.seed, 4));
  for (std::size_t epoch = 1; epoch <= cfg.topology_epochs; ++epoch) {
    double total = 0.0;
    for (const auto idx : shuffled(items.size(), order_rng)) {
      const TrainItem& item = items[idx];
      opt.zero_grad();
      const HeadOutputs outs = model.forward(item.graph, item.lt_inputs, cfg.sdmap_fusion);
      const LossResult lr = total_loss(outs, item.targets, mcfg.bev, cfg.weights, options);
      if (lr.total.requires_grad()) {
        backward(lr.total);
        opt.step();
      } else {
        Tape::current().clear();
      }
      total += lr.parts.total;
    }
    say(log, "topology epoch " + std::to_string(epoch) + " loss " +
                 std::to_string(items.empty() ? 0.0 : total / static_cast<double>(items.size())));
  }
  res.frozen_hash_after = parameter_hash(frozen);
  if (res.frozen_hash_after != res.frozen_hash_before) {
    throw std::logic_error("finetune-topology: frozen parameters changed");
  }
  frozen.set_requires_grad(true);
  if (!eval_scenes.empty()) res.after = evaluate_model(model, eval_scenes, cfg.sdmap_fusion);
  res.checkpoint = out / "model.ckpt";
  model.save(res.checkpoint);
  write_file(out / "metrics_before.csv", metrics_csv(std::span<const MetricReport>(&res.before, 1)));
  write_file(out / "metrics.csv", metrics_csv(std::span<const MetricReport>(&res.after, 1)));
  say(log, "top_lt " + std::to_string(res.before.top_lt) + " -> " + std::to_string(res.after.top_lt));
  return res;
}

MetricReport cmd_eval(const RunConfig& cfg, const fs::path& out, bool force, std::ostream* log) {
  cfg.validate();
  MetricReport report;
  if (cfg.oracle) {
    const Corpus corpus = load_corpus(cfg);
    prepare_run_dir(cfg, out, force);
    EvalConfig ecfg;
    ecfg.area_points = cfg.model.bev.area_points;
    ecfg.lane_points = cfg.model.bev.lane_points;
    std::vector<Scene> truth;
    std::vector<ScenePrediction> preds;
    for (const auto& s : corpus.eval) {
      truth.push_back(scene_in_ego_frame(s));
      preds.push_back(oracle_prediction(truth.back(), ecfg));
    }
    report = evaluate(truth, preds, ecfg);
  } else {
    if (cfg.checkpoint == "none") throw std::runtime_error("eval needs checkpoint = <model.ckpt> or oracle = on");
    const Model model = Model::load(fs::path(cfg.checkpoint));
    const Corpus corpus = load_corpus(cfg);
    prepare_run_dir(cfg, out, force);
    std::vector<PreparedScene> scenes;
    for (std::size_t i = 0; i < corpus.eval.size(); ++i) {
      scenes.push_back(prepare_scene(corpus.eval[i], model.config(), detections_for(cfg, corpus.eval_entries[i], corpus.eval[i])));
    }
    report = evaluate_model(model, scenes, cfg.sdmap_fusion);
  }
  write_file(out / "metrics.csv", metrics_csv(std::span<const MetricReport>(&report, 1)));
  say(log, MetricReport::csv_header());
  say(log, report.csv_row());
  return report;
}

std::string cmd_report(std::span<const fs::path> run_dirs) {
  if (run_dirs.empty()) throw std::invalid_argument("report needs at least one run directory");
  std::vector<std::pair<std::string, std::string>> rows;
  for (const auto& dir : run_dirs) {
    const RunConfig cfg = RunConfig::load(dir / "config.txt");
    std::istringstream in(read_file(dir / "metrics.csv"));
    std::string header, line, last;
    std::getline(in, header);
    if (header != MetricReport::csv_header()) throw ParseError((dir / "metrics.csv").string() + ": unexpected header");
    while (std::getline(in, line)) {
      if (!line.empty()) last = line;
    }
    if (last.empty()) throw ParseError((dir / "metrics.csv").string() + ": no metric rows");
    rows.emplace_back(cfg.label, last);
  }
  std::stable_sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  std::string out = "label," + MetricReport::csv_header() + "\n";
  for (const auto& [label, row] : rows) out += label + "," + row + "\n";
  return out;
}

}  // namespace mapkit
