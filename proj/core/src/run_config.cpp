#include "mapkit/run_config.hpp"

#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>

namespace mapkit {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string fmt_real(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double parse_real(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double out = 0.0;
  try {
    out = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != v.size()) throw std::invalid_argument("config key " + key + ": expected a number, got '" + v + "'");
  return out;
}

std::uint64_t parse_uint(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  std::uint64_t out = 0;
  if (v.empty() || v[0] == '-') throw std::invalid_argument("config key " + key + ": expected a nonnegative integer, got '" + v + "'");
  try {
    out = std::stoull(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != v.size()) {
    throw std::invalid_argument("config key " + key + ": expected a nonnegative integer, got '" + v + "'");
  }
  return out;
}

int parse_int(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  int out = 0;
  try {
    out = std::stoi(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != v.size()) throw std::invalid_argument("config key " + key + ": expected an integer, got '" + v + "'");
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "on" || v == "true" || v == "1") return true;
  if (v == "off" || v == "false" || v == "0") return false;
  throw std::invalid_argument("config key " + key + ": expected on/off, got '" + v + "'");
}

struct Field {
  const char* key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
};

#define MK_SIZE(name, expr)                                                                              \
  Field {                                                                                                \
    name, [](const RunConfig& c) { return std::to_string(c.expr); },                                    \
        [](RunConfig& c, const std::string& k, const std::string& v) { c.expr = parse_uint(k, v); } \
  }
#define MK_INT(name, expr)                                                                              \
  Field {                                                                                               \
    name, [](const RunConfig& c) { return std::to_string(c.expr); },                                   \
        [](RunConfig& c, const std::string& k, const std::string& v) { c.expr = parse_int(k, v); } \
  }
#define MK_REAL(name, expr)                                                                              \
  Field {                                                                                                \
    name, [](const RunConfig& c) { return fmt_real(c.expr); },                                          \
        [](RunConfig& c, const std::string& k, const std::string& v) { c.expr = parse_real(k, v); } \
  }
#define MK_BOOL(name, expr)                                                                              \
  Field {                                                                                                \
    name, [](const RunConfig& c) { return std::string(c.expr ? "on" : "off"); },                       \
        [](RunConfig& c, const std::string& k, const std::string& v) { c.expr = parse_bool(k, v); } \
  }
#define MK_STR(name, expr)                                                                                   \
  Field {                                                                                                    \
    name, [](const RunConfig& c) { return c.expr; }, [](RunConfig& c, const std::string&, const std::string& v) { \
      c.expr = v;                                                                                            \
    }                                                                                                        \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> f = {
      MK_STR("label", label),
      MK_SIZE("seed", seed),
      MK_STR("corpus", corpus),
      MK_SIZE("n_scenes", gen.n_scenes),
      MK_SIZE("n_eval", gen.n_eval),
      MK_INT("lanes_min", gen.lanes_min),
      MK_INT("lanes_max", gen.lanes_max),
      MK_REAL("area_probability", gen.area_probability),
      MK_INT("elements_min", gen.elements_min),
      MK_INT("elements_max", gen.elements_max),
      MK_REAL("sdmap_sigma", gen.sdmap_sigma),
      MK_INT("sdmap_stride", gen.sdmap_stride),
      MK_REAL("split_probability", gen.split_probability),
      MK_REAL("merge_probability", gen.merge_probability),
      MK_STR("detections", detections),
      Field{"frequencies", [](const RunConfig& c) { return std::to_string(c.model.encoding.frequencies); },
            [](RunConfig& c, const std::string& k, const std::string& v) {
              c.model.encoding.frequencies = parse_int(k, v);
              c.model.encoder.point_dim = c.model.encoding.point_dim();
            }},
      MK_REAL("wavelength", model.encoding.wavelength),
      Field{"hidden", [](const RunConfig& c) { return std::to_string(c.model.encoder.hidden); },
            [](RunConfig& c, const std::string& k, const std::string& v) {
              c.model.encoder.hidden = c.model.bev.hidden = parse_uint(k, v);
            }},
      Field{"heads", [](const RunConfig& c) { return std::to_string(c.model.encoder.heads); },
            [](RunConfig& c, const std::string& k, const std::string& v) {
              c.model.encoder.heads = c.model.bev.heads = parse_uint(k, v);
            }},
      MK_SIZE("encoder_layers", model.encoder.layers),
      Field{"extent_x", [](const RunConfig& c) { return fmt_real(c.model.bev.extent.x); },
            [](RunConfig& c, const std::string& k, const std::string& v) { c.model.bev.extent.x = c.gen.extent.x = parse_real(k, v); }},
      Field{"extent_y", [](const RunConfig& c) { return fmt_real(c.model.bev.extent.y); },
            [](RunConfig& c, const std::string& k, const std::string& v) { c.model.bev.extent.y = c.gen.extent.y = parse_real(k, v); }},
      MK_REAL("resolution", model.bev.resolution),
      MK_SIZE("dec_layers", model.bev.dec_layers),
      MK_SIZE("area_queries", model.bev.area_queries),
      MK_SIZE("lane_queries", model.bev.lane_queries),
      MK_SIZE("area_points", model.bev.area_points),
      MK_SIZE("lane_points", model.bev.lane_points),
      MK_SIZE("topo_hidden", model.bev.topo_hidden),
      MK_SIZE("epochs", epochs),
      MK_REAL("lr", lr),
      MK_REAL("weight_decay", weight_decay),
      MK_REAL("lambda_cls", weights.cls),
      MK_REAL("lambda_pt", weights.pt),
      MK_REAL("lambda_iou", weights.iou),
      MK_REAL("lambda_topo", weights.topo),
      MK_REAL("lambda_aux", weights.aux),
      MK_BOOL("sdmap_fusion", sdmap_fusion),
      MK_BOOL("aux_head", aux_head),
      MK_STR("pretrained_encoder", pretrained_encoder),
      MK_SIZE("eval_every", eval_every),
      MK_STR("pretrain_mode", pretrain_mode),
      MK_SIZE("pretrain_epochs", pretrain_epochs),
      MK_REAL("pretrain_lr", pretrain_lr),
      MK_REAL("mask_ratio", mask_ratio),
      MK_STR("checkpoint", checkpoint),
      MK_SIZE("topology_epochs", topology_epochs),
      MK_REAL("topology_lr", topology_lr),
      MK_BOOL("oracle", oracle),
  };
  return f;
}

#undef MK_SIZE
#undef MK_INT
#undef MK_REAL
#undef MK_BOOL
#undef MK_STR

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) {
  for (const auto& f : fields()) {
    if (key == f.key) {
      f.set(*this, key, value);
      return;
    }
  }
  throw std::invalid_argument("unknown config key '" + key + "'");
}

std::string RunConfig::echo() const {
  std::string out;
  for (const auto& f : fields()) out += std::string(f.key) + " = " + f.get(*this) + "\n";
  return out;
}

void RunConfig::validate() const {
  gen.validate();
  model.validate();
  if (gen.extent.x != model.bev.extent.x || gen.extent.y != model.bev.extent.y) {
    throw std::invalid_argument("config: generator and BEV extents differ");
  }
  weights.validate();
  if (!(lr > 0.0) || !(topology_lr > 0.0) || !(pretrain_lr > 0.0)) throw std::invalid_argument("config: learning rates must be positive");
  if (!(weight_decay >= 0.0)) throw std::invalid_argument("config: weight_decay must be >= 0");
  if (eval_every == 0) throw std::invalid_argument("config: eval_every must be >= 1");
  if (pretrain_mode != "ae" && pretrain_mode != "mae") throw std::invalid_argument("config: pretrain_mode must be ae or mae");
  if (pretrain_mode == "mae" && !(mask_ratio > 0.0 && mask_ratio < 1.0)) {
    throw std::invalid_argument("config: mask_ratio must lie in (0, 1) for mae pretraining");
  }
  if (label.empty() || label.find_first_of(",\n") != std::string::npos) {
    throw std::invalid_argument("config: label must be nonempty without commas");
  }
}

RunConfig RunConfig::parse(const std::string& text) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("config line " + std::to_string(row) + ": expected key = value");
    cfg.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return cfg;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

std::vector<std::string> RunConfig::keys() {
  std::vector<std::string> out;
  for (const auto& f : fields()) out.emplace_back(f.key);
  return out;
}

}  // namespace mapkit
