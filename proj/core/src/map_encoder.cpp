#include "mapkit/map_encoder.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "json.hpp"
#include "mapkit/optim.hpp"

namespace mapkit {

void MapEncoderConfig::validate() const {
  if (layers < 1) throw std::invalid_argument("MapEncoderConfig: layers must be >= 1");
  if (heads < 1 || hidden % heads != 0) throw std::invalid_argument("MapEncoderConfig: hidden must be divisible by heads");
  if (n_points < 2) throw std::invalid_argument("MapEncoderConfig: n_points must be >= 2");
  if (point_dim < 1) throw std::invalid_argument("MapEncoderConfig: point_dim must be >= 1");
}

std::string MapEncoderConfig::to_json() const {
  nlohmann::json j = {{"kind", "map_encoder"}, {"hidden", hidden},     {"layers", layers},
                      {"heads", heads},        {"n_points", n_points}, {"point_dim", point_dim}};
  return j.dump();
}

MapEncoderConfig MapEncoderConfig::from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("checkpoint field header: ") + e.what());
  }
  MapEncoderConfig cfg;
  for (const char* key : {"hidden", "layers", "heads", "n_points", "point_dim"}) {
    if (!j.contains(key) || !j[key].is_number_unsigned()) {
      throw CheckpointError(std::string("checkpoint field ") + key + ": missing or not an unsigned integer");
    }
  }
  cfg.hidden = j["hidden"];
  cfg.layers = j["layers"];
  cfg.heads = j["heads"];
  cfg.n_points = j["n_points"];
  cfg.point_dim = j["point_dim"];
  return cfg;
}

MapEncoder::MapEncoder(MapEncoderConfig cfg, Rng& rng)
    : cfg_(cfg), input_proj_(cfg.n_points * cfg.point_dim, cfg.hidden, rng), final_norm_(cfg.hidden) {
  cfg_.validate();
  for (std::size_t i = 0; i < cfg_.layers; ++i) blocks_.emplace_back(cfg_.hidden, cfg_.heads, rng);
}

Tensor MapEncoder::tokens(const GraphVector& gv) const {
  if (gv.points != cfg_.n_points || gv.dim != cfg_.point_dim) {
    throw std::invalid_argument("MapEncoder: graph vector is " + std::to_string(gv.points) + " x " +
                                std::to_string(gv.dim) + " per line, encoder expects " +
                                std::to_string(cfg_.n_points) + " x " + std::to_string(cfg_.point_dim));
  }
  const Tensor flat = Tensor::constant({gv.lines, gv.points * gv.dim}, gv.data);
  return input_proj_(flat);
}

Tensor MapEncoder::encode_tokens(const Tensor& tokens) const {
  if (tokens.rows() == 0) return Tensor::zeros({0, cfg_.hidden});
  Tensor h = tokens;
  for (const auto& block : blocks_) h = block(h);
  return final_norm_(h);
}

Tensor MapEncoder::forward(const GraphVector& gv) const {
  if (gv.lines == 0) {
    tokens(gv);  // shape check only
    return Tensor::zeros({0, cfg_.hidden});
  }
  return encode_tokens(tokens(gv));
}

nn::ParameterSet MapEncoder::parameters() const {
  nn::ParameterSet out;
  input_proj_.collect(out, "input_proj.");
  for (std::size_t i = 0; i < blocks_.size(); ++i) blocks_[i].collect(out, "block" + std::to_string(i) + ".");
  final_norm_.collect(out, "final_norm.");
  return out;
}

MapFeature encode_map(const GraphVector& gv, const MapEncoder& encoder) {
  NoGradGuard no_grad;
  const Tensor out = encoder.forward(gv);
  return MapFeature{gv.lines, encoder.config().hidden, std::vector<double>(out.values().begin(), out.values().end())};
}

nn::Mlp make_reconstruction_decoder(const MapEncoderConfig& cfg, Rng& rng) {
  nn::Mlp decoder(cfg.hidden, {cfg.hidden, cfg.n_points * cfg.point_dim}, nn::Activation::kRelu, rng);
  auto& last = decoder.layers.back();
  for (auto& v : last.weight.mutable_values()) v *= 0.01;
  for (auto& v : last.bias.mutable_values()) v = 0.0;
  return decoder;
}

namespace {

std::vector<std::size_t> epoch_order(std::size_t n, Rng& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t i = n; i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.next() % i);
    std::swap(order[i - 1], order[j]);
  }
  return order;
}

void check_views(const std::vector<GraphVector>& views, const char* who) {
  const bool any = std::any_of(views.begin(), views.end(), [](const GraphVector& gv) { return gv.lines > 0; });
  if (!any) throw std::invalid_argument(std::string(who) + ": dataset has no nonempty views");
}

}  // namespace

PretrainLog pretrain_autoencoder(MapEncoder& encoder, const std::vector<GraphVector>& views, const PretrainConfig& cfg) {
  check_views(views, "pretrain_autoencoder");
  Rng rng(derive_seed(cfg.seed, 0xAE));
  nn::Mlp decoder = make_reconstruction_decoder(encoder.config(), rng);
  nn::ParameterSet params = encoder.parameters();
  decoder.collect(params, "decoder.");
  AdamW opt(params, AdamWConfig{.lr = cfg.lr});

  PretrainLog log;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    double total = 0.0;
    std::size_t steps = 0;
    for (const auto idx : epoch_order(views.size(), rng)) {
      const GraphVector& gv = views[idx];
      if (gv.lines == 0) continue;
      opt.zero_grad();
      const Tensor recon = decoder(encoder.forward(gv));
      const Tensor loss = ops::mse_loss(recon, gv.data);
      backward(loss);
      opt.step();
      log.step_losses.push_back(loss.item());
      total += loss.item();
      ++steps;
    }
    log.epoch_losses.push_back(total / static_cast<double>(steps));
  }
  return log;
}

std::vector<std::size_t> choose_masked_lines(std::size_t lines, double mask_ratio, std::uint64_t seed,
                                             std::uint64_t step) {
  if (!(mask_ratio > 0.0 && mask_ratio < 1.0)) throw std::invalid_argument("mask_ratio must lie in (0, 1)");
  if (lines == 0) return {};
  const auto count = std::min(lines, static_cast<std::size_t>(std::ceil(mask_ratio * static_cast<double>(lines))));
  Rng rng(derive_seed(seed, step));
  std::vector<std::size_t> all(lines);
  std::iota(all.begin(), all.end(), std::size_t{0});
  for (std::size_t i = 0; i < count; ++i) {
    const auto j = i + static_cast<std::size_t>(rng.next() % (lines - i));
    std::swap(all[i], all[j]);
  }
  all.resize(count);
  std::sort(all.begin(), all.end());
  return all;
}

PretrainLog pretrain_mae(MapEncoder& encoder, const std::vector<GraphVector>& views, const PretrainConfig& cfg) {
  if (!(cfg.mask_ratio > 0.0 && cfg.mask_ratio < 1.0)) {
    throw std::invalid_argument("pretrain_mae: mask_ratio must lie in (0, 1)");
  }
  check_views(views, "pretrain_mae");
  const auto& ecfg = encoder.config();
  Rng rng(derive_seed(cfg.seed, 0x3AE));
  nn::Mlp decoder = make_reconstruction_decoder(ecfg, rng);
  std::vector<double> init(ecfg.hidden);
  for (auto& v : init) v = rng.normal(0.0, 0.02);
  const Tensor mask_token = Tensor::parameter({ecfg.hidden}, std::move(init));
  nn::ParameterSet params = encoder.parameters();
  decoder.collect(params, "decoder.");
  params.add("mask_token", mask_token);
  AdamW opt(params, AdamWConfig{.lr = cfg.lr});

  const std::size_t block = ecfg.n_points * ecfg.point_dim;
  PretrainLog log;
  std::uint64_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    double total = 0.0;
    std::size_t steps = 0;
    for (const auto idx : epoch_order(views.size(), rng)) {
      const GraphVector& gv = views[idx];
      if (gv.lines == 0) continue;
      const auto masked = choose_masked_lines(gv.lines, cfg.mask_ratio, cfg.seed, step++);
      std::vector<double> target;
      target.reserve(masked.size() * block);
      for (const auto l : masked) {
        const auto src = gv.line(l);
        target.insert(target.end(), src.begin(), src.end());
      }
      opt.zero_grad();
      const Tensor tokens = ops::replace_rows(encoder.tokens(gv), masked, mask_token);
      const Tensor encoded = encoder.encode_tokens(tokens);
      const Tensor recon = decoder(ops::gather_rows(encoded, masked));
      const Tensor loss = ops::mse_loss(recon, target);
      backward(loss);
      opt.step();
      log.step_losses.push_back(loss.item());
      total += loss.item();
      ++steps;
    }
    log.epoch_losses.push_back(total / static_cast<double>(steps));
  }
  return log;
}

void save_encoder(const MapEncoder& encoder, const std::filesystem::path& path) {
  save_checkpoint(path, encoder.parameters(), encoder.config().to_json());
}

void load_encoder(MapEncoder& encoder, const Checkpoint& ckpt) {
  const MapEncoderConfig stored = MapEncoderConfig::from_json(ckpt.header);
  const MapEncoderConfig& want = encoder.config();
  auto mismatch = [](const char* field, std::size_t got, std::size_t expected) {
    if (got != expected) {
      throw CheckpointError(std::string("checkpoint field ") + field + ": stored " + std::to_string(got) +
                            ", model expects " + std::to_string(expected));
    }
  };
  mismatch("hidden", stored.hidden, want.hidden);
  mismatch("layers", stored.layers, want.layers);
  mismatch("heads", stored.heads, want.heads);
  mismatch("n_points", stored.n_points, want.n_points);
  mismatch("point_dim", stored.point_dim, want.point_dim);
  load_parameters(ckpt, encoder.parameters());
}

void load_encoder(MapEncoder& encoder, const std::filesystem::path& path) { load_encoder(encoder, read_checkpoint(path)); }

}  // namespace mapkit
