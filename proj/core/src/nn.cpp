#include "mapkit/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace mapkit::nn {

void ParameterSet::add(std::string name, Tensor tensor) {
  if (find(name) != nullptr) throw std::logic_error("ParameterSet: duplicate name " + name);
  items_.emplace_back(std::move(name), std::move(tensor));
}

void ParameterSet::append(const std::string& prefix, const ParameterSet& other) {
  for (const auto& [name, t] : other.items_) add(prefix + name, t);
}

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : items_) n += t.numel();
  return n;
}

const Tensor* ParameterSet::find(const std::string& name) const {
  for (const auto& [n, t] : items_) {
    if (n == name) return &t;
  }
  return nullptr;
}

void ParameterSet::zero_grad() {
  for (auto& [name, t] : items_) t.zero_grad();
}

void ParameterSet::set_requires_grad(bool on) {
  for (auto& [name, t] : items_) t.set_requires_grad(on);
}

ParameterSet ParameterSet::with_prefix(const std::string& prefix) const {
  ParameterSet out;
  for (const auto& [name, t] : items_) {
    if (name.starts_with(prefix)) out.add(name, t);
  }
  return out;
}

ParameterSet ParameterSet::without_prefixes(const std::vector<std::string>& prefixes) const {
  ParameterSet out;
  for (const auto& [name, t] : items_) {
    bool excluded = false;
    for (const auto& p : prefixes) excluded = excluded || name.starts_with(p);
    if (!excluded) out.add(name, t);
  }
  return out;
}

Tensor activate(const Tensor& x, Activation act) {
  switch (act) {
    case Activation::kRelu:
      return ops::relu(x);
    case Activation::kGelu:
      return ops::gelu(x);
    case Activation::kIdentity:
      break;
  }
  return x;
}

Linear::Linear(std::size_t d_in, std::size_t d_out, Rng& rng) {
  const double bound = std::sqrt(1.0 / static_cast<double>(d_in));
  std::vector<double> w(d_in * d_out);
  for (auto& v : w) v = rng.uniform(-bound, bound);
  std::vector<double> b(d_out);
  for (auto& v : b) v = rng.uniform(-bound, bound);
  weight = Tensor::parameter({d_in, d_out}, std::move(w));
  bias = Tensor::parameter({d_out}, std::move(b));
}

void Linear::collect(ParameterSet& out, const std::string& prefix) const {
  out.add(prefix + "weight", weight);
  out.add(prefix + "bias", bias);
}

LayerNorm::LayerNorm(std::size_t dim)
    : gain(Tensor::parameter({dim}, std::vector<double>(dim, 1.0))),
      bias(Tensor::parameter({dim}, std::vector<double>(dim, 0.0))) {}

void LayerNorm::collect(ParameterSet& out, const std::string& prefix) const {
  out.add(prefix + "gain", gain);
  out.add(prefix + "bias", bias);
}

Mlp::Mlp(std::size_t d_in, const std::vector<std::size_t>& widths, Activation activation, Rng& rng) : act(activation) {
  if (widths.empty()) throw std::invalid_argument("Mlp: widths must be nonempty");
  std::size_t prev = d_in;
  for (const auto w : widths) {
    layers.emplace_back(prev, w, rng);
    prev = w;
  }
}

Tensor Mlp::operator()(const Tensor& x) const {
  Tensor h = x;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    h = layers[i](h);
    if (i + 1 < layers.size()) h = activate(h, act);
  }
  return h;
}

void Mlp::collect(ParameterSet& out, const std::string& prefix) const {
  for (std::size_t i = 0; i < layers.size(); ++i) layers[i].collect(out, prefix + std::to_string(i) + ".");
}

MultiHeadAttention::MultiHeadAttention(std::size_t dim, std::size_t n_heads, Rng& rng)
    : q_proj(dim, dim, rng), k_proj(dim, dim, rng), v_proj(dim, dim, rng), out_proj(dim, dim, rng), heads(n_heads) {
  if (n_heads == 0 || dim % n_heads != 0) {
    throw std::invalid_argument("MultiHeadAttention: dim " + std::to_string(dim) + " not divisible by heads " +
                                std::to_string(n_heads));
  }
}

Tensor MultiHeadAttention::operator()(const Tensor& q, const Tensor& k, const Tensor& v,
                                      std::vector<Tensor>* weights) const {
  if (k.rows() == 0) throw std::invalid_argument("MultiHeadAttention: empty key set");
  if (k.rows() != v.rows()) throw std::invalid_argument("MultiHeadAttention: key/value row counts differ");
  const std::size_t dim = q_proj.out_features();
  const std::size_t head_dim = dim / heads;
  const Tensor qp = q_proj(q);
  const Tensor kp = k_proj(k);
  const Tensor vp = v_proj(v);
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(head_dim));
  std::vector<Tensor> outputs;
  outputs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    const Tensor qh = heads == 1 ? qp : ops::slice_cols(qp, h * head_dim, head_dim);
    const Tensor kh = heads == 1 ? kp : ops::slice_cols(kp, h * head_dim, head_dim);
    const Tensor vh = heads == 1 ? vp : ops::slice_cols(vp, h * head_dim, head_dim);
    const Tensor attn = ops::softmax(ops::scale(ops::matmul_nt(qh, kh), inv_sqrt), 1);
    if (weights != nullptr) weights->push_back(attn);
    outputs.push_back(ops::matmul(attn, vh));
  }
  const Tensor merged = heads == 1 ? outputs.front() : ops::concat_cols(outputs);
  return out_proj(merged);
}

void MultiHeadAttention::collect(ParameterSet& out, const std::string& prefix) const {
  q_proj.collect(out, prefix + "q.");
  k_proj.collect(out, prefix + "k.");
  v_proj.collect(out, prefix + "v.");
  out_proj.collect(out, prefix + "out.");
}

EncoderBlock::EncoderBlock(std::size_t dim, std::size_t heads, Rng& rng)
    : norm1(dim), norm2(dim), attn(dim, heads, rng), ffn(dim, {2 * dim, dim}, Activation::kGelu, rng) {}

Tensor EncoderBlock::operator()(const Tensor& x) const {
  const Tensor n1 = norm1(x);
  const Tensor h = ops::add(x, attn(n1, n1, n1));
  return ops::add(h, ffn(norm2(h)));
}

void EncoderBlock::collect(ParameterSet& out, const std::string& prefix) const {
  norm1.collect(out, prefix + "norm1.");
  attn.collect(out, prefix + "attn.");
  norm2.collect(out, prefix + "norm2.");
  ffn.collect(out, prefix + "ffn.");
}

DecoderBlock::DecoderBlock(std::size_t dim, std::size_t heads, Rng& rng)
    : norm1(dim),
      norm2(dim),
      norm3(dim),
      self_attn(dim, heads, rng),
      cross_attn(dim, heads, rng),
      ffn(dim, {2 * dim, dim}, Activation::kGelu, rng) {}

Tensor DecoderBlock::operator()(const Tensor& queries, const Tensor& memory) const {
  const Tensor n1 = norm1(queries);
  Tensor h = ops::add(queries, self_attn(n1, n1, n1));
  h = ops::add(h, cross_attn(norm2(h), memory, memory));
  return ops::add(h, ffn(norm3(h)));
}

void DecoderBlock::collect(ParameterSet& out, const std::string& prefix) const {
  norm1.collect(out, prefix + "norm1.");
  self_attn.collect(out, prefix + "self_attn.");
  norm2.collect(out, prefix + "norm2.");
  cross_attn.collect(out, prefix + "cross_attn.");
  norm3.collect(out, prefix + "norm3.");
  ffn.collect(out, prefix + "ffn.");
}

}  // namespace mapkit::nn
