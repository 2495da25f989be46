#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "mapkit/random.hpp"
#include "mapkit/tensor.hpp"

namespace mapkit::nn {

/// Ordered name -> parameter list. Names are stable checkpoint keys.
class ParameterSet {
 public:
  void add(std::string name, Tensor tensor);
  void append(const std::string& prefix, const ParameterSet& other);

  const std::vector<std::pair<std::string, Tensor>>& items() const { return items_; }
  std::size_t size() const { return items_.size(); }
  std::size_t scalar_count() const;
  const Tensor* find(const std::string& name) const;

  void zero_grad();
  void set_requires_grad(bool on);
  /// Subset whose names start with `prefix`.
  ParameterSet with_prefix(const std::string& prefix) const;
  /// Subset whose names do not start with any of `prefixes`.
  ParameterSet without_prefixes(const std::vector<std::string>& prefixes) const;

 private:
  std::vector<std::pair<std::string, Tensor>> items_;
};

enum class Activation { kIdentity, kRelu, kGelu };

Tensor activate(const Tensor& x, Activation act);

/// y = x W + b with W, b ~ U(-sqrt(1/d_in), sqrt(1/d_in)).
struct Linear {
  Tensor weight;
  Tensor bias;

  Linear() = default;
  Linear(std::size_t d_in, std::size_t d_out, Rng& rng);

  Tensor operator()(const Tensor& x) const { return ops::linear(x, weight, bias); }
  std::size_t in_features() const { return weight.dim(0); }
  std::size_t out_features() const { return weight.dim(1); }
  void collect(ParameterSet& out, const std::string& prefix) const;
};

struct LayerNorm {
  Tensor gain;
  Tensor bias;
  double eps = 1e-5;

  LayerNorm() = default;
  explicit LayerNorm(std::size_t dim);

  Tensor operator()(const Tensor& x) const { return ops::layer_norm(x, gain, bias, eps); }
  void collect(ParameterSet& out, const std::string& prefix) const;
};

/// Linear layers with `act` between them and a linear output.
struct Mlp {
  std::vector<Linear> layers;
  Activation act = Activation::kRelu;

  Mlp() = default;
  Mlp(std::size_t d_in, const std::vector<std::size_t>& widths, Activation act, Rng& rng);

  Tensor operator()(const Tensor& x) const;
  void collect(ParameterSet& out, const std::string& prefix) const;
};

/// Scaled dot-product attention over `heads` column blocks, followed by an output projection.
struct MultiHeadAttention {
  Linear q_proj, k_proj, v_proj, out_proj;
  std::size_t heads = 1;

  MultiHeadAttention() = default;
  MultiHeadAttention(std::size_t dim, std::size_t heads, Rng& rng);

  /// q [Nq, D], k/v [Nk, D] -> [Nq, D]. Nk must be at least 1.
  /// When `weights` is given it receives one [Nq, Nk] softmax tensor per head.
  Tensor operator()(const Tensor& q, const Tensor& k, const Tensor& v, std::vector<Tensor>* weights = nullptr) const;
  void collect(ParameterSet& out, const std::string& prefix) const;
};

/// Pre-norm self-attention block: x + MHA(LN x), then + FFN(LN x).
struct EncoderBlock {
  LayerNorm norm1, norm2;
  MultiHeadAttention attn;
  Mlp ffn;

  EncoderBlock() = default;
  EncoderBlock(std::size_t dim, std::size_t heads, Rng& rng);

  Tensor operator()(const Tensor& x) const;
  void collect(ParameterSet& out, const std::string& prefix) const;
};

/// Pre-norm decoder block: self-attention, cross-attention to `memory`, feed-forward.
struct DecoderBlock {
  LayerNorm norm1, norm2, norm3;
  MultiHeadAttention self_attn, cross_attn;
  Mlp ffn;

  DecoderBlock() = default;
  DecoderBlock(std::size_t dim, std::size_t heads, Rng& rng);

  Tensor operator()(const Tensor& queries, const Tensor& memory) const;
  void collect(ParameterSet& out, const std::string& prefix) const;
};

}  // namespace mapkit::nn
