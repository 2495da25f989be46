#include "mapkit/tensor.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace mapkit {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

ConstMap as_matrix(std::span<const double> data, std::size_t rows, std::size_t cols) {
  return ConstMap(data.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

MutMap as_matrix(std::span<double> data, std::size_t rows, std::size_t cols) {
  return MutMap(data.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

void require(bool ok, const std::string& what) {
  if (!ok) throw std::invalid_argument(what);
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                                shape_string(b.shape()));
  }
}

// Runs fn(grad span) only when t takes part in differentiation.
template <typename Fn>
void accumulate(const Tensor& t, Fn&& fn) {
  if (t.requires_grad()) fn(t.node()->grad_buffer());
}

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? ", " : "") << shape[i];
  os << ']';
  return os.str();
}

std::span<double> TensorNode::grad_buffer() {
  if (grad.empty()) grad.assign(value.size(), 0.0);
  return grad;
}

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }

Tensor Tensor::full(Shape shape, double value) {
  const std::size_t n = shape_numel(shape);
  return constant(std::move(shape), std::vector<double>(n, value));
}

Tensor Tensor::constant(Shape shape, std::vector<double> values) {
  if (shape_numel(shape) != values.size()) {
    throw std::invalid_argument("Tensor: " + std::to_string(values.size()) + " values for shape " +
                                shape_string(shape));
  }
  auto node = std::make_shared<TensorNode>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  return Tensor(std::move(node));
}

Tensor Tensor::parameter(Shape shape, std::vector<double> values) {
  Tensor t = constant(std::move(shape), std::move(values));
  t.node_->requires_grad = true;
  return t;
}

Tensor Tensor::scalar(double value) { return constant({1}, {value}); }

std::size_t Tensor::rows() const {
  const auto& s = node_->shape;
  if (s.size() <= 1) return 1;
  return numel() / s.back();
}

std::size_t Tensor::cols() const {
  const auto& s = node_->shape;
  return s.empty() ? 1 : s.back();
}

double Tensor::item() const {
  if (numel() != 1) throw std::invalid_argument("Tensor::item: tensor has " + std::to_string(numel()) + " entries");
  return node_->value[0];
}

std::vector<double> Tensor::grad() const {
  if (node_->grad.empty()) return std::vector<double>(node_->value.size(), 0.0);
  return node_->grad;
}

Tensor Tensor::detach() const { return constant(node_->shape, node_->value); }

Tape& Tape::current() {
  thread_local Tape tape;
  return tape;
}

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw std::invalid_argument("backward: loss must be a scalar tensor");
  }
  if (!loss.requires_grad()) throw std::invalid_argument("backward: loss is not on the tape");
  Tape& tape = Tape::current();
  loss.node()->grad_buffer()[0] += 1.0;
  const auto& records = tape.records();
  for (auto it = records.rbegin(); it != records.rend(); ++it) {
    const TensorNode& out = *it->output;
    if (out.grad.empty()) continue;
    it->backward(out.grad);
  }
  tape.clear();
}

namespace {

template <typename Inputs>
Tensor build_result(std::string_view op, Shape shape, std::vector<double> values, const Inputs& inputs,
                    std::function<void(std::span<const double>)> backward, auto&& construct) {
  if (shape_numel(shape) != values.size()) {
    throw std::logic_error(std::string(op) + ": result size does not match shape " + shape_string(shape));
  }
  Tape& tape = Tape::current();
  const bool tracked =
      tape.enabled() && std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return t.requires_grad(); });
  auto node = std::make_shared<TensorNode>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  if (tracked) {
    node->requires_grad = true;
    tape.push({op, node, std::move(backward)});
  }
  return construct(std::move(node));
}

}  // namespace

Tensor make_result(std::string_view op, Shape shape, std::vector<double> values, std::initializer_list<Tensor> inputs,
                   std::function<void(std::span<const double>)> backward) {
  return build_result(op, std::move(shape), std::move(values), inputs, std::move(backward),
                      [](std::shared_ptr<TensorNode> n) { return Tensor(std::move(n)); });
}

Tensor make_result(std::string_view op, Shape shape, std::vector<double> values, const std::vector<Tensor>& inputs,
                   std::function<void(std::span<const double>)> backward) {
  return build_result(op, std::move(shape), std::move(values), inputs, std::move(backward),
                      [](std::shared_ptr<TensorNode> n) { return Tensor(std::move(n)); });
}

namespace ops {

Tensor matmul(const Tensor& a, const Tensor& b) {
  require(a.rank() == 2 && b.rank() == 2, "matmul: operands must be 2-D");
  const std::size_t n = a.dim(0), k = a.dim(1), m = b.dim(1);
  require(b.dim(0) == k, "matmul: inner dimensions " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
  std::vector<double> out(n * m);
  as_matrix(std::span<double>(out), n, m).noalias() = as_matrix(a.values(), n, k) * as_matrix(b.values(), k, m);
  return make_result("matmul", {n, m}, std::move(out), {a, b}, [a, b, n, k, m](std::span<const double> g) {
    const auto gm = as_matrix(g, n, m);
    accumulate(a, [&](std::span<double> ga) {
      as_matrix(ga, n, k).noalias() += gm * as_matrix(b.values(), k, m).transpose();
    });
    accumulate(b, [&](std::span<double> gb) {
      as_matrix(gb, k, m).noalias() += as_matrix(a.values(), n, k).transpose() * gm;
    });
  });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require(a.rank() == 2 && b.rank() == 2, "matmul_nt: operands must be 2-D");
  const std::size_t n = a.dim(0), k = a.dim(1), m = b.dim(0);
  require(b.dim(1) == k, "matmul_nt: inner dimensions " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
  std::vector<double> out(n * m);
  as_matrix(std::span<double>(out), n, m).noalias() =
      as_matrix(a.values(), n, k) * as_matrix(b.values(), m, k).transpose();
  return make_result("matmul_nt", {n, m}, std::move(out), {a, b}, [a, b, n, k, m](std::span<const double> g) {
    const auto gm = as_matrix(g, n, m);
    accumulate(a, [&](std::span<double> ga) { as_matrix(ga, n, k).noalias() += gm * as_matrix(b.values(), m, k); });
    accumulate(b, [&](std::span<double> gb) {
      as_matrix(gb, m, k).noalias() += gm.transpose() * as_matrix(a.values(), n, k);
    });
  });
}

Tensor transpose(const Tensor& a) {
  require(a.rank() == 2, "transpose: operand must be 2-D");
  const std::size_t n = a.dim(0), m = a.dim(1);
  std::vector<double> out(n * m);
  as_matrix(std::span<double>(out), m, n) = as_matrix(a.values(), n, m).transpose();
  return make_result("transpose", {m, n}, std::move(out), {a}, [a, n, m](std::span<const double> g) {
    accumulate(a, [&](std::span<double> ga) { as_matrix(ga, n, m) += as_matrix(g, m, n).transpose(); });
  });
}

Tensor reshape(const Tensor& a, Shape shape) {
  require(shape_numel(shape) == a.numel(),
          "reshape: cannot view " + shape_string(a.shape()) + " as " + shape_string(shape));
  std::vector<double> out(a.values().begin(), a.values().end());
  return make_result("reshape", std::move(shape), std::move(out), {a}, [a](std::span<const double> g) {
    accumulate(a, [&](std::span<double> ga) {
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    });
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] + b.values()[i];
  return make_result("add", a.shape(), std::move(out), {a, b}, [a, b](std::span<const double> g) {
    for (const Tensor* t : {&a, &b}) {
      accumulate(*t, [&](std::span<double> gt) {
        for (std::size_t i = 0; i < g.size(); ++i) gt[i] += g[i];
      });
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] - b.values()[i];
  return make_result("sub", a.shape(), std::move(out), {a, b}, [a, b](std::span<const double> g) {
    accumulate(a, [&](std::span<double> ga) {
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    });
    accumulate(b, [&](std::span<double> gb) {
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    });
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * b.values()[i];
  return make_result("mul", a.shape(), std::move(out), {a, b}, [a, b](std::span<const double> g) {
    accumulate(a, [&](std::span<double> ga) {
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * b.values()[i];
    });
    accumulate(b, [&](std::span<double> gb) {
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * a.values()[i];
    });
  });
}

Tensor scale(const Tensor& a, double s) {
  std::vector<double> out(a.values().begin(), a.values().end());
  for (auto& v : out) v *= s;
  return make_result("scale", a.shape(), std::move(out), {a}, [a, s](std::span<const double> g) {
    accumulate(a, [&](std::span<double> ga) {
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += s * g[i];
    });
  });
}

Tensor add_bias(const Tensor& a, const Tensor& bias) {
  const std::size_t rows = a.rows(), cols = a.cols();
  require(bias.numel() == cols, "add_bias: bias has " + std::to_string(bias.numel()) + " entries, expected " +
                                    std::to_string(cols));
  std::vector<double> out(a.values().begin(), a.values().end());
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] += bias.values()[c];
  }
  return make_result("add_bias", a.shape(), std::move(out), {a, bias}, [a, bias, rows, cols](std::span<const double> g) {
    accumulate(a, [&](std::span<double> ga) {
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    });
    accumulate(bias, [&](std::span<double> gb) {
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) gb[c] += g[r * cols + c];
      }
    });
  });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  require(w.rank() == 2, "linear: weight must be 2-D");
  const std::size_t d_in = w.dim(0), d_out = w.dim(1);
  require(x.cols() == d_in, "linear: input width " + std::to_string(x.cols()) + " does not match weight " +
                                shape_string(w.shape()));
  require(b.numel() == d_out, "linear: bias size does not match weight " + shape_string(w.shape()));
  const std::size_t n = x.rows();
  std::vector<double> out(n * d_out);
  auto om = as_matrix(std::span<double>(out), n, d_out);
  om.noalias() = as_matrix(x.values(), n, d_in) * as_matrix(w.values(), d_in, d_out);
  om.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(b.values().data(), static_cast<Eigen::Index>(d_out));
  Shape shape = x.shape();
  if (shape.empty()) shape = {1};
  shape.back() = d_out;
  return make_result("linear", std::move(shape), std::move(out), {x, w, b},
                     [x, w, b, n, d_in, d_out](std::span<const double> g) {
                       const auto gm = as_matrix(g, n, d_out);
                       accumulate(x, [&](std::span<double> gx) {
                         as_matrix(gx, n, d_in).noalias() += gm * as_matrix(w.values(), d_in, d_out).transpose();
                       });
                       accumulate(w, [&](std::span<double> gw) {
                         as_matrix(gw, d_in, d_out).noalias() += as_matrix(x.values(), n, d_in).transpose() * gm;
                       });
                       accumulate(b, [&](std::span<double> gb) {
                         Eigen::Map<Eigen::RowVectorXd>(gb.data(), static_cast<Eigen::Index>(d_out)) += gm.colwise().sum();
                       });
                     });
}

Tensor unary_map(const Tensor& a, std::function<double(double)> f, std::function<double(double)> df) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(a.values()[i]);
  return make_result("unary_map", a.shape(), std::move(out), {a}, [a, df](std::span<const double> g) {
    accumulate(a, [&](std::span<double> ga) {
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * df(a.values()[i]);
    });
  });
}

Tensor relu(const Tensor& a) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::max(0.0, a.values()[i]);
  return make_result("relu", a.shape(), std::move(out), {a}, [a](std::span<const double> g) {
    accumulate(a, [&](std::span<double> ga) {
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (a.values()[i] > 0.0) ga[i] += g[i];
      }
    });
  });
}

Tensor gelu(const Tensor& a) {
  // Exact form x * Phi(x).
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double x = a.values()[i];
    out[i] = 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2));
  }
  return make_result("gelu", a.shape(), std::move(out), {a}, [a](std::span<const double> g) {
    accumulate(a, [&](std::span<double> ga) {
      const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double x = a.values()[i];
        const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
        const double pdf = inv_sqrt_2pi * std::exp(-0.5 * x * x);
        ga[i] += g[i] * (cdf + x * pdf);
      }
    });
  });
}

Tensor sigmoid(const Tensor& a) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-a.values()[i]));
  auto values = out;
  return make_result("sigmoid", a.shape(), std::move(out), {a}, [a, values](std::span<const double> g) {
    accumulate(a, [&](std::span<double> ga) {
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * values[i] * (1.0 - values[i]);
    });
  });
}

Tensor softmax(const Tensor& a, std::size_t axis) {
  const auto& shape = a.shape();
  require(axis < shape.size(), "softmax: axis out of range");
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];
  const std::size_t len = shape[axis];
  std::vector<double> out(a.numel());
  const auto in = a.values();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t j = 0; j < inner; ++j) {
      const std::size_t base = o * len * inner + j;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < len; ++k) mx = std::max(mx, in[base + k * inner]);
      double total = 0.0;
      for (std::size_t k = 0; k < len; ++k) {
        const double e = std::exp(in[base + k * inner] - mx);
        out[base + k * inner] = e;
        total += e;
      }
      for (std::size_t k = 0; k < len; ++k) out[base + k * inner] /= total;
    }
  }
  auto y = out;
  return make_result("softmax", shape, std::move(out), {a}, [a, y, outer, inner, len](std::span<const double> g) {
    accumulate(a, [&](std::span<double> ga) {
      for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t j = 0; j < inner; ++j) {
          const std::size_t base = o * len * inner + j;
          double dot = 0.0;
          for (std::size_t k = 0; k < len; ++k) dot += g[base + k * inner] * y[base + k * inner];
          for (std::size_t k = 0; k < len; ++k) {
            const std::size_t idx = base + k * inner;
            ga[idx] += y[idx] * (g[idx] - dot);
          }
        }
      }
    });
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  require(eps > 0.0, "layer_norm: eps must be positive");
  const std::size_t d = x.cols(), n = x.rows();
  require(gain.numel() == d && bias.numel() == d, "layer_norm: gain/bias width mismatch");
  std::vector<double> xhat(x.numel());
  std::vector<double> inv_std(n);
  std::vector<double> out(x.numel());
  const auto in = x.values();
  for (std::size_t r = 0; r < n; ++r) {
    double mu = 0.0;
    for (std::size_t c = 0; c < d; ++c) mu += in[r * d + c];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t c = 0; c < d; ++c) {
      const double z = in[r * d + c] - mu;
      var += z * z;
    }
    var /= static_cast<double>(d);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < d; ++c) {
      const std::size_t i = r * d + c;
      xhat[i] = (in[i] - mu) * inv_std[r];
      out[i] = xhat[i] * gain.values()[c] + bias.values()[c];
    }
  }
  return make_result("layer_norm", x.shape(), std::move(out), {x, gain, bias},
                     [x, gain, bias, xhat, inv_std, n, d](std::span<const double> g) {
                       accumulate(gain, [&](std::span<double> gg) {
                         for (std::size_t i = 0; i < g.size(); ++i) gg[i % d] += g[i] * xhat[i];
                       });
                       accumulate(bias, [&](std::span<double> gb) {
                         for (std::size_t i = 0; i < g.size(); ++i) gb[i % d] += g[i];
                       });
                       accumulate(x, [&](std::span<double> gx) {
                         const double inv_d = 1.0 / static_cast<double>(d);
                         for (std::size_t r = 0; r < n; ++r) {
                           double mean_dy = 0.0, mean_dy_xhat = 0.0;
                           for (std::size_t c = 0; c < d; ++c) {
                             const std::size_t i = r * d + c;
                             const double dy = g[i] * gain.values()[c];
                             mean_dy += dy;
                             mean_dy_xhat += dy * xhat[i];
                           }
                           mean_dy *= inv_d;
                           mean_dy_xhat *= inv_d;
                           for (std::size_t c = 0; c < d; ++c) {
                             const std::size_t i = r * d + c;
                             const double dy = g[i] * gain.values()[c];
                             gx[i] += inv_std[r] * (dy - mean_dy - xhat[i] * mean_dy_xhat);
                           }
                         }
                       });
                     });
}

Tensor slice_cols(const Tensor& a, std::size_t start, std::size_t count) {
  const std::size_t n = a.rows(), m = a.cols();
  require(start + count <= m, "slice_cols: range out of bounds");
  std::vector<double> out(n * count);
  for (std::size_t r = 0; r < n; ++r) {
    std::copy_n(a.values().begin() + static_cast<std::ptrdiff_t>(r * m + start), count,
                out.begin() + static_cast<std::ptrdiff_t>(r * count));
  }
  return make_result("slice_cols", {n, count}, std::move(out), {a}, [a, n, m, start, count](std::span<const double> g) {
    accumulate(a, [&](std::span<double> ga) {
      for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t c = 0; c < count; ++c) ga[r * m + start + c] += g[r * count + c];
      }
    });
  });
}

Tensor slice_rows(const Tensor& a, std::size_t start, std::size_t count) {
  const std::size_t n = a.rows(), m = a.cols();
  require(start + count <= n, "slice_rows: range out of bounds");
  std::vector<double> out(a.values().begin() + static_cast<std::ptrdiff_t>(start * m),
                          a.values().begin() + static_cast<std::ptrdiff_t>((start + count) * m));
  return make_result("slice_rows", {count, m}, std::move(out), {a}, [a, m, start](std::span<const double> g) {
    accumulate(a, [&](std::span<double> ga) {
      for (std::size_t i = 0; i < g.size(); ++i) ga[start * m + i] += g[i];
    });
  });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  require(!parts.empty(), "concat_cols: no inputs");
  const std::size_t n = parts.front().rows();
  std::size_t total = 0;
  for (const auto& p : parts) {
    require(p.rows() == n, "concat_cols: row counts differ");
    total += p.cols();
  }
  std::vector<double> out(n * total);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t m = p.cols();
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t c = 0; c < m; ++c) out[r * total + offset + c] = p.values()[r * m + c];
    }
    offset += m;
  }
  return make_result("concat_cols", {n, total}, std::move(out), parts, [parts, n, total](std::span<const double> g) {
    std::size_t off = 0;
    for (const auto& p : parts) {
      const std::size_t m = p.cols();
      accumulate(p, [&](std::span<double> gp) {
        for (std::size_t r = 0; r < n; ++r) {
          for (std::size_t c = 0; c < m; ++c) gp[r * m + c] += g[r * total + off + c];
        }
      });
      off += m;
    }
  });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  require(!parts.empty(), "concat_rows: no inputs");
  const std::size_t m = parts.front().cols();
  std::size_t total = 0;
  std::vector<double> out;
  for (const auto& p : parts) {
    require(p.cols() == m, "concat_rows: column counts differ");
    total += p.rows();
    out.insert(out.end(), p.values().begin(), p.values().end());
  }
  return make_result("concat_rows", {total, m}, std::move(out), parts, [parts](std::span<const double> g) {
    std::size_t off = 0;
    for (const auto& p : parts) {
      accumulate(p, [&](std::span<double> gp) {
        for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += g[off + i];
      });
      off += p.numel();
    }
  });
}

Tensor gather_rows(const Tensor& a, std::span<const std::size_t> rows) {
  const std::size_t n = a.rows(), m = a.cols();
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  std::vector<double> out(idx.size() * m);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    require(idx[i] < n, "gather_rows: row index out of range");
    std::copy_n(a.values().begin() + static_cast<std::ptrdiff_t>(idx[i] * m), m,
                out.begin() + static_cast<std::ptrdiff_t>(i * m));
  }
  return make_result("gather_rows", {idx.size(), m}, std::move(out), {a}, [a, idx, m](std::span<const double> g) {
    accumulate(a, [&](std::span<double> ga) {
      for (std::size_t i = 0; i < idx.size(); ++i) {
        for (std::size_t c = 0; c < m; ++c) ga[idx[i] * m + c] += g[i * m + c];
      }
    });
  });
}

Tensor repeat_row(const Tensor& row, std::size_t n) {
  const std::size_t m = row.numel();
  std::vector<double> out(n * m);
  for (std::size_t r = 0; r < n; ++r) std::copy(row.values().begin(), row.values().end(), out.begin() + static_cast<std::ptrdiff_t>(r * m));
  return make_result("repeat_row", {n, m}, std::move(out), {row}, [row, n, m](std::span<const double> g) {
    accumulate(row, [&](std::span<double> gr) {
      for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t c = 0; c < m; ++c) gr[c] += g[r * m + c];
      }
    });
  });
}

Tensor replace_rows(const Tensor& a, std::span<const std::size_t> rows, const Tensor& row) {
  const std::size_t n = a.rows(), m = a.cols();
  require(row.numel() == m, "replace_rows: replacement width mismatch");
  std::vector<char> replaced(n, 0);
  for (const auto r : rows) {
    require(r < n, "replace_rows: row index out of range");
    replaced[r] = 1;
  }
  std::vector<double> out(a.values().begin(), a.values().end());
  for (std::size_t r = 0; r < n; ++r) {
    if (replaced[r]) std::copy(row.values().begin(), row.values().end(), out.begin() + static_cast<std::ptrdiff_t>(r * m));
  }
  return make_result("replace_rows", a.shape(), std::move(out), {a, row}, [a, row, replaced, n, m](std::span<const double> g) {
    accumulate(a, [&](std::span<double> ga) {
      for (std::size_t r = 0; r < n; ++r) {
        if (replaced[r]) continue;
        for (std::size_t c = 0; c < m; ++c) ga[r * m + c] += g[r * m + c];
      }
    });
    accumulate(row, [&](std::span<double> gr) {
      for (std::size_t r = 0; r < n; ++r) {
        if (!replaced[r]) continue;
        for (std::size_t c = 0; c < m; ++c) gr[c] += g[r * m + c];
      }
    });
  });
}

Tensor pairwise_add(const Tensor& x, const Tensor& y) {
  const std::size_t n = x.rows(), m = y.rows(), h = x.cols();
  require(y.cols() == h, "pairwise_add: widths differ");
  std::vector<double> out(n * m * h);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      double* dst = out.data() + (i * m + j) * h;
      const double* xi = x.values().data() + i * h;
      const double* yj = y.values().data() + j * h;
      for (std::size_t c = 0; c < h; ++c) dst[c] = xi[c] + yj[c];
    }
  }
  return make_result("pairwise_add", {n * m, h}, std::move(out), {x, y}, [x, y, n, m, h](std::span<const double> g) {
    accumulate(x, [&](std::span<double> gx) {
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < m; ++j) {
          for (std::size_t c = 0; c < h; ++c) gx[i * h + c] += g[(i * m + j) * h + c];
        }
      }
    });
    accumulate(y, [&](std::span<double> gy) {
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < m; ++j) {
          for (std::size_t c = 0; c < h; ++c) gy[j * h + c] += g[(i * m + j) * h + c];
        }
      }
    });
  });
}

Tensor sum(const Tensor& a) {
  double total = 0.0;
  for (const double v : a.values()) total += v;
  return make_result("sum", {1}, {total}, {a}, [a](std::span<const double> g) {
    accumulate(a, [&](std::span<double> ga) {
      for (auto& v : ga) v += g[0];
    });
  });
}

Tensor mean(const Tensor& a) {
  require(a.numel() > 0, "mean: empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.numel()));
}

Tensor mse_loss(const Tensor& a, std::span<const double> target) {
  require(target.size() == a.numel(), "mse_loss: target size mismatch");
  require(a.numel() > 0, "mse_loss: empty input");
  std::vector<double> t(target.begin(), target.end());
  double total = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    const double d = a.values()[i] - t[i];
    total += d * d;
  }
  const double inv = 1.0 / static_cast<double>(t.size());
  return make_result("mse_loss", {1}, {total * inv}, {a}, [a, t, inv](std::span<const double> g) {
    accumulate(a, [&](std::span<double> ga) {
      for (std::size_t i = 0; i < t.size(); ++i) ga[i] += g[0] * 2.0 * (a.values()[i] - t[i]) * inv;
    });
  });
}

Tensor l1_loss(const Tensor& a, std::span<const double> target) {
  require(target.size() == a.numel(), "l1_loss: target size mismatch");
  require(a.numel() > 0, "l1_loss: empty input");
  std::vector<double> t(target.begin(), target.end());
  double total = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i) total += std::abs(a.values()[i] - t[i]);
  const double inv = 1.0 / static_cast<double>(t.size());
  return make_result("l1_loss", {1}, {total * inv}, {a}, [a, t, inv](std::span<const double> g) {
    accumulate(a, [&](std::span<double> ga) {
      for (std::size_t i = 0; i < t.size(); ++i) {
        const double d = a.values()[i] - t[i];
        if (d > 0.0) ga[i] += g[0] * inv;
        if (d < 0.0) ga[i] -= g[0] * inv;
      }
    });
  });
}

Tensor bce_with_logits(const Tensor& logits, std::span<const double> target) {
  require(target.size() == logits.numel(), "bce_with_logits: target size mismatch");
  require(logits.numel() > 0, "bce_with_logits: empty input");
  std::vector<double> t(target.begin(), target.end());
  double total = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    const double z = logits.values()[i];
    // max(z, 0) - z t + log(1 + exp(-|z|))
    total += std::max(z, 0.0) - z * t[i] + std::log1p(std::exp(-std::abs(z)));
  }
  const double inv = 1.0 / static_cast<double>(t.size());
  return make_result("bce_with_logits", {1}, {total * inv}, {logits}, [logits, t, inv](std::span<const double> g) {
    accumulate(logits, [&](std::span<double> gl) {
      for (std::size_t i = 0; i < t.size(); ++i) {
        const double p = 1.0 / (1.0 + std::exp(-logits.values()[i]));
        gl[i] += g[0] * (p - t[i]) * inv;
      }
    });
  });
}

}  // namespace ops
}  // namespace mapkit
