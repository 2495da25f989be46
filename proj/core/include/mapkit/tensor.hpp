#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace mapkit {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

struct TensorNode {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until a gradient is accumulated
  bool requires_grad = false;

  std::span<double> grad_buffer();
};

/// Shared handle to a dense double-precision array.
///
/// Copies alias the same storage. Results of ops on tensors that require
/// gradients are recorded on the calling thread's Tape.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor constant(Shape shape, std::vector<double> values);
  static Tensor parameter(Shape shape, std::vector<double> values);
  static Tensor scalar(double value);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t numel() const { return node_->value.size(); }
  /// 2-D accessors; a rank-1 tensor reads as a single row.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> values() const { return node_->value; }
  std::span<double> mutable_values() { return node_->value; }
  double item() const;
  double at(std::size_t r, std::size_t c) const { return node_->value[r * cols() + c]; }

  bool requires_grad() const { return node_ && node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  bool has_grad() const { return !node_->grad.empty(); }
  /// Accumulated gradient, zeros if none was ever written.
  std::vector<double> grad() const;
  std::span<double> grad_buffer() { return node_->grad_buffer(); }
  void zero_grad() { node_->grad.clear(); }

  /// Value copy cut from the graph.
  Tensor detach() const;

  const std::shared_ptr<TensorNode>& node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<TensorNode> node) : node_(std::move(node)) {}
  friend Tensor make_result(std::string_view, Shape, std::vector<double>, std::initializer_list<Tensor>,
                            std::function<void(std::span<const double>)>);
  friend Tensor make_result(std::string_view, Shape, std::vector<double>, const std::vector<Tensor>&,
                            std::function<void(std::span<const double>)>);

  std::shared_ptr<TensorNode> node_;
};

/// Ordered record of differentiable operations for one thread.
class Tape {
 public:
  using BackwardFn = std::function<void(std::span<const double> out_grad)>;

  struct Record {
    std::string_view op;
    std::shared_ptr<TensorNode> output;
    BackwardFn backward;
  };

  /// The calling thread's tape.
  static Tape& current();

  void push(Record record) { records_.push_back(std::move(record)); }
  std::size_t size() const { return records_.size(); }
  const std::vector<Record>& records() const { return records_; }
  void clear() { records_.clear(); }

  bool enabled() const { return disabled_depth_ == 0; }

 private:
  friend class NoGradGuard;
  std::vector<Record> records_;
  int disabled_depth_ = 0;
};

/// Suspends recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() { ++Tape::current().disabled_depth_; }
  ~NoGradGuard() { --Tape::current().disabled_depth_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

/// Seeds d(loss)/d(loss) = 1, runs every record in reverse once, then clears the tape.
/// Throws std::invalid_argument for a non-scalar loss or one that is not on the tape.
void backward(const Tensor& loss);

/// Creates an op result. When the tape is enabled and any input requires a
/// gradient, the result requires one too and `backward` is recorded.
Tensor make_result(std::string_view op, Shape shape, std::vector<double> values, std::initializer_list<Tensor> inputs,
                   std::function<void(std::span<const double>)> backward);
Tensor make_result(std::string_view op, Shape shape, std::vector<double> values, const std::vector<Tensor>& inputs,
                   std::function<void(std::span<const double>)> backward);

namespace ops {

Tensor matmul(const Tensor& a, const Tensor& b);
/// a * b^T without materializing the transpose.
Tensor matmul_nt(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
/// a[r, :] + bias for every row r; bias has a.cols() entries.
Tensor add_bias(const Tensor& a, const Tensor& bias);
/// x[..., d_in] * w[d_in, d_out] + b[d_out].
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

Tensor relu(const Tensor& a);
Tensor gelu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
/// Elementwise f with derivative df; used for custom activations and tests.
Tensor unary_map(const Tensor& a, std::function<double(double)> f, std::function<double(double)> df);

/// Numerically stable softmax along `axis`.
Tensor softmax(const Tensor& a, std::size_t axis);
/// Normalizes the last axis, then applies gain and bias.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

Tensor slice_cols(const Tensor& a, std::size_t start, std::size_t count);
Tensor slice_rows(const Tensor& a, std::size_t start, std::size_t count);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor gather_rows(const Tensor& a, std::span<const std::size_t> rows);
/// Repeats a single row (shape [d] or [1, d]) n times.
Tensor repeat_row(const Tensor& row, std::size_t n);
/// Copy of a with the listed rows replaced by `row`.
Tensor replace_rows(const Tensor& a, std::span<const std::size_t> rows, const Tensor& row);
/// out[i * m + j, :] = x[i, :] + y[j, :] for x [n, h], y [m, h].
Tensor pairwise_add(const Tensor& x, const Tensor& y);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

/// Mean squared error against constant targets.
Tensor mse_loss(const Tensor& a, std::span<const double> target);
/// Mean absolute error against constant targets; subgradient 0 at equality.
Tensor l1_loss(const Tensor& a, std::span<const double> target);
/// Mean binary cross-entropy over logits with targets in [0, 1].
Tensor bce_with_logits(const Tensor& logits, std::span<const double> target);

}  // namespace ops
}  // namespace mapkit
