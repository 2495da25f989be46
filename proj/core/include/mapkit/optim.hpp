#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "mapkit/nn.hpp"

namespace mapkit {

struct AdamWConfig {
  double lr = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

/// AdamW with decoupled weight decay and bias correction.
///
/// Parameters without a gradient in a step are left untouched (their moments
/// do not advance); a step where no parameter has a gradient is an error.
class AdamW {
 public:
  AdamW(nn::ParameterSet params, AdamWConfig cfg);

  void step();
  void zero_grad() { params_.zero_grad(); }

  std::int64_t steps() const { return step_; }
  const AdamWConfig& config() const { return cfg_; }
  void set_lr(double lr) { cfg_.lr = lr; }
  const nn::ParameterSet& params() const { return params_; }

 private:
  nn::ParameterSet params_;
  AdamWConfig cfg_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  std::int64_t step_ = 0;
};

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t coordinates = 0;
};

/// Relative error |a - n| / max(|a|, |n|, 1e-6) between analytic and central-difference gradients.
double relative_error(double analytic, double numeric);

/// Compares the analytic gradient of the scalar `f()` with respect to each
/// tensor in `inputs` against (f(x+eps) - f(x-eps)) / 2eps. Up to
/// `max_coords` coordinates per input are sampled (all when the input is smaller).
GradCheckResult grad_check(const std::function<Tensor()>& f, const std::vector<Tensor>& inputs, double eps = 1e-5,
                           std::size_t max_coords = 100, std::uint64_t seed = 0);

/// Single-input form: f maps x to a scalar.
double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double eps = 1e-5);

}  // namespace mapkit
