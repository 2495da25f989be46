#include "mapkit/optim.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace mapkit {

AdamW::AdamW(nn::ParameterSet params, AdamWConfig cfg) : params_(std::move(params)), cfg_(cfg) {
  for (const auto& [name, t] : params_.items()) {
    m_.emplace_back(t.numel(), 0.0);
    v_.emplace_back(t.numel(), 0.0);
  }
}

void AdamW::step() {
  const auto& items = params_.items();
  const bool any = std::any_of(items.begin(), items.end(), [](const auto& it) { return it.second.has_grad(); });
  if (!any) throw std::logic_error("AdamW::step: no parameter has a gradient");
  ++step_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
  for (std::size_t p = 0; p < items.size(); ++p) {
    Tensor t = items[p].second;
    if (!t.has_grad()) continue;
    auto w = t.mutable_values();
    const auto g = t.grad_buffer();
    auto& m = m_[p];
    auto& v = v_[p];
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
      const double m_hat = m[i] / bc1;
      const double v_hat = v[i] / bc2;
      w[i] -= cfg_.lr * cfg_.weight_decay * w[i];
      w[i] -= cfg_.lr * m_hat / (std::sqrt(v_hat) + cfg_.eps);
    }
  }
}

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
  return std::abs(analytic - numeric) / denom;
}

GradCheckResult grad_check(const std::function<Tensor()>& f, const std::vector<Tensor>& inputs, double eps,
                           std::size_t max_coords, std::uint64_t seed) {
  if (eps < 1e-6 || eps > 1e-3) throw std::invalid_argument("grad_check: eps must lie in [1e-6, 1e-3]");
  std::vector<bool> restore_flag;
  for (auto t : inputs) {
    restore_flag.push_back(t.requires_grad());
    t.set_requires_grad(true);
    t.zero_grad();
  }
  Tape::current().clear();
  const Tensor y = f();
  backward(y);
  std::vector<std::vector<double>> analytic;
  for (const auto& t : inputs) analytic.push_back(t.grad());

  Rng rng(seed);
  GradCheckResult result;
  NoGradGuard guard;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    Tensor t = inputs[k];
    auto values = t.mutable_values();
    std::vector<std::size_t> coords(values.size());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (coords.size() > max_coords) {
      for (std::size_t i = 0; i < max_coords; ++i) {
        const auto j = i + static_cast<std::size_t>(rng.next() % (coords.size() - i));
        std::swap(coords[i], coords[j]);
      }
      coords.resize(max_coords);
    }
    for (const auto i : coords) {
      const double saved = values[i];
      values[i] = saved + eps;
      const double up = f().item();
      values[i] = saved - eps;
      const double down = f().item();
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      result.max_relative_error = std::max(result.max_relative_error, relative_error(analytic[k][i], numeric));
      ++result.coordinates;
    }
  }
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    Tensor t = inputs[k];
    t.zero_grad();
    t.set_requires_grad(restore_flag[k]);
  }
  return result;
}

double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double eps) {
  return grad_check([&] { return f(x); }, {x}, eps, x.numel()).max_relative_error;
}

}  // namespace mapkit
