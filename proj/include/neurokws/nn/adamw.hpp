#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "neurokws/nn/tensor.hpp"

namespace nkws::nn {

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

// AdamW with decoupled weight decay: theta <- theta - lr*wd*theta is applied
// before, and separately from, the bias-corrected Adam update.
template <class T>
class AdamW {
 public:
  explicit AdamW(AdamWConfig config = {}) : config_(config) {}

  const AdamWConfig& config() const { return config_; }
  std::size_t step_count() const { return step_; }

  void step(std::span<Parameter<T>* const> params) {
    if (first_moment_.empty()) {
      for (const auto* p : params) {
        first_moment_.emplace_back(p->value.size(), 0.0);
        second_moment_.emplace_back(p->value.size(), 0.0);
      }
    }
    if (first_moment_.size() != params.size())
      throw UsageError("AdamW: parameter list changed between steps");
    ++step_;
    const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(step_));
    const double decay = 1.0 - config_.lr * config_.weight_decay;
    for (std::size_t k = 0; k < params.size(); ++k) {
      auto& p = *params[k];
      auto& m = first_moment_[k];
      auto& v = second_moment_[k];
      if (p.grad.size() != p.value.size() || m.size() != p.value.size())
        throw DimensionError("AdamW: gradient shape mismatch for " + p.name);
      for (std::size_t i = 0; i < m.size(); ++i) {
        const double g = p.grad[i];
        m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * g;
        v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * g * g;
        const double m_hat = m[i] / bc1;
        const double v_hat = v[i] / bc2;
        double theta = static_cast<double>(p.value.values[i]) * decay;
        theta -= config_.lr * m_hat / (std::sqrt(v_hat) + config_.eps);
        p.value.values[i] = static_cast<T>(theta);
      }
    }
  }

 private:
  AdamWConfig config_;
  std::size_t step_ = 0;
  std::vector<std::vector<double>> first_moment_;
  std::vector<std::vector<double>> second_moment_;
};

}  // namespace nkws::nn
