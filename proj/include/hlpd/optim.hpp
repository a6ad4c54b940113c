#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "hlpd/error.hpp"

namespace hlpd {

struct AdamConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adaptive-moment descent on a flat parameter buffer.
class Adam {
 public:
  Adam(AdamConfig config, std::size_t size) : config_(config), m_(size, 0.0), v_(size, 0.0) {}

  // Descends along `grad` (the gradient of the loss being minimized).
  void step(std::span<double> params, std::span<const double> grad) {
    if (params.size() != m_.size() || grad.size() != m_.size()) throw InvalidConfig("optimizer size mismatch");
    ++t_;
    const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_[i] = config_.beta1 * m_[i] + (1.0 - config_.beta1) * grad[i];
      v_[i] = config_.beta2 * v_[i] + (1.0 - config_.beta2) * grad[i] * grad[i];
      const double mhat = m_[i] / c1;
      const double vhat = v_[i] / c2;
      params[i] -= config_.learning_rate * mhat / (std::sqrt(vhat) + config_.eps);
    }
  }

  long steps() const noexcept { return t_; }

 private:
  AdamConfig config_;
  std::vector<double> m_;
  std::vector<double> v_;
  long t_ = 0;
};

}  // namespace hlpd
