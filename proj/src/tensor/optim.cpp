#include "lctr/optim.hpp"

#include <cmath>

namespace lctr {

AdamW::AdamW(std::vector<Parameter> params, Options options)
    : params_(std::move(params)), options_(options) {
  if (!(options_.lr > 0.0) || !(options_.eps > 0.0) || options_.weight_decay < 0.0 ||
      options_.beta1 < 0.0 || options_.beta1 >= 1.0 || options_.beta2 < 0.0 ||
      options_.beta2 >= 1.0) {
    throw ConfigError("AdamW: invalid hyperparameters");
  }
  for (const auto& p : params_) {
    first_moment_.emplace_back(p.tensor.numel(), 0.0);
    second_moment_.emplace_back(p.tensor.numel(), 0.0);
  }
}

void AdamW::step() {
  for (const auto& p : params_) {
    if (!p.tensor.has_grad()) {
      throw UsageError("AdamW::step: parameter '" + p.name + "' has no grad");
    }
  }
  ++step_;
  const double t = static_cast<double>(step_);
  const double correction1 = 1.0 - std::pow(options_.beta1, t);
  const double correction2 = 1.0 - std::pow(options_.beta2, t);
  const double decay = 1.0 - options_.lr * options_.weight_decay;

  for (std::size_t k = 0; k < params_.size(); ++k) {
    Tensor tensor = params_[k].tensor;
    auto values = tensor.mutable_data();
    auto grad = tensor.grad();
    auto& m = first_moment_[k];
    auto& v = second_moment_[k];
    for (std::size_t i = 0; i < values.size(); ++i) {
      values[i] *= decay;
      m[i] = options_.beta1 * m[i] + (1.0 - options_.beta1) * grad[i];
      v[i] = options_.beta2 * v[i] + (1.0 - options_.beta2) * grad[i] * grad[i];
      const double m_hat = m[i] / correction1;
      const double v_hat = v[i] / correction2;
      values[i] -= options_.lr * m_hat / (std::sqrt(v_hat) + options_.eps);
    }
  }
}

void AdamW::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

}  // namespace lctr
