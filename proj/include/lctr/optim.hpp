#pragma once

#include <cstddef>
#include <vector>

#include "lctr/tensor.hpp"

namespace lctr {

/// AdamW with bias-corrected moments and decoupled weight decay.
class AdamW {
 public:
  struct Options {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.99;
    double eps = 1e-8;
    double weight_decay = 5e-4;
  };

  AdamW(std::vector<Parameter> params, Options options);

  /// Applies one update from the current grads. Throws UsageError if any
  /// parameter has no grad.
  void step();
  void zero_grad();

  std::size_t step_count() const { return step_; }
  const Options& options() const { return options_; }

 private:
  std::vector<Parameter> params_;
  Options options_;
  std::vector<std::vector<double>> first_moment_;
  std::vector<std::vector<double>> second_moment_;
  std::size_t step_ = 0;
};

}  // namespace lctr
