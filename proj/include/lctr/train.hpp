#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <stdexcept>
#include <vector>

#include "lctr/config.hpp"
#include "lctr/dataset.hpp"
#include "lctr/model.hpp"
#include "lctr/optim.hpp"

namespace lctr {

/// Training produced a non-finite loss.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct EpochLog {
  std::size_t epoch = 0;
  double mean_loss = 0.0;
  double train_accuracy = 0.0;
};

class Trainer {
 public:
  struct StepResult {
    double loss = 0.0;  // mean over the batch
    std::size_t correct = 0;
  };

  Trainer(LctrModel& model, const OptimizerConfig& options);

  /// One AdamW update on the batch-mean cross-entropy.
  StepResult step(std::span<const data::Sample* const> batch);

  std::size_t steps() const { return optimizer_.step_count(); }

 private:
  LctrModel& model_;
  AdamW optimizer_;
};

/// Mini-batch training for config.epochs epochs with a seeded shuffle per
/// epoch. Throws DivergenceError on a non-finite loss.
std::vector<EpochLog> train(LctrModel& model, const RunConfig& config,
                            const std::vector<data::Sample>& samples,
                            const std::function<void(const EpochLog&)>& on_epoch = {});

}  // namespace lctr
