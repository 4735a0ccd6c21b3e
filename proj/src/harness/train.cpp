#include "lctr/train.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

#include "lctr/localization.hpp"
#include "lctr/ops.hpp"

namespace lctr {

namespace {

AdamW::Options to_adamw(const OptimizerConfig& c) {
  return AdamW::Options{c.lr, c.beta1, c.beta2, c.eps, c.weight_decay};
}

}  // namespace

Trainer::Trainer(LctrModel& model, const OptimizerConfig& options)
    : model_(model), optimizer_(model.parameters().items(), to_adamw(options)) {}

Trainer::StepResult Trainer::step(std::span<const data::Sample* const> batch) {
  if (batch.empty()) throw UsageError("Trainer::step: empty batch");
  optimizer_.zero_grad();
  StepResult result;
  const double weight = 1.0 / static_cast<double>(batch.size());
  for (const data::Sample* sample : batch) {
    LctrModel::Output out = model_.forward(sample->image);
    Tensor loss = out.classification.loss(sample->label);
    const double value = loss.item();
    if (!std::isfinite(value)) {
      std::ostringstream msg;
      msg << "non-finite loss " << value << " at optimizer step " << optimizer_.step_count() + 1
          << " (label " << sample->label << ")";
      throw DivergenceError(msg.str());
    }
    affine(loss, weight).backward();
    result.loss += weight * value;
    result.correct += loc::argmax(out.classification.probs.data()) == sample->label;
  }
  optimizer_.step();
  return result;
}

std::vector<EpochLog> train(LctrModel& model, const RunConfig& config,
                            const std::vector<data::Sample>& samples,
                            const std::function<void(const EpochLog&)>& on_epoch) {
  if (samples.empty()) throw UsageError("train: empty dataset");
  Trainer trainer(model, config.optimizer);
  std::vector<std::size_t> order(samples.size());
  std::vector<EpochLog> logs;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    Rng rng = Rng::derive(config.seed, 0x5eed0000ULL + epoch);
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[rng.below(i)]);
    }
    double loss_sum = 0.0;
    std::size_t correct = 0;
    std::vector<const data::Sample*> batch;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      batch.clear();
      for (std::size_t i = start; i < end; ++i) batch.push_back(&samples[order[i]]);
      const Trainer::StepResult r = trainer.step(batch);
      loss_sum += r.loss * static_cast<double>(batch.size());
      correct += r.correct;
    }
    EpochLog log{epoch + 1, loss_sum / static_cast<double>(samples.size()),
                 static_cast<double>(correct) / static_cast<double>(samples.size())};
    logs.push_back(log);
    if (on_epoch) on_epoch(log);
  }
  return logs;
}

}  // namespace lctr
