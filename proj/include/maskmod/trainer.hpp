#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "json.hpp"

#include "maskmod/data.hpp"
#include "maskmod/tensor.hpp"

namespace maskmod::train {

/// Two learning-rate groups, both divided by `decay_factor` from
/// `decay_epoch` on (epochs are 0-based).
struct Schedule {
  std::size_t epochs = 20;
  std::size_t decay_epoch = 15;
  std::size_t batch_size = 32;
  double adam_lr = 1e-4;
  double sgd_lr = 1e-3;
  double momentum = 0.9;
  double decay_factor = 10.0;

  double adam_lr_at(std::size_t epoch) const;
  double sgd_lr_at(std::size_t epoch) const;
  void validate() const;

  nlohmann::json to_json() const;
  static Schedule from_json(const nlohmann::json& j);
  static Schedule from_json(const nlohmann::json& j, Schedule defaults);
};

/// Learnable tensors split by optimizer: masks, k and BN parameters go to
/// Adam; classifier weights go to SGD with momentum.
struct ParamGroups {
  std::vector<Tensor> adam;
  std::vector<Tensor> sgd;
};

struct EpochMetrics {
  std::size_t epoch = 0;
  std::string split;
  double loss = 0.0;
  double accuracy = 0.0;
  double adam_lr = 0.0;
  double sgd_lr = 0.0;

  nlohmann::json to_json() const;
};

/// images [n,c,h,w] -> logits [n,k]
using ForwardFn = std::function<Tensor(const Tensor& images, bool training)>;

struct TrainOptions {
  Schedule schedule;
  std::uint64_t seed = 0;
  bool mirror = false;
  /// Builds batches on a producer thread through a bounded queue.
  bool prefetch = false;
  /// Evaluated after each epoch when set, reported with split "test".
  const data::Dataset* eval_set = nullptr;
  std::function<void(const EpochMetrics&)> on_epoch;
  /// Called after every optimizer step, mainly for tests.
  std::function<void(std::size_t epoch, std::size_t batch, double loss)> on_step;
};

struct TrainResult {
  std::vector<EpochMetrics> metrics;
};

/// Minimizes softmax cross-entropy of `forward` over `train_set`.
/// Throws numerical errors on a non-finite loss, naming epoch, batch and lrs.
TrainResult train(const ForwardFn& forward, const ParamGroups& groups, const data::Dataset& train_set,
                  const TrainOptions& options);

struct Accuracy {
  std::size_t correct = 0;
  std::size_t total = 0;
  double loss = 0.0;
  double value() const { return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total); }
};

/// Eval-mode pass over a dataset in fixed order.
Accuracy measure(const ForwardFn& forward, const data::Dataset& set, std::size_t batch_size = 128);

}  // namespace maskmod::train
