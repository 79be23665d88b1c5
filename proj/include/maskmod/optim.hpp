#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "maskmod/tensor.hpp"

namespace maskmod::optim {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with bias correction. No weight decay.
class Adam {
 public:
  Adam(std::vector<Tensor> params, AdamConfig cfg);

  /// Applies one update from the parameters' accumulated gradients.
  /// Parameters without a gradient are skipped and keep their moments.
  void step();
  void zero_grad();

  double lr() const { return cfg_.lr; }
  void set_lr(double lr) { cfg_.lr = lr; }
  std::uint64_t steps() const { return step_; }
  const std::vector<Tensor>& params() const { return params_; }

 private:
  std::vector<Tensor> params_;
  AdamConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  std::uint64_t step_ = 0;
};

struct SgdConfig {
  double lr = 1e-3;
  double momentum = 0.9;
};

/// v <- momentum * v + g;  p <- p - lr * v
class SgdMomentum {
 public:
  SgdMomentum(std::vector<Tensor> params, SgdConfig cfg);

  void step();
  void zero_grad();

  double lr() const { return cfg_.lr; }
  void set_lr(double lr) { cfg_.lr = lr; }
  std::uint64_t steps() const { return step_; }
  const std::vector<Tensor>& params() const { return params_; }

 private:
  std::vector<Tensor> params_;
  SgdConfig cfg_;
  std::vector<std::vector<double>> velocity_;
  std::uint64_t step_ = 0;
};

}  // namespace maskmod::optim
