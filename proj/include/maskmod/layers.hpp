#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "maskmod/tensor.hpp"

namespace maskmod::nn {

struct Conv2dParams {
  Tensor weight;  // [out_ch, in_ch, kh, kw]
  Tensor bias;    // optional [out_ch]
  std::size_t stride = 1;
  std::size_t padding = 0;
};

/// Cross-correlation of x [n,c,h,w]; output extent (h + 2p - kh)/stride + 1.
Tensor conv2d(const Tensor& x, const Conv2dParams& p);

/// x [n,in] times weight [out,in] transposed, plus optional bias [out].
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias = {});

struct BatchNormParams {
  Tensor scale;         // [channels], learnable
  Tensor bias;          // [channels], learnable
  Tensor running_mean;  // [channels], updated in training mode
  Tensor running_var;   // [channels], kept > 0
  double momentum = 0.1;
  double eps = 1e-5;

  static BatchNormParams identity(std::size_t channels);
  std::size_t channels() const { return scale.numel(); }
  BatchNormParams clone() const;
};

/// Batch normalization over [n,c] or [n,c,h,w]. Training mode uses biased
/// batch statistics and updates the running ones (unbiased variance) by
/// exponential moving average with `momentum`; eval mode uses running stats.
Tensor batchnorm(const Tensor& x, BatchNormParams& p, bool training);

Tensor max_pool2d(const Tensor& x, std::size_t kernel, std::size_t stride);

/// [n,c,h,w] -> [n,c]
Tensor global_avg_pool(const Tensor& x);

/// Mean negative log-likelihood of integer labels under softmax(logits).
Tensor softmax_xent(const Tensor& logits, std::span<const int> labels);

/// Row-wise argmax of [n,k] logits.
std::vector<int> argmax_rows(const Tensor& logits);

}  // namespace maskmod::nn
