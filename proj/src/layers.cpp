#include "maskmod/layers.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "maskmod/error.hpp"
#include "maskmod/kernels.hpp"

namespace maskmod::nn {

namespace {

kernels::ConvGeometry conv_geometry(const Tensor& x, const Conv2dParams& p) {
  if (x.rank() != 4 || p.weight.rank() != 4) {
    throw Error(ErrorKind::shape_mismatch, "conv2d: expected 4-d input and weight, got " +
                                               shape_to_string(x.shape()) + " and " +
                                               shape_to_string(p.weight.shape()));
  }
  if (x.dim(1) != p.weight.dim(1)) {
    throw Error(ErrorKind::shape_mismatch, "conv2d: input channels " + shape_to_string(x.shape()) +
                                               " do not match weight " + shape_to_string(p.weight.shape()));
  }
  if (p.stride == 0) throw Error(ErrorKind::invalid_argument, "conv2d: stride must be positive");
  kernels::ConvGeometry g;
  g.batch = x.dim(0);
  g.in_channels = x.dim(1);
  g.in_h = x.dim(2);
  g.in_w = x.dim(3);
  g.out_channels = p.weight.dim(0);
  g.kernel_h = p.weight.dim(2);
  g.kernel_w = p.weight.dim(3);
  g.stride = p.stride;
  g.padding = p.padding;
  const std::size_t ph = g.in_h + 2 * g.padding, pw = g.in_w + 2 * g.padding;
  if (g.kernel_h > ph || g.kernel_w > pw) {
    throw Error(ErrorKind::shape_mismatch, "conv2d: kernel " + shape_to_string(p.weight.shape()) +
                                               " larger than padded input " + shape_to_string(x.shape()));
  }
  if ((ph - g.kernel_h) % g.stride != 0 || (pw - g.kernel_w) % g.stride != 0) {
    throw Error(ErrorKind::shape_mismatch, "conv2d: non-integral output extent for input " +
                                               shape_to_string(x.shape()) + ", kernel " +
                                               shape_to_string(p.weight.shape()) + ", stride " +
                                               std::to_string(g.stride));
  }
  if (p.bias.defined() && p.bias.numel() != g.out_channels) {
    throw Error(ErrorKind::shape_mismatch, "conv2d: bias " + shape_to_string(p.bias.shape()) +
                                               " does not match out channels " + std::to_string(g.out_channels));
  }
  return g;
}

bool use_parallel() { return kernels::backend() == kernels::Backend::parallel; }

}  // namespace

Tensor conv2d(const Tensor& x, const Conv2dParams& p) {
  const auto g = conv_geometry(x, p);
  std::vector<double> y(g.output_size());
  if (use_parallel()) {
    kernels::parallel::conv2d_forward(g, x.data(), p.weight.data(), y);
  } else {
    kernels::serial::conv2d_forward(g, x.data(), p.weight.data(), y);
  }
  const std::size_t plane = g.out_h() * g.out_w();
  if (p.bias.defined()) {
    auto b = p.bias.data();
    for (std::size_t n = 0; n < g.batch; ++n)
      for (std::size_t o = 0; o < g.out_channels; ++o)
        for (std::size_t i = 0; i < plane; ++i) y[(n * g.out_channels + o) * plane + i] += b[o];
  }

  std::vector<Tensor> inputs{x, p.weight};
  if (p.bias.defined()) inputs.push_back(p.bias);
  const Tensor weight = p.weight;
  const bool has_bias = p.bias.defined();
  const bool need_input_grad = x.requires_grad();
  const bool need_weight_grad = weight.requires_grad();
  return forward_op(
      "conv2d", std::move(inputs), {g.batch, g.out_channels, g.out_h(), g.out_w()}, std::move(y),
      [g, x, weight, has_bias, need_input_grad, need_weight_grad, plane](std::span<const double> gy) {
        std::vector<std::vector<double>> grads(has_bias ? 3 : 2);
        if (need_input_grad) {
          grads[0].resize(g.input_size());
          if (use_parallel()) {
            kernels::parallel::conv2d_backward_input(g, gy, weight.data(), grads[0]);
          } else {
            kernels::serial::conv2d_backward_input(g, gy, weight.data(), grads[0]);
          }
        }
        if (need_weight_grad) {
          grads[1].resize(g.weight_size());
          if (use_parallel()) {
            kernels::parallel::conv2d_backward_weight(g, gy, x.data(), grads[1]);
          } else {
            kernels::serial::conv2d_backward_weight(g, gy, x.data(), grads[1]);
          }
        }
        if (has_bias) {
          grads[2].assign(g.out_channels, 0.0);
          for (std::size_t n = 0; n < g.batch; ++n)
            for (std::size_t o = 0; o < g.out_channels; ++o)
              for (std::size_t i = 0; i < plane; ++i) grads[2][o] += gy[(n * g.out_channels + o) * plane + i];
        }
        return grads;
      });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (x.rank() != 2 || weight.rank() != 2 || x.dim(1) != weight.dim(1)) {
    throw Error(ErrorKind::shape_mismatch, "linear: input " + shape_to_string(x.shape()) +
                                               " incompatible with weight " + shape_to_string(weight.shape()));
  }
  const std::size_t batch = x.dim(0), in = x.dim(1), out = weight.dim(0);
  if (bias.defined() && bias.numel() != out) {
    throw Error(ErrorKind::shape_mismatch,
                "linear: bias " + shape_to_string(bias.shape()) + " does not match " + std::to_string(out) + " outputs");
  }
  std::vector<double> y(batch * out);
  std::span<const double> b = bias.defined() ? bias.data() : std::span<const double>{};
  if (use_parallel()) {
    kernels::parallel::dense_forward(batch, in, out, x.data(), weight.data(), b, y);
  } else {
    kernels::serial::dense_forward(batch, in, out, x.data(), weight.data(), b, y);
  }

  std::vector<Tensor> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  const bool has_bias = bias.defined();
  const bool need_input_grad = x.requires_grad();
  const bool need_weight_grad = weight.requires_grad();
  return forward_op("linear", std::move(inputs), {batch, out}, std::move(y),
                    [=](std::span<const double> gy) {
                      std::vector<std::vector<double>> grads(has_bias ? 3 : 2);
                      if (need_input_grad) {
                        grads[0].resize(batch * in);
                        if (use_parallel()) {
                          kernels::parallel::dense_backward_input(batch, in, out, gy, weight.data(), grads[0]);
                        } else {
                          kernels::serial::dense_backward_input(batch, in, out, gy, weight.data(), grads[0]);
                        }
                      }
                      if (need_weight_grad) {
                        grads[1].resize(out * in);
                        if (use_parallel()) {
                          kernels::parallel::dense_backward_weight(batch, in, out, gy, x.data(), grads[1]);
                        } else {
                          kernels::serial::dense_backward_weight(batch, in, out, gy, x.data(), grads[1]);
                        }
                      }
                      if (has_bias) {
                        grads[2].assign(out, 0.0);
                        for (std::size_t n = 0; n < batch; ++n)
                          for (std::size_t o = 0; o < out; ++o) grads[2][o] += gy[n * out + o];
                      }
                      return grads;
                    });
}

BatchNormParams BatchNormParams::identity(std::size_t channels) {
  BatchNormParams p;
  p.scale = Tensor::full({channels}, 1.0, true);
  p.bias = Tensor::zeros({channels}, true);
  p.running_mean = Tensor::zeros({channels});
  p.running_var = Tensor::full({channels}, 1.0);
  return p;
}

BatchNormParams BatchNormParams::clone() const {
  BatchNormParams p;
  p.scale = scale.clone();
  p.bias = bias.clone();
  p.running_mean = running_mean.clone();
  p.running_var = running_var.clone();
  p.momentum = momentum;
  p.eps = eps;
  return p;
}

Tensor batchnorm(const Tensor& x, BatchNormParams& p, bool training) {
  if (x.rank() != 2 && x.rank() != 4) {
    throw Error(ErrorKind::shape_mismatch, "batchnorm: expected [n,c] or [n,c,h,w], got " + shape_to_string(x.shape()));
  }
  const std::size_t n = x.dim(0), c = x.dim(1);
  const std::size_t plane = x.rank() == 4 ? x.dim(2) * x.dim(3) : 1;
  if (p.channels() != c || p.bias.numel() != c || p.running_mean.numel() != c || p.running_var.numel() != c) {
    throw Error(ErrorKind::shape_mismatch, "batchnorm: parameters for " + std::to_string(p.channels()) +
                                               " channels applied to " + shape_to_string(x.shape()));
  }
  const std::size_t count = n * plane;
  if (training && count < 2) {
    throw Error(ErrorKind::invalid_argument, "batchnorm: training mode needs at least 2 values per channel, got " +
                                                 shape_to_string(x.shape()));
  }

  auto v = x.data();
  std::vector<double> mean(c, 0.0), var(c, 0.0);
  if (training) {
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t i = 0; i < plane; ++i) mean[ch] += v[(b * c + ch) * plane + i];
    for (auto& m : mean) m /= static_cast<double>(count);
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t i = 0; i < plane; ++i) {
          const double d = v[(b * c + ch) * plane + i] - mean[ch];
          var[ch] += d * d;
        }
    for (auto& s : var) s /= static_cast<double>(count);

    auto rm = p.running_mean.mutable_data();
    auto rv = p.running_var.mutable_data();
    const double unbias = static_cast<double>(count) / static_cast<double>(count - 1);
    for (std::size_t ch = 0; ch < c; ++ch) {
      rm[ch] = round_value((1.0 - p.momentum) * rm[ch] + p.momentum * mean[ch]);
      rv[ch] = round_value((1.0 - p.momentum) * rv[ch] + p.momentum * var[ch] * unbias);
    }
  } else {
    auto rm = p.running_mean.data();
    auto rv = p.running_var.data();
    for (std::size_t ch = 0; ch < c; ++ch) {
      if (!(rv[ch] > 0.0)) {
        throw Error(ErrorKind::invariant_violation, "batchnorm: running variance must be positive");
      }
      mean[ch] = rm[ch];
      var[ch] = rv[ch];
    }
  }

  std::vector<double> inv_std(c), xhat(v.size()), y(v.size());
  auto scale = p.scale.data();
  auto shift = p.bias.data();
  for (std::size_t ch = 0; ch < c; ++ch) inv_std[ch] = 1.0 / std::sqrt(var[ch] + p.eps);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t i = 0; i < plane; ++i) {
        const std::size_t idx = (b * c + ch) * plane + i;
        xhat[idx] = (v[idx] - mean[ch]) * inv_std[ch];
        y[idx] = scale[ch] * xhat[idx] + shift[ch];
      }

  const Tensor scale_t = p.scale;
  return forward_op(
      "batchnorm", {x, p.scale, p.bias}, x.shape(), std::move(y),
      [=, xhat = std::move(xhat), inv_std = std::move(inv_std)](std::span<const double> gy) {
        auto scale = scale_t.data();
        std::vector<double> gx(gy.size()), gscale(c, 0.0), gshift(c, 0.0);
        for (std::size_t b = 0; b < n; ++b)
          for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t i = 0; i < plane; ++i) {
              const std::size_t idx = (b * c + ch) * plane + i;
              gshift[ch] += gy[idx];
              gscale[ch] += gy[idx] * xhat[idx];
            }
        const double m = static_cast<double>(count);
        for (std::size_t b = 0; b < n; ++b)
          for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t i = 0; i < plane; ++i) {
              const std::size_t idx = (b * c + ch) * plane + i;
              if (training) {
                gx[idx] = scale[ch] * inv_std[ch] / m * (m * gy[idx] - gshift[ch] - xhat[idx] * gscale[ch]);
              } else {
                gx[idx] = scale[ch] * inv_std[ch] * gy[idx];
              }
            }
        return std::vector<std::vector<double>>{std::move(gx), std::move(gscale), std::move(gshift)};
      });
}

Tensor max_pool2d(const Tensor& x, std::size_t kernel, std::size_t stride) {
  if (x.rank() != 4) throw Error(ErrorKind::shape_mismatch, "max_pool2d: expected 4-d input, got " + shape_to_string(x.shape()));
  if (kernel == 0 || stride == 0) throw Error(ErrorKind::invalid_argument, "max_pool2d: kernel and stride must be positive");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (kernel > h || kernel > w || (h - kernel) % stride != 0 || (w - kernel) % stride != 0) {
    throw Error(ErrorKind::shape_mismatch, "max_pool2d: window " + std::to_string(kernel) + "/" +
                                               std::to_string(stride) + " does not tile " + shape_to_string(x.shape()));
  }
  const std::size_t oh = (h - kernel) / stride + 1, ow = (w - kernel) / stride + 1;
  auto v = x.data();
  std::vector<double> y(n * c * oh * ow);
  std::vector<std::size_t> argmax(y.size());
  for (std::size_t plane = 0; plane < n * c; ++plane)
    for (std::size_t oy = 0; oy < oh; ++oy)
      for (std::size_t ox = 0; ox < ow; ++ox) {
        std::size_t best = plane * h * w + (oy * stride) * w + ox * stride;
        for (std::size_t ky = 0; ky < kernel; ++ky)
          for (std::size_t kx = 0; kx < kernel; ++kx) {
            const std::size_t idx = plane * h * w + (oy * stride + ky) * w + ox * stride + kx;
            if (v[idx] > v[best]) best = idx;
          }
        const std::size_t o = (plane * oh + oy) * ow + ox;
        y[o] = v[best];
        argmax[o] = best;
      }
  const std::size_t in_size = v.size();
  return forward_op("max_pool2d", {x}, {n, c, oh, ow}, std::move(y),
                    [in_size, argmax = std::move(argmax)](std::span<const double> gy) {
                      std::vector<double> gx(in_size, 0.0);
                      for (std::size_t o = 0; o < gy.size(); ++o) gx[argmax[o]] += gy[o];
                      return std::vector<std::vector<double>>{std::move(gx)};
                    });
}

Tensor global_avg_pool(const Tensor& x) {
  if (x.rank() != 4) {
    throw Error(ErrorKind::shape_mismatch, "global_avg_pool: expected 4-d input, got " + shape_to_string(x.shape()));
  }
  const std::size_t n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
  auto v = x.data();
  std::vector<double> y(n * c, 0.0);
  for (std::size_t p = 0; p < n * c; ++p) {
    double acc = 0.0;
    for (std::size_t i = 0; i < plane; ++i) acc += v[p * plane + i];
    y[p] = acc / static_cast<double>(plane);
  }
  return forward_op("global_avg_pool", {x}, {n, c}, std::move(y), [n, c, plane](std::span<const double> gy) {
    std::vector<double> gx(n * c * plane);
    for (std::size_t p = 0; p < n * c; ++p)
      for (std::size_t i = 0; i < plane; ++i) gx[p * plane + i] = gy[p] / static_cast<double>(plane);
    return std::vector<std::vector<double>>{std::move(gx)};
  });
}

Tensor softmax_xent(const Tensor& logits, std::span<const int> labels) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size()) {
    throw Error(ErrorKind::shape_mismatch, "softmax_xent: logits " + shape_to_string(logits.shape()) + " vs " +
                                               std::to_string(labels.size()) + " labels");
  }
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  auto z = logits.data();
  std::vector<double> probs(n * k);
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const int label = labels[i];
    if (label < 0 || static_cast<std::size_t>(label) >= k) {
      throw Error(ErrorKind::invalid_argument, "softmax_xent: label " + std::to_string(label) + " outside [0," +
                                                   std::to_string(k) + ")");
    }
    double zmax = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < k; ++j) zmax = std::max(zmax, z[i * k + j]);
    double denom = 0.0;
    for (std::size_t j = 0; j < k; ++j) denom += std::exp(z[i * k + j] - zmax);
    const double log_denom = std::log(denom);
    for (std::size_t j = 0; j < k; ++j) probs[i * k + j] = std::exp(z[i * k + j] - zmax - log_denom);
    loss += log_denom - (z[i * k + static_cast<std::size_t>(label)] - zmax);
  }
  loss /= static_cast<double>(n);
  std::vector<int> owned(labels.begin(), labels.end());
  return forward_op("softmax_xent", {logits}, {1}, {loss},
                    [n, k, probs = std::move(probs), owned = std::move(owned)](std::span<const double> g) {
                      std::vector<double> gz(n * k);
                      const double s = g[0] / static_cast<double>(n);
                      for (std::size_t i = 0; i < n; ++i)
                        for (std::size_t j = 0; j < k; ++j) {
                          const double onehot = static_cast<std::size_t>(owned[i]) == j ? 1.0 : 0.0;
                          gz[i * k + j] = s * (probs[i * k + j] - onehot);
                        }
                      return std::vector<std::vector<double>>{std::move(gz)};
                    });
}

std::vector<int> argmax_rows(const Tensor& logits) {
  if (logits.rank() != 2) throw Error(ErrorKind::shape_mismatch, "argmax_rows: expected [n,k], got " + shape_to_string(logits.shape()));
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  auto z = logits.data();
  std::vector<int> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < k; ++j)
      if (z[i * k + j] > z[i * k + best]) best = j;
    out[i] = static_cast<int>(best);
  }
  return out;
}

}  // namespace maskmod::nn
