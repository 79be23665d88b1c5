#pragma once

// Raw compute kernels over contiguous row-major buffers.
//
// Every kernel exists twice: `serial` is the plain reference loop nest and
// `parallel` distributes independent output elements over OpenMP threads.
// Each output element is accumulated by a single thread in the same order as
// the serial loop, so both produce bit-identical results for any thread count.

#include <cstddef>
#include <span>

namespace maskmod::kernels {

struct ConvGeometry {
  std::size_t batch = 0;
  std::size_t in_channels = 0;
  std::size_t in_h = 0, in_w = 0;
  std::size_t out_channels = 0;
  std::size_t kernel_h = 0, kernel_w = 0;
  std::size_t stride = 1, padding = 0;

  std::size_t out_h() const { return (in_h + 2 * padding - kernel_h) / stride + 1; }
  std::size_t out_w() const { return (in_w + 2 * padding - kernel_w) / stride + 1; }
  std::size_t input_size() const { return batch * in_channels * in_h * in_w; }
  std::size_t weight_size() const { return out_channels * in_channels * kernel_h * kernel_w; }
  std::size_t output_size() const { return batch * out_channels * out_h() * out_w(); }
};

/// Affine weight transform coefficients, per output channel for k1.
struct TransformCoefficients {
  double k0 = 0.0;
  std::span<const double> k1;  // size 1 or out_channels
  double k2 = 0.0;
  double k3 = 0.0;
};

namespace serial {

void conv2d_forward(const ConvGeometry& g, std::span<const double> x, std::span<const double> w,
                    std::span<double> y);
void conv2d_backward_input(const ConvGeometry& g, std::span<const double> gy, std::span<const double> w,
                           std::span<double> gx);
void conv2d_backward_weight(const ConvGeometry& g, std::span<const double> gy, std::span<const double> x,
                            std::span<double> gw);

/// y[n,o] = sum_i x[n,i] * w[o,i] + b[o]   (b may be empty)
void dense_forward(std::size_t batch, std::size_t in, std::size_t out, std::span<const double> x,
                   std::span<const double> w, std::span<const double> b, std::span<double> y);
void dense_backward_input(std::size_t batch, std::size_t in, std::size_t out, std::span<const double> gy,
                          std::span<const double> w, std::span<double> gx);
void dense_backward_weight(std::size_t batch, std::size_t in, std::size_t out, std::span<const double> gy,
                           std::span<const double> x, std::span<double> gw);

/// out = k0*W + k1 + k2*M + k3*(W*M), skipping terms whose coefficient is 0.
void transform_weights(std::span<const double> w, std::span<const double> m, const TransformCoefficients& k,
                       std::size_t out_channels, std::span<double> out);

}  // namespace serial

namespace parallel {

void conv2d_forward(const ConvGeometry& g, std::span<const double> x, std::span<const double> w,
                    std::span<double> y);
void conv2d_backward_input(const ConvGeometry& g, std::span<const double> gy, std::span<const double> w,
                           std::span<double> gx);
void conv2d_backward_weight(const ConvGeometry& g, std::span<const double> gy, std::span<const double> x,
                            std::span<double> gw);
void dense_forward(std::size_t batch, std::size_t in, std::size_t out, std::span<const double> x,
                   std::span<const double> w, std::span<const double> b, std::span<double> y);
void dense_backward_input(std::size_t batch, std::size_t in, std::size_t out, std::span<const double> gy,
                          std::span<const double> w, std::span<double> gx);
void dense_backward_weight(std::size_t batch, std::size_t in, std::size_t out, std::span<const double> gy,
                           std::span<const double> x, std::span<double> gw);
void transform_weights(std::span<const double> w, std::span<const double> m, const TransformCoefficients& k,
                       std::size_t out_channels, std::span<double> out);

}  // namespace parallel

enum class Backend { serial, parallel };

/// Backend used by the layers. Defaults to parallel.
void set_backend(Backend b);
Backend backend();

/// Caps OpenMP threads (0 = runtime default). No-op without OpenMP.
void set_num_threads(int n);
int max_threads();

}  // namespace maskmod::kernels
