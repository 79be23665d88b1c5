#include "maskmod/kernels.hpp"

namespace maskmod::kernels::serial {

void conv2d_forward(const ConvGeometry& g, std::span<const double> x, std::span<const double> w,
                    std::span<double> y) {
  const std::size_t oh = g.out_h(), ow = g.out_w();
  for (std::size_t n = 0; n < g.batch; ++n)
    for (std::size_t o = 0; o < g.out_channels; ++o)
      for (std::size_t oy = 0; oy < oh; ++oy)
        for (std::size_t ox = 0; ox < ow; ++ox) {
          double acc = 0.0;
          for (std::size_t c = 0; c < g.in_channels; ++c)
            for (std::size_t ky = 0; ky < g.kernel_h; ++ky) {
              const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                                        static_cast<std::ptrdiff_t>(g.padding);
              if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.in_h)) continue;
              for (std::size_t kx = 0; kx < g.kernel_w; ++kx) {
                const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                                          static_cast<std::ptrdiff_t>(g.padding);
                if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.in_w)) continue;
                acc += x[((n * g.in_channels + c) * g.in_h + iy) * g.in_w + ix] *
                       w[((o * g.in_channels + c) * g.kernel_h + ky) * g.kernel_w + kx];
              }
            }
          y[((n * g.out_channels + o) * oh + oy) * ow + ox] = acc;
        }
}

void conv2d_backward_input(const ConvGeometry& g, std::span<const double> gy, std::span<const double> w,
                           std::span<double> gx) {
  const std::size_t oh = g.out_h(), ow = g.out_w();
  for (std::size_t n = 0; n < g.batch; ++n)
    for (std::size_t c = 0; c < g.in_channels; ++c)
      for (std::size_t iy = 0; iy < g.in_h; ++iy)
        for (std::size_t ix = 0; ix < g.in_w; ++ix) {
          double acc = 0.0;
          for (std::size_t o = 0; o < g.out_channels; ++o)
            for (std::size_t ky = 0; ky < g.kernel_h; ++ky) {
              const std::size_t ty = iy + g.padding;
              if (ty < ky || (ty - ky) % g.stride != 0) continue;
              const std::size_t oy = (ty - ky) / g.stride;
              if (oy >= oh) continue;
              for (std::size_t kx = 0; kx < g.kernel_w; ++kx) {
                const std::size_t tx = ix + g.padding;
                if (tx < kx || (tx - kx) % g.stride != 0) continue;
                const std::size_t ox = (tx - kx) / g.stride;
                if (ox >= ow) continue;
                acc += gy[((n * g.out_channels + o) * oh + oy) * ow + ox] *
                       w[((o * g.in_channels + c) * g.kernel_h + ky) * g.kernel_w + kx];
              }
            }
          gx[((n * g.in_channels + c) * g.in_h + iy) * g.in_w + ix] = acc;
        }
}

void conv2d_backward_weight(const ConvGeometry& g, std::span<const double> gy, std::span<const double> x,
                            std::span<double> gw) {
  const std::size_t oh = g.out_h(), ow = g.out_w();
  for (std::size_t o = 0; o < g.out_channels; ++o)
    for (std::size_t c = 0; c < g.in_channels; ++c)
      for (std::size_t ky = 0; ky < g.kernel_h; ++ky)
        for (std::size_t kx = 0; kx < g.kernel_w; ++kx) {
          double acc = 0.0;
          for (std::size_t n = 0; n < g.batch; ++n)
            for (std::size_t oy = 0; oy < oh; ++oy) {
              const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                                        static_cast<std::ptrdiff_t>(g.padding);
              if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.in_h)) continue;
              for (std::size_t ox = 0; ox < ow; ++ox) {
                const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                                          static_cast<std::ptrdiff_t>(g.padding);
                if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.in_w)) continue;
                acc += gy[((n * g.out_channels + o) * oh + oy) * ow + ox] *
                       x[((n * g.in_channels + c) * g.in_h + iy) * g.in_w + ix];
              }
            }
          gw[((o * g.in_channels + c) * g.kernel_h + ky) * g.kernel_w + kx] = acc;
        }
}

void dense_forward(std::size_t batch, std::size_t in, std::size_t out, std::span<const double> x,
                   std::span<const double> w, std::span<const double> b, std::span<double> y) {
  for (std::size_t n = 0; n < batch; ++n)
    for (std::size_t o = 0; o < out; ++o) {
      double acc = 0.0;
      for (std::size_t i = 0; i < in; ++i) acc += x[n * in + i] * w[o * in + i];
      if (!b.empty()) acc += b[o];
      y[n * out + o] = acc;
    }
}

void dense_backward_input(std::size_t batch, std::size_t in, std::size_t out, std::span<const double> gy,
                          std::span<const double> w, std::span<double> gx) {
  for (std::size_t n = 0; n < batch; ++n)
    for (std::size_t i = 0; i < in; ++i) {
      double acc = 0.0;
      for (std::size_t o = 0; o < out; ++o) acc += gy[n * out + o] * w[o * in + i];
      gx[n * in + i] = acc;
    }
}

void dense_backward_weight(std::size_t batch, std::size_t in, std::size_t out, std::span<const double> gy,
                           std::span<const double> x, std::span<double> gw) {
  for (std::size_t o = 0; o < out; ++o)
    for (std::size_t i = 0; i < in; ++i) {
      double acc = 0.0;
      for (std::size_t n = 0; n < batch; ++n) acc += gy[n * out + o] * x[n * in + i];
      gw[o * in + i] = acc;
    }
}

void transform_weights(std::span<const double> w, std::span<const double> m, const TransformCoefficients& k,
                       std::size_t out_channels, std::span<double> out) {
  const std::size_t per_channel = w.size() / out_channels;
  for (std::size_t j = 0; j < w.size(); ++j) {
    const double k1 = k.k1.size() == 1 ? k.k1[0] : k.k1[j / per_channel];
    // The first non-zero term is assigned rather than added to 0.0 so that a
    // single surviving term reproduces its value exactly, including -0.0.
    double acc = 0.0;
    bool started = false;
    auto put = [&](double term) {
      acc = started ? acc + term : term;
      started = true;
    };
    if (k.k0 != 0.0) put(k.k0 * w[j]);
    if (k1 != 0.0) put(k1);
    if (k.k2 != 0.0) put(k.k2 * m[j]);
    if (k.k3 != 0.0) put(k.k3 * (w[j] * m[j]));
    out[j] = acc;
  }
}

}  // namespace maskmod::kernels::serial
