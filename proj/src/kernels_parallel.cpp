#include "maskmod/kernels.hpp"

#include <atomic>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace maskmod::kernels {

namespace {
std::atomic<Backend> g_backend{Backend::parallel};
}

void set_backend(Backend b) { g_backend.store(b, std::memory_order_relaxed); }
Backend backend() { return g_backend.load(std::memory_order_relaxed); }

void set_num_threads(int n) {
#ifdef _OPENMP
  if (n > 0) omp_set_num_threads(n);
#else
  (void)n;
#endif
}

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

namespace parallel {

using Index = std::ptrdiff_t;

void conv2d_forward(const ConvGeometry& g, std::span<const double> x, std::span<const double> w,
                    std::span<double> y) {
  const Index oh = static_cast<Index>(g.out_h()), ow = static_cast<Index>(g.out_w());
  const Index batch = static_cast<Index>(g.batch), oc = static_cast<Index>(g.out_channels);
  const Index ic = static_cast<Index>(g.in_channels), ih = static_cast<Index>(g.in_h),
              iw = static_cast<Index>(g.in_w);
  const Index kh = static_cast<Index>(g.kernel_h), kw = static_cast<Index>(g.kernel_w);
  const Index stride = static_cast<Index>(g.stride), pad = static_cast<Index>(g.padding);

#pragma omp parallel for collapse(2) schedule(static)
  for (Index n = 0; n < batch; ++n)
    for (Index o = 0; o < oc; ++o) {
      double* out = y.data() + (n * oc + o) * oh * ow;
      for (Index oy = 0; oy < oh; ++oy)
        for (Index ox = 0; ox < ow; ++ox) {
          double acc = 0.0;
          for (Index c = 0; c < ic; ++c) {
            const double* xin = x.data() + (n * ic + c) * ih * iw;
            const double* wk = w.data() + (o * ic + c) * kh * kw;
            for (Index ky = 0; ky < kh; ++ky) {
              const Index iy = oy * stride + ky - pad;
              if (iy < 0 || iy >= ih) continue;
              for (Index kx = 0; kx < kw; ++kx) {
                const Index ix = ox * stride + kx - pad;
                if (ix < 0 || ix >= iw) continue;
                acc += xin[iy * iw + ix] * wk[ky * kw + kx];
              }
            }
          }
          out[oy * ow + ox] = acc;
        }
    }
}

void conv2d_backward_input(const ConvGeometry& g, std::span<const double> gy, std::span<const double> w,
                           std::span<double> gx) {
  const Index oh = static_cast<Index>(g.out_h()), ow = static_cast<Index>(g.out_w());
  const Index batch = static_cast<Index>(g.batch), oc = static_cast<Index>(g.out_channels);
  const Index ic = static_cast<Index>(g.in_channels), ih = static_cast<Index>(g.in_h),
              iw = static_cast<Index>(g.in_w);
  const Index kh = static_cast<Index>(g.kernel_h), kw = static_cast<Index>(g.kernel_w);
  const Index stride = static_cast<Index>(g.stride), pad = static_cast<Index>(g.padding);

#pragma omp parallel for collapse(2) schedule(static)
  for (Index n = 0; n < batch; ++n)
    for (Index c = 0; c < ic; ++c) {
      double* out = gx.data() + (n * ic + c) * ih * iw;
      for (Index iy = 0; iy < ih; ++iy)
        for (Index ix = 0; ix < iw; ++ix) {
          double acc = 0.0;
          for (Index o = 0; o < oc; ++o) {
            const double* up = gy.data() + (n * oc + o) * oh * ow;
            const double* wk = w.data() + (o * ic + c) * kh * kw;
            for (Index ky = 0; ky < kh; ++ky) {
              const Index ty = iy + pad - ky;
              if (ty < 0 || ty % stride != 0) continue;
              const Index oy = ty / stride;
              if (oy >= oh) continue;
              for (Index kx = 0; kx < kw; ++kx) {
                const Index tx = ix + pad - kx;
                if (tx < 0 || tx % stride != 0) continue;
                const Index ox = tx / stride;
                if (ox >= ow) continue;
                acc += up[oy * ow + ox] * wk[ky * kw + kx];
              }
            }
          }
          out[iy * iw + ix] = acc;
        }
    }
}

void conv2d_backward_weight(const ConvGeometry& g, std::span<const double> gy, std::span<const double> x,
                            std::span<double> gw) {
  const Index oh = static_cast<Index>(g.out_h()), ow = static_cast<Index>(g.out_w());
  const Index batch = static_cast<Index>(g.batch), oc = static_cast<Index>(g.out_channels);
  const Index ic = static_cast<Index>(g.in_channels), ih = static_cast<Index>(g.in_h),
              iw = static_cast<Index>(g.in_w);
  const Index kh = static_cast<Index>(g.kernel_h), kw = static_cast<Index>(g.kernel_w);
  const Index stride = static_cast<Index>(g.stride), pad = static_cast<Index>(g.padding);

#pragma omp parallel for collapse(2) schedule(static)
  for (Index o = 0; o < oc; ++o)
    for (Index c = 0; c < ic; ++c) {
      double* out = gw.data() + (o * ic + c) * kh * kw;
      for (Index ky = 0; ky < kh; ++ky)
        for (Index kx = 0; kx < kw; ++kx) {
          double acc = 0.0;
          for (Index n = 0; n < batch; ++n) {
            const double* up = gy.data() + (n * oc + o) * oh * ow;
            const double* xin = x.data() + (n * ic + c) * ih * iw;
            for (Index oy = 0; oy < oh; ++oy) {
              const Index iy = oy * stride + ky - pad;
              if (iy < 0 || iy >= ih) continue;
              for (Index ox = 0; ox < ow; ++ox) {
                const Index ix = ox * stride + kx - pad;
                if (ix < 0 || ix >= iw) continue;
                acc += up[oy * ow + ox] * xin[iy * iw + ix];
              }
            }
          }
          out[ky * kw + kx] = acc;
        }
    }
}

void dense_forward(std::size_t batch, std::size_t in, std::size_t out, std::span<const double> x,
                   std::span<const double> w, std::span<const double> b, std::span<double> y) {
  const Index nb = static_cast<Index>(batch), no = static_cast<Index>(out), ni = static_cast<Index>(in);
#pragma omp parallel for collapse(2) schedule(static)
  for (Index n = 0; n < nb; ++n)
    for (Index o = 0; o < no; ++o) {
      const double* xr = x.data() + n * ni;
      const double* wr = w.data() + o * ni;
      double acc = 0.0;
      for (Index i = 0; i < ni; ++i) acc += xr[i] * wr[i];
      if (!b.empty()) acc += b[o];
      y[n * no + o] = acc;
    }
}

void dense_backward_input(std::size_t batch, std::size_t in, std::size_t out, std::span<const double> gy,
                          std::span<const double> w, std::span<double> gx) {
  const Index nb = static_cast<Index>(batch), no = static_cast<Index>(out), ni = static_cast<Index>(in);
#pragma omp parallel for collapse(2) schedule(static)
  for (Index n = 0; n < nb; ++n)
    for (Index i = 0; i < ni; ++i) {
      double acc = 0.0;
      for (Index o = 0; o < no; ++o) acc += gy[n * no + o] * w[o * ni + i];
      gx[n * ni + i] = acc;
    }
}

void dense_backward_weight(std::size_t batch, std::size_t in, std::size_t out, std::span<const double> gy,
                           std::span<const double> x, std::span<double> gw) {
  const Index nb = static_cast<Index>(batch), no = static_cast<Index>(out), ni = static_cast<Index>(in);
#pragma omp parallel for collapse(2) schedule(static)
  for (Index o = 0; o < no; ++o)
    for (Index i = 0; i < ni; ++i) {
      double acc = 0.0;
      for (Index n = 0; n < nb; ++n) acc += gy[n * no + o] * x[n * ni + i];
      gw[o * ni + i] = acc;
    }
}

void transform_weights(std::span<const double> w, std::span<const double> m, const TransformCoefficients& k,
                       std::size_t out_channels, std::span<double> out) {
  const Index size = static_cast<Index>(w.size());
  const Index per_channel = static_cast<Index>(w.size() / out_channels);
  const bool channel_wise = k.k1.size() != 1;
#pragma omp parallel for schedule(static)
  for (Index j = 0; j < size; ++j) {
    const double k1 = channel_wise ? k.k1[j / per_channel] : k.k1[0];
    double acc = 0.0;
    bool started = false;
    if (k.k0 != 0.0) {
      acc = k.k0 * w[j];
      started = true;
    }
    if (k1 != 0.0) {
      acc = started ? acc + k1 : k1;
      started = true;
    }
    if (k.k2 != 0.0) {
      acc = started ? acc + k.k2 * m[j] : k.k2 * m[j];
      started = true;
    }
    if (k.k3 != 0.0) acc = started ? acc + k.k3 * (w[j] * m[j]) : k.k3 * (w[j] * m[j]);
    out[j] = acc;
  }
}

}  // namespace parallel
}  // namespace maskmod::kernels
