#include "maskmod/ops.hpp"

#include <numeric>

#include "maskmod/error.hpp"

namespace maskmod::ops {

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw Error(ErrorKind::shape_mismatch, std::string(op) + ": shape mismatch " + shape_to_string(a.shape()) +
                                               " vs " + shape_to_string(b.shape()));
  }
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  std::vector<double> out(a.numel());
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
  return forward_op("add", {a, b}, a.shape(), std::move(out), [](std::span<const double> g) {
    std::vector<double> up(g.begin(), g.end());
    return std::vector<std::vector<double>>{up, up};
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape("sub", a, b);
  std::vector<double> out(a.numel());
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i];
  return forward_op("sub", {a, b}, a.shape(), std::move(out), [](std::span<const double> g) {
    std::vector<double> up(g.begin(), g.end()), neg(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) neg[i] = -g[i];
    return std::vector<std::vector<double>>{up, neg};
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  std::vector<double> out(a.numel());
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
  return forward_op("mul", {a, b}, a.shape(), std::move(out), [a, b](std::span<const double> g) {
    auto x = a.data(), y = b.data();
    std::vector<double> ga(g.size()), gb(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) {
      ga[i] = g[i] * y[i];
      gb[i] = g[i] * x[i];
    }
    return std::vector<std::vector<double>>{std::move(ga), std::move(gb)};
  });
}

Tensor scale(const Tensor& x, const Tensor& s) {
  if (s.numel() != 1) {
    throw Error(ErrorKind::shape_mismatch, "scale: factor must have one element, got " + shape_to_string(s.shape()));
  }
  const double k = s.item();
  std::vector<double> out(x.numel());
  auto v = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = k * v[i];
  return forward_op("scale", {x, s}, x.shape(), std::move(out), [x, s](std::span<const double> g) {
    const double k = s.item();
    auto v = x.data();
    std::vector<double> gx(g.size());
    double gs = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) {
      gx[i] = k * g[i];
      gs += g[i] * v[i];
    }
    return std::vector<std::vector<double>>{std::move(gx), {gs}};
  });
}

Tensor mul_scalar(const Tensor& x, double s) {
  std::vector<double> out(x.numel());
  auto v = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = s * v[i];
  return forward_op("mul_scalar", {x}, x.shape(), std::move(out), [s](std::span<const double> g) {
    std::vector<double> gx(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] = s * g[i];
    return std::vector<std::vector<double>>{std::move(gx)};
  });
}

Tensor sum(const Tensor& x) {
  auto v = x.data();
  const double total = std::accumulate(v.begin(), v.end(), 0.0);
  const std::size_t n = x.numel();
  return forward_op("sum", {x}, {1}, {total}, [n](std::span<const double> g) {
    return std::vector<std::vector<double>>{std::vector<double>(n, g[0])};
  });
}

Tensor mean(const Tensor& x) { return mul_scalar(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor sum_axis(const Tensor& x, std::size_t axis) {
  const auto& shape = x.shape();
  if (axis >= shape.size()) {
    throw Error(ErrorKind::shape_mismatch,
                "sum_axis: axis " + std::to_string(axis) + " out of range for " + shape_to_string(shape));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];
  const std::size_t extent = shape[axis];

  Shape out_shape;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i != axis) out_shape.push_back(shape[i]);
  }
  if (out_shape.empty()) out_shape.push_back(1);

  auto v = x.data();
  std::vector<double> out(outer * inner, 0.0);
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t a = 0; a < extent; ++a)
      for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] += v[(o * extent + a) * inner + i];

  return forward_op("sum_axis", {x}, std::move(out_shape), std::move(out),
                    [outer, extent, inner](std::span<const double> g) {
                      std::vector<double> gx(outer * extent * inner);
                      for (std::size_t o = 0; o < outer; ++o)
                        for (std::size_t a = 0; a < extent; ++a)
                          for (std::size_t i = 0; i < inner; ++i) gx[(o * extent + a) * inner + i] = g[o * inner + i];
                      return std::vector<std::vector<double>>{std::move(gx)};
                    });
}

Tensor relu(const Tensor& x) {
  auto v = x.data();
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] > 0.0 ? v[i] : 0.0;
  return forward_op("relu", {x}, x.shape(), std::move(out), [x](std::span<const double> g) {
    auto v = x.data();
    std::vector<double> gx(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] = v[i] > 0.0 ? g[i] : 0.0;
    return std::vector<std::vector<double>>{std::move(gx)};
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw Error(ErrorKind::shape_mismatch,
                "reshape: cannot view " + shape_to_string(x.shape()) + " as " + shape_to_string(shape));
  }
  auto v = x.data();
  return forward_op("reshape", {x}, std::move(shape), std::vector<double>(v.begin(), v.end()),
                    [](std::span<const double> g) {
                      return std::vector<std::vector<double>>{std::vector<double>(g.begin(), g.end())};
                    });
}

Tensor flatten(const Tensor& x) {
  if (x.rank() < 2) throw Error(ErrorKind::shape_mismatch, "flatten: need rank >= 2, got " + shape_to_string(x.shape()));
  return reshape(x, {x.dim(0), x.numel() / x.dim(0)});
}

Tensor custom(std::string name, std::vector<Tensor> inputs, Shape shape, std::vector<double> values,
              BackwardFn backward) {
  return forward_op(std::move(name), std::move(inputs), std::move(shape), std::move(values), std::move(backward));
}

}  // namespace maskmod::ops
