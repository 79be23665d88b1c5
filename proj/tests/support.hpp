#pragma once

// Shared helpers for the test binaries: seeded generators and a central
// finite-difference gradient checker.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <vector>

#include "maskmod/ops.hpp"
#include "maskmod/tensor.hpp"

namespace maskmod::testing {

inline std::vector<double> uniform_values(std::size_t n, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) x = dist(rng);
  return v;
}

inline Tensor random_tensor(const Shape& shape, std::mt19937_64& rng, bool requires_grad = false, double lo = -1.0,
                            double hi = 1.0) {
  return Tensor::from(shape, uniform_values(shape_numel(shape), rng, lo, hi), requires_grad);
}

inline std::size_t random_size(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

/// Scalar probe loss sum(y * probe) for a fixed random probe of y's shape.
inline Tensor probe_loss(const Tensor& y, const std::vector<double>& probe) {
  return ops::sum(ops::mul(y, Tensor::from(y.shape(), probe)));
}

struct GradCheck {
  double max_rel_error = 0.0;
  std::size_t checked_inputs = 0;
};

/// Compares backward() against central differences for every input that
/// requires grad. `f` must rebuild the graph from the current input values.
/// Error is the normwise relative error per input, max over inputs.
inline GradCheck check_gradients(const std::function<Tensor()>& f, std::vector<Tensor> inputs, double step = 1e-4) {
  PrecisionScope scope(Precision::f64);
  for (auto& t : inputs) t.zero_grad();
  backward(f());
  GradCheck result;
  for (auto& t : inputs) {
    if (!t.requires_grad()) continue;
    const std::vector<double> analytic(t.grad().begin(), t.grad().end());
    auto values = t.mutable_data();
    double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + step;
      const double up = f().item();
      values[i] = saved - step;
      const double down = f().item();
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * step);
      diff2 += (analytic[i] - numeric) * (analytic[i] - numeric);
      a2 += analytic[i] * analytic[i];
      n2 += numeric * numeric;
    }
    const double denom = std::max({std::sqrt(a2), std::sqrt(n2), 1e-12});
    result.max_rel_error = std::max(result.max_rel_error, std::sqrt(diff2) / denom);
    ++result.checked_inputs;
  }
  return result;
}

inline bool bit_equal(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (std::bit_cast<std::uint64_t>(a[i]) != std::bit_cast<std::uint64_t>(b[i])) return false;
  }
  return true;
}

}  // namespace maskmod::testing
