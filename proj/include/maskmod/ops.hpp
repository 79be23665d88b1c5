#pragma once

#include <span>
#include <string>
#include <vector>

#include "maskmod/tensor.hpp"

namespace maskmod::ops {

// Elementwise binary ops require identical shapes; `scale` multiplies by a
// one-element tensor.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

/// s * x where s has exactly one element.
Tensor scale(const Tensor& x, const Tensor& s);
Tensor mul_scalar(const Tensor& x, double s);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
/// Sum over one axis; the axis is removed from the shape (a rank-1 input
/// yields shape [1]).
Tensor sum_axis(const Tensor& x, std::size_t axis);

Tensor relu(const Tensor& x);
Tensor reshape(const Tensor& x, Shape shape);
/// [n, ...] -> [n, prod(...)]
Tensor flatten(const Tensor& x);

/// Generic recorded op with a caller-supplied value and gradient rule.
Tensor custom(std::string name, std::vector<Tensor> inputs, Shape shape, std::vector<double> values,
              BackwardFn backward);

void require_same_shape(const char* op, const Tensor& a, const Tensor& b);

}  // namespace maskmod::ops
