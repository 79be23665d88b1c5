#pragma once

// Dense row-major tensors with reverse-mode differentiation.
//
// Values are stored as double. The global precision mode decides whether each
// produced value is rounded through float (f32, the training default) or kept
// at full double precision (f64, used by gradient checks).

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace maskmod {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

enum class Precision { f32, f64 };

void set_precision(Precision p);
Precision precision();

/// Rounds a value to the active storage precision.
inline double round_value(double v) {
  return precision() == Precision::f32 ? static_cast<double>(static_cast<float>(v)) : v;
}
void round_in_place(std::span<double> values);

/// Scoped precision switch, restores the previous mode on exit.
class PrecisionScope {
 public:
  explicit PrecisionScope(Precision p) : saved_(precision()) { set_precision(p); }
  ~PrecisionScope() { set_precision(saved_); }
  PrecisionScope(const PrecisionScope&) = delete;
  PrecisionScope& operator=(const PrecisionScope&) = delete;

 private:
  Precision saved_;
};

/// Gradient rule of a recorded operation: receives the upstream gradient of the
/// output and returns one gradient per input, in input order. An empty vector
/// means "no gradient for this input". The rule may differ from the analytic
/// derivative of the forward value (surrogate gradients).
using BackwardFn =
    std::function<std::vector<std::vector<double>>(std::span<const double> upstream)>;

class Tensor;

namespace detail {
struct Node;
struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until a gradient is accumulated
  bool requires_grad = false;
  std::shared_ptr<Node> creator;
};
}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> data() const;
  /// Direct write access for initializers and optimizers. Bypasses the graph.
  std::span<double> mutable_data();
  double item() const;
  double operator[](std::size_t i) const { return data()[i]; }

  bool requires_grad() const;
  void set_requires_grad(bool value);
  bool is_leaf() const;

  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  /// Same values, no history, no gradient tracking. Shares nothing.
  Tensor detach() const;
  /// Deep copy of values and requires_grad flag, without history.
  Tensor clone() const;

  const detail::TensorImpl* id() const { return impl_.get(); }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}
  detail::TensorImpl& impl() const;

  std::shared_ptr<detail::TensorImpl> impl_;

  friend Tensor forward_op(std::string name, std::vector<Tensor> inputs, Shape shape,
                           std::vector<double> values, BackwardFn backward);
  friend void backward(const Tensor& loss);
};

/// Records an operation whose forward value has already been computed.
/// The output requires grad iff any input does; only then is `backward` kept.
Tensor forward_op(std::string name, std::vector<Tensor> inputs, Shape shape,
                  std::vector<double> values, BackwardFn backward);

/// Accumulates d(loss)/d(t) into every reachable tensor that requires grad.
/// Nodes are visited in reverse creation order. Gradients add up across calls.
void backward(const Tensor& loss);

}  // namespace maskmod
