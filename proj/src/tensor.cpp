#include "maskmod/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "maskmod/error.hpp"

namespace maskmod {

namespace detail {
struct Node {
  std::uint64_t seq = 0;
  std::string name;
  std::vector<Tensor> inputs;
  BackwardFn backward;
};
}  // namespace detail

namespace {

std::atomic<Precision> g_precision{Precision::f32};
std::atomic<std::uint64_t> g_node_seq{0};

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

void set_precision(Precision p) { g_precision.store(p, std::memory_order_relaxed); }
Precision precision() { return g_precision.load(std::memory_order_relaxed); }

void round_in_place(std::span<double> values) {
  if (precision() == Precision::f64) return;
  for (auto& v : values) v = static_cast<double>(static_cast<float>(v));
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const auto n = shape_numel(shape);
  return from(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  for (auto e : shape) {
    if (e == 0) throw Error(ErrorKind::shape_mismatch, "tensor extents must be positive, got " + shape_to_string(shape));
  }
  if (shape_numel(shape) != values.size()) {
    throw Error(ErrorKind::shape_mismatch, "tensor shape " + shape_to_string(shape) + " does not match " +
                                               std::to_string(values.size()) + " values");
  }
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(values);
  round_in_place(impl->data);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from({1}, {value}, requires_grad); }

detail::TensorImpl& Tensor::impl() const {
  if (!impl_) throw Error(ErrorKind::invalid_argument, "use of an undefined tensor");
  return *impl_;
}

const Shape& Tensor::shape() const { return impl().shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) {
    throw Error(ErrorKind::shape_mismatch, "axis " + std::to_string(axis) + " out of range for " + shape_to_string(s));
  }
  return s[axis];
}

std::size_t Tensor::numel() const { return impl().data.size(); }
std::span<const double> Tensor::data() const { return impl().data; }
std::span<double> Tensor::mutable_data() { return impl().data; }

double Tensor::item() const {
  if (numel() != 1) throw Error(ErrorKind::shape_mismatch, "item() on tensor of shape " + shape_to_string(shape()));
  return impl().data[0];
}

bool Tensor::requires_grad() const { return impl().requires_grad; }
void Tensor::set_requires_grad(bool value) { impl().requires_grad = value; }
bool Tensor::is_leaf() const { return impl().creator == nullptr; }
bool Tensor::has_grad() const { return !impl().grad.empty(); }
std::span<const double> Tensor::grad() const { return impl().grad; }

std::span<double> Tensor::mutable_grad() {
  auto& i = impl();
  if (i.grad.empty()) i.grad.assign(i.data.size(), 0.0);
  return i.grad;
}

void Tensor::zero_grad() {
  auto& i = impl();
  std::fill(i.grad.begin(), i.grad.end(), 0.0);
}

Tensor Tensor::detach() const { return from(shape(), impl().data, false); }

Tensor Tensor::clone() const { return from(shape(), impl().data, requires_grad()); }

Tensor forward_op(std::string name, std::vector<Tensor> inputs, Shape shape, std::vector<double> values,
                  BackwardFn backward) {
  Tensor out = Tensor::from(std::move(shape), std::move(values), false);
  const bool tracked = std::any_of(inputs.begin(), inputs.end(),
                                   [](const Tensor& t) { return t.defined() && t.requires_grad(); });
  if (tracked) {
    auto node = std::make_shared<detail::Node>();
    node->seq = g_node_seq.fetch_add(1, std::memory_order_relaxed);
    node->name = std::move(name);
    node->inputs = std::move(inputs);
    node->backward = std::move(backward);
    out.impl_->requires_grad = true;
    out.impl_->creator = std::move(node);
  }
  return out;
}

namespace {

void accumulate(std::vector<double>& dst, std::span<const double> src) {
  if (dst.empty()) dst.assign(src.size(), 0.0);
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] += src[i];
  round_in_place(dst);
}

}  // namespace

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw Error(ErrorKind::shape_mismatch,
                "backward requires a scalar loss, got " + (loss.defined() ? shape_to_string(loss.shape()) : "undefined"));
  }
  if (!loss.requires_grad()) {
    throw Error(ErrorKind::invalid_argument, "backward on a loss that does not require grad");
  }

  // Collect every non-leaf tensor reachable from the loss.
  std::vector<detail::TensorImpl*> interior;
  std::unordered_set<detail::TensorImpl*> seen;
  std::vector<detail::TensorImpl*> stack{loss.impl_.get()};
  while (!stack.empty()) {
    auto* t = stack.back();
    stack.pop_back();
    if (!t->creator || !seen.insert(t).second) continue;
    interior.push_back(t);
    for (const auto& in : t->creator->inputs) {
      if (in.defined() && in.requires_grad()) stack.push_back(in.impl_.get());
    }
  }
  std::sort(interior.begin(), interior.end(),
            [](const auto* a, const auto* b) { return a->creator->seq > b->creator->seq; });

  // Gradients flowing through interior nodes are pass-local so repeated calls
  // add exactly one more copy of d(loss)/d(leaf).
  std::unordered_map<detail::TensorImpl*, std::vector<double>> pass;
  pass[loss.impl_.get()] = {1.0};
  if (!loss.impl_->creator) {
    accumulate(loss.impl_->grad, std::vector<double>{1.0});
    return;
  }

  for (auto* t : interior) {
    auto it = pass.find(t);
    if (it == pass.end()) continue;
    const std::vector<double> upstream = std::move(it->second);
    pass.erase(it);
    accumulate(t->grad, upstream);

    auto& node = *t->creator;
    auto grads = node.backward(upstream);
    if (grads.size() != node.inputs.size()) {
      throw Error(ErrorKind::invariant_violation,
                  "backward rule of '" + node.name + "' returned " + std::to_string(grads.size()) +
                      " gradients for " + std::to_string(node.inputs.size()) + " inputs");
    }
    for (std::size_t i = 0; i < grads.size(); ++i) {
      const auto& in = node.inputs[i];
      if (!in.defined() || !in.requires_grad() || grads[i].empty()) continue;
      if (grads[i].size() != in.numel()) {
        throw Error(ErrorKind::shape_mismatch, "backward rule of '" + node.name + "' produced gradient of size " +
                                                   std::to_string(grads[i].size()) + " for input " +
                                                   shape_to_string(in.shape()));
      }
      auto* target = in.impl_.get();
      if (target->creator) {
        auto& slot = pass[target];
        if (slot.empty()) slot.assign(grads[i].size(), 0.0);
        for (std::size_t j = 0; j < slot.size(); ++j) slot[j] += grads[i][j];
      } else {
        accumulate(target->grad, grads[i]);
      }
    }
  }
}

}  // namespace maskmod
