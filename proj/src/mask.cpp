#include "maskmod/mask.hpp"

#include <bit>
#include <cmath>
#include <sstream>

#include "maskmod/error.hpp"
#include "maskmod/kernels.hpp"

namespace maskmod::mask {

std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::piggyback: return "piggyback";
    case Variant::simple: return "simple";
    case Variant::full: return "full";
  }
  return "?";
}

std::string_view to_string(Surrogate s) { return s == Surrogate::identity ? "identity" : "sigmoid"; }

Variant parse_variant(std::string_view text) {
  if (text == "piggyback") return Variant::piggyback;
  if (text == "simple") return Variant::simple;
  if (text == "full") return Variant::full;
  throw Error(ErrorKind::invalid_argument, "unknown variant '" + std::string(text) + "'");
}

Surrogate parse_surrogate(std::string_view text) {
  if (text == "identity") return Surrogate::identity;
  if (text == "sigmoid") return Surrogate::sigmoid;
  throw Error(ErrorKind::invalid_argument, "unknown surrogate '" + std::string(text) + "'");
}

BitMask::BitMask(Shape shape, std::vector<std::uint8_t> packed)
    : shape_(std::move(shape)), size_(shape_numel(shape_)), packed_(std::move(packed)) {
  if (packed_.size() != (size_ + 7) / 8) {
    throw Error(ErrorKind::shape_mismatch, "bit mask for " + shape_to_string(shape_) + " needs " +
                                               std::to_string((size_ + 7) / 8) + " bytes, got " +
                                               std::to_string(packed_.size()));
  }
  if (size_ % 8 != 0 && (packed_.back() >> (size_ % 8)) != 0) {
    throw Error(ErrorKind::parse, "bit mask padding bits must be zero");
  }
}

BitMask BitMask::ones(Shape shape) {
  const std::size_t n = shape_numel(shape);
  std::vector<std::uint8_t> packed((n + 7) / 8, 0xFF);
  if (n % 8 != 0) packed.back() = static_cast<std::uint8_t>((1U << (n % 8)) - 1U);
  return BitMask(std::move(shape), std::move(packed));
}

void BitMask::set(std::size_t i, bool value) {
  const auto bit = static_cast<std::uint8_t>(1U << (i % 8));
  if (value) {
    packed_[i / 8] |= bit;
  } else {
    packed_[i / 8] &= static_cast<std::uint8_t>(~bit);
  }
}

std::size_t BitMask::popcount() const {
  std::size_t total = 0;
  for (auto byte : packed_) total += static_cast<std::size_t>(std::popcount(byte));
  return total;
}

std::vector<double> BitMask::unpack() const {
  std::vector<double> out(size_);
  for (std::size_t i = 0; i < size_; ++i) out[i] = get(i) ? 1.0 : 0.0;
  return out;
}

Tensor BitMask::to_tensor() const { return Tensor::from(shape_, unpack()); }

BitMask threshold(const Tensor& real_mask) {
  auto r = real_mask.data();
  std::vector<std::uint8_t> packed((r.size() + 7) / 8, 0);
  for (std::size_t i = 0; i < r.size(); ++i) {
    if (r[i] >= 0.0) packed[i / 8] |= static_cast<std::uint8_t>(1U << (i % 8));
  }
  return BitMask(real_mask.shape(), std::move(packed));
}

double surrogate_derivative(double r, Surrogate kind) {
  if (kind == Surrogate::identity) return 1.0;
  // s'(r) = s(r)(1 - s(r)) = e^{-|r|} / (1 + e^{-|r|})^2, symmetric in r.
  const double e = std::exp(-std::abs(r));
  return e / ((1.0 + e) * (1.0 + e));
}

std::vector<double> surrogate_backward(std::span<const double> upstream, std::span<const double> real_mask,
                                       Surrogate kind) {
  if (upstream.size() != real_mask.size()) {
    throw Error(ErrorKind::shape_mismatch, "surrogate_backward: " + std::to_string(upstream.size()) +
                                               " gradients for " + std::to_string(real_mask.size()) + " mask entries");
  }
  std::vector<double> out(upstream.begin(), upstream.end());
  if (kind == Surrogate::sigmoid) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= surrogate_derivative(real_mask[i], kind);
  }
  return out;
}

Tensor threshold_op(const Tensor& real_mask, Surrogate kind) {
  auto r = real_mask.data();
  std::vector<double> m(r.size());
  for (std::size_t i = 0; i < r.size(); ++i) m[i] = r[i] >= 0.0 ? 1.0 : 0.0;
  return forward_op("threshold", {real_mask}, real_mask.shape(), std::move(m),
                    [real_mask, kind](std::span<const double> g) {
                      return std::vector<std::vector<double>>{surrogate_backward(g, real_mask.data(), kind)};
                    });
}

Tensor init_mask(const Shape& shape, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(kInitLow, kInitHigh);
  std::vector<double> values(shape_numel(shape));
  for (auto& v : values) {
    // Float rounding near an endpoint can step just outside the range.
    v = round_value(dist(rng));
    if (v < kInitLow) v = round_value(std::nextafter(static_cast<float>(kInitLow), 1.0f));
    if (v > kInitHigh) v = round_value(std::nextafter(static_cast<float>(kInitHigh), 0.0f));
  }
  return Tensor::from(shape, std::move(values), true);
}

KLearnable parse_learn_k(std::string_view text) {
  KLearnable k;
  std::string item;
  std::istringstream in{std::string(text)};
  while (std::getline(in, item, ',')) {
    if (item == "0") {
      k.k0 = true;
    } else if (item == "1") {
      k.k1 = true;
    } else if (item == "2") {
      k.k2 = true;
    } else if (item == "3") {
      k.k3 = true;
    } else if (!item.empty()) {
      throw Error(ErrorKind::invalid_argument, "--learn-k expects a subset of 0,1,2,3, got '" + item + "'");
    }
  }
  return k;
}

std::string format_learn_k(const KLearnable& k) {
  std::string out;
  auto add = [&](bool on, char c) {
    if (!on) return;
    if (!out.empty()) out += ',';
    out += c;
  };
  add(k.k0, '0');
  add(k.k1, '1');
  add(k.k2, '2');
  add(k.k3, '3');
  return out;
}

KLearnable default_learnable(Variant v) {
  switch (v) {
    case Variant::piggyback: return {};
    case Variant::simple: return {true, true, true, false};
    case Variant::full: return {true, true, true, true};
  }
  return {};
}

KParams KParams::initial(Variant v, bool followed_by_bn, bool channel_wise, std::size_t out_channels,
                         KLearnable requested) {
  KParams k;
  const std::size_t k1_size = channel_wise ? out_channels : 1;
  if (v == Variant::piggyback) {
    k.learnable = {false, requested.k1, false, false};
    k.k0 = Tensor::scalar(0.0);
    k.k1 = Tensor::zeros({k1_size});
    k.k2 = Tensor::scalar(0.0);
    k.k3 = Tensor::scalar(1.0);
  } else {
    k.learnable = {requested.k0 && !followed_by_bn, requested.k1, requested.k2,
                   requested.k3 && v == Variant::full};
    k.k0 = Tensor::scalar(1.0);
    k.k1 = Tensor::zeros({k1_size});
    k.k2 = Tensor::scalar(0.0);
    k.k3 = Tensor::scalar(0.0);
  }
  k.k0.set_requires_grad(k.learnable.k0);
  k.k1.set_requires_grad(k.learnable.k1);
  k.k2.set_requires_grad(k.learnable.k2);
  k.k3.set_requires_grad(k.learnable.k3);
  return k;
}

void KParams::validate(Variant v, bool followed_by_bn) const {
  if (!k0.defined() || !k1.defined() || !k2.defined() || !k3.defined()) {
    throw Error(ErrorKind::invalid_argument, "k parameters are incomplete");
  }
  if (k0.numel() != 1 || k2.numel() != 1 || k3.numel() != 1 || k1.numel() == 0) {
    throw Error(ErrorKind::shape_mismatch, "k0, k2 and k3 must be scalars");
  }
  auto fail = [&](const std::string& what) {
    throw Error(ErrorKind::invalid_argument, std::string(to_string(v)) + " variant: " + what);
  };
  if (v == Variant::piggyback) {
    if (k0.item() != 0.0 || k2.item() != 0.0 || k3.item() != 1.0) fail("requires k0=0, k2=0, k3=1");
    if (learnable.k0 || learnable.k2 || learnable.k3) fail("k0, k2 and k3 cannot be learned");
    return;
  }
  if (v == Variant::simple && (k3.item() != 0.0 || learnable.k3)) fail("requires k3 fixed at 0");
  if (followed_by_bn && (k0.item() != 1.0 || learnable.k0)) fail("k0 must stay fixed at 1 before batch normalization");
}

KParams KParams::clone() const {
  KParams k;
  k.k0 = k0.clone();
  k.k1 = k1.clone();
  k.k2 = k2.clone();
  k.k3 = k3.clone();
  k.learnable = learnable;
  return k;
}

Tensor transform_weights(const Tensor& weight, const Tensor& mask_values, const KParams& k, Variant v) {
  if (weight.shape() != mask_values.shape()) {
    throw Error(ErrorKind::shape_mismatch, "transform_weights: weight " + shape_to_string(weight.shape()) +
                                               " vs mask " + shape_to_string(mask_values.shape()));
  }
  if (weight.rank() < 1) throw Error(ErrorKind::shape_mismatch, "transform_weights: weight must have rank >= 1");
  const std::size_t out_channels = weight.dim(0);
  if (k.k1.numel() != 1 && k.k1.numel() != out_channels) {
    throw Error(ErrorKind::shape_mismatch, "transform_weights: k1 " + shape_to_string(k.k1.shape()) +
                                               " for weight " + shape_to_string(weight.shape()));
  }
  // The BN rule is a property of the network; here only the variant's own
  // fixed coefficients are checked.
  k.validate(v, false);

  kernels::TransformCoefficients coeffs{k.k0.item(), k.k1.data(), k.k2.item(), k.k3.item()};
  std::vector<double> out(weight.numel());
  if (kernels::backend() == kernels::Backend::parallel) {
    kernels::parallel::transform_weights(weight.data(), mask_values.data(), coeffs, out_channels, out);
  } else {
    kernels::serial::transform_weights(weight.data(), mask_values.data(), coeffs, out_channels, out);
  }

  return forward_op(
      "transform_weights", {weight, mask_values, k.k0, k.k1, k.k2, k.k3}, weight.shape(), std::move(out),
      [weight, mask_values, k0 = k.k0, k1 = k.k1, k2 = k.k2, k3 = k.k3, out_channels](std::span<const double> g) {
        auto w = weight.data();
        auto m = mask_values.data();
        const std::size_t per_channel = w.size() / out_channels;
        std::vector<std::vector<double>> grads(6);
        if (mask_values.requires_grad()) {
          const double c2 = k2.item(), c3 = k3.item();
          grads[1].resize(g.size());
          for (std::size_t j = 0; j < g.size(); ++j) grads[1][j] = c2 * g[j] + c3 * (g[j] * w[j]);
        }
        if (k0.requires_grad()) {
          double s = 0.0;
          for (std::size_t j = 0; j < g.size(); ++j) s += g[j] * w[j];
          grads[2] = {s};
        }
        if (k1.requires_grad()) {
          grads[3].assign(k1.numel(), 0.0);
          const bool channel_wise = k1.numel() != 1;
          for (std::size_t j = 0; j < g.size(); ++j) grads[3][channel_wise ? j / per_channel : 0] += g[j];
        }
        if (k2.requires_grad()) {
          double s = 0.0;
          for (std::size_t j = 0; j < g.size(); ++j) s += g[j] * m[j];
          grads[4] = {s};
        }
        if (k3.requires_grad()) {
          double s = 0.0;
          for (std::size_t j = 0; j < g.size(); ++j) s += g[j] * w[j] * m[j];
          grads[5] = {s};
        }
        return grads;
      });
}

}  // namespace maskmod::mask
