#pragma once

// Binary weight masks learned through thresholded real-valued masks, and the
// affine weight transform W' = k0*W + k1*1 + k2*M + k3*(W o M).
//
// Variants:
//   piggyback  (k0,k1,k2,k3) = (0,0,0,1)          W' = W o M
//   simple     k3 = 0                             W' = k0*W + k1 + k2*M
//   full       all four coefficients
// k0 stays fixed at 1 for simple/full layers followed by batch normalization,
// since BN output does not depend on the scale of the preceding weights.

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "maskmod/tensor.hpp"

namespace maskmod::mask {

enum class Variant { piggyback, simple, full };
enum class Surrogate { identity, sigmoid };

std::string_view to_string(Variant v);
std::string_view to_string(Surrogate s);
Variant parse_variant(std::string_view text);
Surrogate parse_surrogate(std::string_view text);

constexpr double kInitLow = 0.0001;
constexpr double kInitHigh = 0.0002;

/// {0,1} mask with the shape of a weight tensor. Bits are packed row-major,
/// least-significant bit first, zero-padded to a whole byte.
class BitMask {
 public:
  BitMask() = default;
  BitMask(Shape shape, std::vector<std::uint8_t> packed);
  static BitMask ones(Shape shape);

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return size_; }
  std::span<const std::uint8_t> packed() const { return packed_; }
  std::size_t packed_bytes() const { return packed_.size(); }

  bool get(std::size_t i) const { return (packed_[i / 8] >> (i % 8)) & 1U; }
  void set(std::size_t i, bool value);

  /// Number of 1 bits, counted on the packed bytes.
  std::size_t popcount() const;
  double density() const { return size_ == 0 ? 0.0 : static_cast<double>(popcount()) / static_cast<double>(size_); }

  std::vector<double> unpack() const;
  Tensor to_tensor() const;

  friend bool operator==(const BitMask&, const BitMask&) = default;

 private:
  Shape shape_;
  std::size_t size_ = 0;
  std::vector<std::uint8_t> packed_;
};

/// h(r) = 1 if r >= 0 else 0, elementwise.
BitMask threshold(const Tensor& real_mask);

/// Gradient w.r.t. the real mask given the gradient w.r.t. the binary mask:
/// identity passes it through, sigmoid scales by s(r)(1 - s(r)).
std::vector<double> surrogate_backward(std::span<const double> upstream, std::span<const double> real_mask,
                                       Surrogate kind);

/// Derivative of the surrogate at r; strictly positive for both kinds.
double surrogate_derivative(double r, Surrogate kind);

/// Recorded threshold: forward is the exact step function, backward routes
/// the upstream gradient through `surrogate_backward`.
Tensor threshold_op(const Tensor& real_mask, Surrogate kind);

/// Real mask with entries drawn i.i.d. from U[0.0001, 0.0002].
Tensor init_mask(const Shape& shape, std::mt19937_64& rng);

/// Which of k0..k3 receive gradient updates.
struct KLearnable {
  bool k0 = false, k1 = false, k2 = false, k3 = false;
  friend bool operator==(const KLearnable&, const KLearnable&) = default;
};

/// Parses a comma separated subset of "0,1,2,3" (e.g. "1,2").
KLearnable parse_learn_k(std::string_view text);
std::string format_learn_k(const KLearnable& k);

/// Learnable set used when the caller does not override it.
KLearnable default_learnable(Variant v);

struct KParams {
  Tensor k0, k1, k2, k3;  // shape [1]; k1 is [out_channels] in channel-wise mode
  KLearnable learnable;

  bool channel_wise() const { return k1.numel() > 1; }
  /// k0..k3 scalar count including every entry of k1.
  std::size_t scalar_count() const { return 3 + k1.numel(); }

  /// Initial values: piggyback (0,0,0,1); simple/full (1,0,0,0), so a fresh
  /// task reproduces the baseline weights exactly. The learnable set is
  /// intersected with what the variant and the BN rule allow.
  static KParams initial(Variant v, bool followed_by_bn, bool channel_wise, std::size_t out_channels,
                         KLearnable requested);

  /// Throws invalid_argument when fixed coefficients violate the variant.
  void validate(Variant v, bool followed_by_bn) const;

  KParams clone() const;
};

/// W' for weight W (dim 0 = output channels) and mask values M in {0,1}.
/// Recorded op: gradients flow to every k tensor (and to M when it requires
/// grad) following
///   dk0 = sum g*W, dk1 = sum g (per channel), dk2 = sum g*M, dk3 = sum g*W*M,
///   dM  = k2*g + k3*g*W.
/// W itself never receives a gradient.
Tensor transform_weights(const Tensor& weight, const Tensor& mask_values, const KParams& k, Variant v);

}  // namespace maskmod::mask
