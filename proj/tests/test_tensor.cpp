#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "maskmod/error.hpp"
#include "maskmod/ops.hpp"
#include "maskmod/tensor.hpp"
#include "support.hpp"

using namespace maskmod;
using maskmod::testing::check_gradients;
using maskmod::testing::random_tensor;

TEST(Tensor, FromRejectsSizeMismatchAndZeroExtent) {
  EXPECT_THROW(Tensor::from({2, 2}, {1, 2, 3}), Error);
  EXPECT_THROW(Tensor::zeros({2, 0}), Error);
}

TEST(Tensor, F32ModeRoundsThroughFloat) {
  PrecisionScope scope(Precision::f32);
  const Tensor t = Tensor::from({1}, {0.1});
  EXPECT_EQ(t.item(), static_cast<double>(0.1f));
  {
    PrecisionScope inner(Precision::f64);
    EXPECT_EQ(Tensor::from({1}, {0.1}).item(), 0.1);
  }
  EXPECT_EQ(precision(), Precision::f32);
}

TEST(Tensor, AddPassesUpstreamToBoth) {
  Tensor a = Tensor::from({2}, {1, 2}, true);
  Tensor b = Tensor::from({2}, {3, 4}, true);
  const Tensor y = ops::add(a, b);
  EXPECT_EQ(y[0], 4);
  EXPECT_EQ(y[1], 6);
  backward(ops::sum(y));
  EXPECT_EQ(a.grad()[0], 1);
  EXPECT_EQ(a.grad()[1], 1);
  EXPECT_EQ(b.grad()[0], 1);
  EXPECT_EQ(b.grad()[1], 1);
}

TEST(Tensor, MulProductRule) {
  Tensor a = Tensor::from({1}, {2}, true);
  Tensor b = Tensor::from({1}, {3}, true);
  backward(ops::mul(a, b));
  EXPECT_EQ(a.grad()[0], 3);
  EXPECT_EQ(b.grad()[0], 2);
}

TEST(Tensor, ShapeMismatchNamesOpAndShapes) {
  const Tensor a = Tensor::zeros({2});
  const Tensor b = Tensor::zeros({3});
  try {
    (void)ops::add(a, b);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::shape_mismatch);
    const std::string msg = e.what();
    EXPECT_NE(msg.find("add"), std::string::npos);
    EXPECT_NE(msg.find("[2]"), std::string::npos);
    EXPECT_NE(msg.find("[3]"), std::string::npos);
  }
}

TEST(Tensor, CustomBackwardRuleIsUsedVerbatim) {
  Tensor x = Tensor::from({1}, {3}, true);
  const Tensor y = ops::custom("square_with_identity_grad", {x}, {1}, {9.0},
                               [](std::span<const double> g) { return std::vector<std::vector<double>>{{g[0]}}; });
  EXPECT_EQ(y.item(), 9.0);
  backward(y);
  EXPECT_EQ(x.grad()[0], 1.0);
}

TEST(Tensor, QuadraticGradient) {
  Tensor w = Tensor::from({2}, {1, -2}, true);
  backward(ops::sum(ops::mul(w, w)));
  EXPECT_EQ(w.grad()[0], 2);
  EXPECT_EQ(w.grad()[1], -4);
}

TEST(Tensor, ReuseAccumulates) {
  Tensor w = Tensor::from({1}, {5}, true);
  backward(ops::sum(ops::add(w, ops::mul_scalar(w, 3.0))));
  EXPECT_EQ(w.grad()[0], 4.0);
}

TEST(Tensor, DetachedLossLeavesNoGradient) {
  Tensor w = Tensor::from({2}, {1, 2}, true);
  Tensor other = Tensor::from({1}, {1}, true);
  backward(ops::sum(ops::add(ops::sum(w.detach()), other)));
  EXPECT_FALSE(w.has_grad());
  EXPECT_TRUE(other.has_grad());
}

TEST(Tensor, BackwardErrors) {
  Tensor w = Tensor::from({2}, {1, 2}, true);
  try {
    backward(w);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::shape_mismatch);
  }
  EXPECT_THROW(backward(Tensor::scalar(1.0)), Error);
}

TEST(Tensor, BackwardTwiceDoublesLeafGradients) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor a = random_tensor({3, 4}, rng, true);
    Tensor b = random_tensor({3, 4}, rng, true);
    const Tensor loss = ops::sum(ops::relu(ops::mul(ops::add(a, b), a)));
    backward(loss);
    const std::vector<double> once(a.grad().begin(), a.grad().end());
    backward(loss);
    // Accumulation rounds to f32 after each contribution.
    for (std::size_t i = 0; i < once.size(); ++i) EXPECT_NEAR(a.grad()[i], 2.0 * once[i], 1e-6 * std::abs(once[i]) + 1e-7);
  }
}

TEST(Tensor, SumAxisGradientBroadcastsUpstream) {
  std::mt19937_64 rng(3);
  for (std::size_t axis = 0; axis < 3; ++axis) {
    Tensor x = random_tensor({2, 3, 4}, rng, true);
    const Tensor s = ops::sum_axis(x, axis);
    const auto upstream = maskmod::testing::uniform_values(s.numel(), rng);
    backward(maskmod::testing::probe_loss(s, upstream));
    // Every element receives the upstream value of the slot it was summed into.
    const std::size_t dims[3] = {2, 3, 4};
    for (std::size_t i = 0; i < 2; ++i) {
      for (std::size_t j = 0; j < 3; ++j) {
        for (std::size_t k = 0; k < 4; ++k) {
          const std::size_t idx[3] = {i, j, k};
          std::size_t out = 0;
          for (std::size_t d = 0; d < 3; ++d) {
            if (d != axis) out = out * dims[d] + idx[d];
          }
          EXPECT_EQ(x.grad()[(i * 3 + j) * 4 + k], Tensor::from(s.shape(), upstream)[out]);
        }
      }
    }
  }
}

TEST(Tensor, ElementwiseOpsMatchFiniteDifferences) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    PrecisionScope scope(Precision::f64);
    Tensor a = random_tensor({2, 3}, rng, true);
    Tensor b = random_tensor({2, 3}, rng, true);
    Tensor s = random_tensor({1}, rng, true);
    const auto probe = maskmod::testing::uniform_values(6, rng);
    auto f = [&] {
      const Tensor y = ops::scale(ops::sub(ops::mul(a, b), ops::relu(a)), s);
      return ops::add(maskmod::testing::probe_loss(y, probe), ops::mean(ops::sum_axis(y, 1)));
    };
    EXPECT_LT(check_gradients(f, {a, b, s}).max_rel_error, 1e-6);
  }
}
