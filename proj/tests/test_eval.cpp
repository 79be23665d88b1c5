#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "maskmod/error.hpp"
#include "maskmod/eval.hpp"
#include "support.hpp"

using namespace maskmod;
using namespace maskmod::eval;

namespace {

data::Dataset labelled(std::vector<int> labels, std::size_t classes) {
  data::Dataset d;
  d.sample_shape = {1, 1, 1};
  d.classes = classes;
  d.labels = std::move(labels);
  for (std::size_t i = 0; i < d.labels.size(); ++i) d.images.push_back(static_cast<double>(d.labels[i]));
  return d;
}

// Logits that always favour `cls`.
train::ForwardFn constant_class(std::size_t cls, std::size_t classes) {
  return [=](const Tensor& images, bool) {
    const std::size_t n = images.shape()[0];
    std::vector<double> v(n * classes, 0.0);
    for (std::size_t i = 0; i < n; ++i) v[i * classes + cls] = 1.0;
    return Tensor::from({n, classes}, v);
  };
}

// Reads the label back out of the single pixel.
train::ForwardFn oracle(std::size_t classes) {
  return [=](const Tensor& images, bool) {
    const std::size_t n = images.shape()[0];
    std::vector<double> v(n * classes, 0.0);
    for (std::size_t i = 0; i < n; ++i) v[i * classes + static_cast<std::size_t>(images[i])] = 1.0;
    return Tensor::from({n, classes}, v);
  };
}

DecathlonConfig config(std::map<std::string, double> m) {
  DecathlonConfig c;
  c.max_error = std::move(m);
  return c;
}

TaskParams fresh_task(std::uint64_t seed) {
  const Architecture arch({2, 1, 1}, {{LayerKind::flatten}, {LayerKind::dense, "fc1", 2}, {LayerKind::relu}});
  std::mt19937_64 rng(seed);
  const BaselineParams theta = BaselineParams::initialize(arch, 2, rng);
  return TaskParams::initialize(theta, "t", 2, TaskOptions{}, rng);
}

}  // namespace

TEST(Evaluate, MajorityClassOnBalancedBinarySetHasHalfError) {
  const auto set = labelled({0, 1, 0, 1, 1, 0, 1, 0}, 2);
  const auto r = evaluate(constant_class(1, 2), set, 3);
  EXPECT_EQ(r.total, 8U);
  EXPECT_EQ(r.error(), 0.5);
  EXPECT_EQ(r.per_class[0], 0.0);
  EXPECT_EQ(r.per_class[1], 1.0);
}

TEST(Evaluate, PerfectClassifierHasZeroError) {
  const auto set = labelled({2, 0, 1, 2, 2}, 4);
  const auto r = evaluate(oracle(4), set);
  EXPECT_EQ(r.error(), 0.0);
  EXPECT_EQ(r.accuracy(), 1.0);
  EXPECT_TRUE(std::isnan(r.per_class[3]));
}

TEST(Evaluate, EmptyDatasetIsAnError) {
  const auto set = labelled({}, 2);
  try {
    (void)evaluate(oracle(2), set);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::invalid_argument);
  }
  EXPECT_THROW((void)evaluate(oracle(2), labelled({0}, 2), 0), Error);
}

TEST(Decathlon, HandValues) {
  const auto cfg = config({{"a", 0.5}, {"b", 0.5}, {"c", 0.5}});
  const auto s = decathlon_score({{"a", 0.25}, {"b", 0.0}, {"c", 0.7}}, cfg);
  EXPECT_NEAR(s.per_task.at("a"), 250.0, 250.0 * 1e-9);
  EXPECT_NEAR(s.per_task.at("b"), 1000.0, 1000.0 * 1e-9);
  EXPECT_EQ(s.per_task.at("c"), 0.0);
  EXPECT_NEAR(s.total, 1250.0, 1250.0 * 1e-9);
}

TEST(Decathlon, AlphaFormMatchesNormalizedForm) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.01, 1.0);
  for (int i = 0; i < 200; ++i) {
    const double emax = u(rng);
    const double e = u(rng) * emax;
    const auto s = decathlon_score({{"t", e}}, config({{"t", emax}}));
    const double direct = DecathlonConfig::alpha(emax) * (emax - e) * (emax - e);
    EXPECT_NEAR(s.total, direct, 1e-9 * std::max(1.0, direct));
  }
}

TEST(Decathlon, ScoreDecreasesAsErrorGrows) {
  const auto cfg = config({{"t", 0.4}});
  double prev = 1e9;
  for (double e = 0.0; e <= 0.6; e += 0.01) {
    const double s = decathlon_score({{"t", e}}, cfg).total;
    EXPECT_LE(s, prev);
    EXPECT_GE(s, 0.0);
    prev = s;
  }
}

TEST(Decathlon, TaskSetsMustMatch) {
  const auto cfg = config({{"a", 0.5}});
  EXPECT_THROW((void)decathlon_score({{"b", 0.1}}, cfg), Error);
  EXPECT_THROW((void)decathlon_score({}, cfg), Error);
  EXPECT_THROW((void)decathlon_score({{"a", 0.1}}, config({{"a", 0.0}})), Error);
  EXPECT_THROW((void)DecathlonConfig::from_json(nlohmann::json::array()), Error);
  EXPECT_THROW((void)DecathlonConfig::from_json(nlohmann::json{{"a", "x"}}), Error);
  EXPECT_EQ(DecathlonConfig::from_json(nlohmann::json{{"a", 0.2}}).max_error.at("a"), 0.2);
}

TEST(Density, HandMask) {
  TaskParams omega = fresh_task(1);
  auto& layer = omega.layers.at("fc1");
  auto values = layer.real_mask.mutable_data();
  ASSERT_EQ(values.size(), 4U);
  values[1] = -1e-4;
  const auto report = mask_density(omega);
  ASSERT_EQ(report.layers.size(), 1U);
  EXPECT_EQ(report.layers[0].ones, 3U);
  EXPECT_EQ(report.layers[0].density, 0.75);
  EXPECT_EQ(report.mean_density(), 0.75);
  EXPECT_EQ(report.layers[0].k0, 1.0);
  EXPECT_EQ(report.layers[0].k2, 0.0);
}

TEST(Density, FreshMasksAreFullyOn) {
  const auto report = mask_density(fresh_task(2));
  for (const auto& l : report.layers) EXPECT_EQ(l.density, 1.0);
  const auto j = report.to_json();
  ASSERT_TRUE(j.is_array());
  EXPECT_EQ(j[0]["layer"], "fc1");
  EXPECT_EQ(j[0]["size"], 4);
}

TEST(Density, BarsScaleWithDensity) {
  MaskDensityReport r;
  r.layers.push_back({"conv1", 0, 1, 4, 0.25});
  r.layers.push_back({"fc", 1, 4, 4, 1.0});
  const std::string bars = r.render_bars(8);
  EXPECT_EQ(bars, "conv1 |##......| 25.0%\nfc    |########| 100.0%\n");
}
