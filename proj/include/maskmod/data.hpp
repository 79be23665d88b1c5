#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "maskmod/tensor.hpp"

namespace maskmod::data {

/// Labeled images, stored [n, c, h, w] row-major.
struct Dataset {
  Shape sample_shape;  // [c, h, w]
  std::vector<double> images;
  std::vector<int> labels;
  std::size_t classes = 0;

  std::size_t size() const { return labels.size(); }
  std::size_t sample_numel() const { return shape_numel(sample_shape); }

  /// Stacks the selected samples into a [batch, c, h, w] tensor. Samples whose
  /// `mirror` flag is set are flipped horizontally.
  Tensor batch(std::span<const std::size_t> indices, std::span<const std::uint8_t> mirror = {}) const;
  std::vector<int> batch_labels(std::span<const std::size_t> indices) const;

  /// Throws invalid_argument if a label falls outside [0, classes).
  void validate() const;
};

enum class Transform { none, rotate90, invert, permute_labels, channel_shuffle };

std::string_view to_string(Transform t);
Transform parse_transform(std::string_view text);

enum class Split { train, test };
Split parse_split(std::string_view text);
std::string_view to_string(Split s);

struct Normalization {
  double mean = 0.0;
  double stddev = 1.0;
};

/// Where a task's data comes from. Serialized as JSON inside configs and
/// task artifacts.
struct DatasetSpec {
  enum class Source { synthetic, idx } source = Source::synthetic;
  std::string name;
  std::size_t classes = 10;
  Normalization norm{0.5, 0.25};

  // synthetic
  std::uint64_t generator_seed = 0;  // prototypes
  std::uint64_t sample_seed = 0;     // per-sample noise
  Transform transform = Transform::none;
  std::size_t channels = 3, height = 12, width = 12;
  std::size_t train_count = 1000, test_count = 500;
  double noise = 0.25;

  // idx (paths absolute or relative to the base directory given at load)
  std::string train_images, train_labels, test_images, test_labels;

  nlohmann::json to_json() const;
  static DatasetSpec from_json(const nlohmann::json& j);
};

/// Reads IDX image/label files; pixels are scaled to [0,1] then normalized.
/// 3-d image files give [n,1,h,w], 4-d files [n,c,h,w].
Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels, std::size_t classes,
                 Normalization norm);

/// Materializes a split of the dataset described by `spec`.
Dataset load(const DatasetSpec& spec, Split split, const std::filesystem::path& base_dir = {});

/// Task 0 is the pretraining task; tasks 1.. use held-out prototype generators
/// with a transform cycled from rotate90, invert, channel-shuffle,
/// permute-labels. permute-labels relabels fresh samples of task 0's generator.
std::vector<DatasetSpec> make_synthetic_suite(std::uint64_t seed, std::size_t n_tasks);

// Image transforms on a single [c,h,w] sample, exposed for tests.
std::vector<double> rotate90(std::span<const double> sample, std::size_t c, std::size_t h, std::size_t w);
std::vector<double> invert(std::span<const double> sample);
std::vector<std::size_t> channel_permutation(std::uint64_t seed, std::size_t channels);
std::vector<int> label_permutation(std::uint64_t seed, std::size_t classes);

/// Deterministic 64-bit mixing of a seed and a string.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view salt);

}  // namespace maskmod::data
