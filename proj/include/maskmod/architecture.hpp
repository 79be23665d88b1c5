#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include "json.hpp"

#include "maskmod/tensor.hpp"

namespace maskmod {

enum class LayerKind { conv, dense, batchnorm, relu, maxpool, global_avg_pool, flatten };

struct LayerSpec {
  LayerKind kind = LayerKind::relu;
  std::string name;          // required for conv, dense and batchnorm
  std::size_t out = 0;       // conv/dense output channels
  std::size_t kernel = 0;    // conv/maxpool window
  std::size_t stride = 1;
  std::size_t padding = 0;

  bool has_parameters() const {
    return kind == LayerKind::conv || kind == LayerKind::dense || kind == LayerKind::batchnorm;
  }
};

/// Resolved per-layer shapes, computed from the input shape.
struct LayerInfo {
  LayerSpec spec;
  Shape input;   // without batch dimension
  Shape output;  // without batch dimension
  Shape weight;  // conv/dense only
  bool masked = false;
  bool followed_by_bn = false;
  std::size_t depth = 0;  // index among masked layers
};

/// Layer list of the shared backbone. The task classifier is not part of the
/// descriptor; it maps `feature_dim()` features to each task's classes.
class Architecture {
 public:
  Architecture() = default;
  Architecture(Shape input, std::vector<LayerSpec> layers);

  const Shape& input_shape() const { return input_; }
  const std::vector<LayerInfo>& layers() const { return layers_; }
  std::size_t feature_dim() const;

  std::vector<const LayerInfo*> masked_layers() const;
  std::vector<const LayerInfo*> bn_layers() const;
  const LayerInfo& layer(const std::string& name) const;

  /// Number of masked backbone weights.
  std::size_t masked_weight_count() const;

  nlohmann::json to_json() const;
  static Architecture from_json(const nlohmann::json& j);

  friend bool operator==(const Architecture& a, const Architecture& b) { return a.to_json() == b.to_json(); }

 private:
  void resolve();

  Shape input_;
  std::vector<LayerInfo> layers_;
};

/// Small CNN used by the desk-scale experiments:
/// conv-bn-relu-pool, conv-bn-relu-pool, global-avg-pool, dense-bn-relu.
Architecture desk_architecture(std::size_t channels, std::size_t height, std::size_t width);

}  // namespace maskmod
