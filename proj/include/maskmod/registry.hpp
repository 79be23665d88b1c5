#pragma once

// Frozen shared parameters, per-task parameter sets, and the networks built
// from them.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"

#include "maskmod/architecture.hpp"
#include "maskmod/container.hpp"
#include "maskmod/data.hpp"
#include "maskmod/layers.hpp"
#include "maskmod/mask.hpp"
#include "maskmod/trainer.hpp"

namespace maskmod {

/// Shared backbone weights, baseline BN parameters and the pretraining head.
/// Immutable once pretraining is done; `digest()` identifies the content.
struct BaselineParams {
  Architecture arch;
  std::map<std::string, Tensor> weights;  // masked layer name -> weight
  std::map<std::string, nn::BatchNormParams> bn;
  Tensor head_weight;  // [classes, feature_dim]
  Tensor head_bias;    // [classes]
  data::DatasetSpec dataset;

  /// He-normal backbone and head weights, identity BN.
  static BaselineParams initialize(const Architecture& arch, std::size_t classes, std::mt19937_64& rng);

  std::size_t classes() const { return head_bias.numel(); }
  BaselineParams clone() const;
  /// Marks every backbone weight, BN scale/bias and head tensor as learnable.
  void set_trainable(bool trainable);

  io::Container to_container() const;
  static BaselineParams from_container(const io::Container& c);
  std::vector<std::uint8_t> encode() const { return io::encode(to_container()); }
  io::Digest digest() const;
};

/// What to train for a new task.
struct TaskOptions {
  mask::Variant variant = mask::Variant::full;
  mask::Surrogate surrogate = mask::Surrogate::sigmoid;
  mask::KLearnable learn_k = mask::default_learnable(mask::Variant::full);
  bool channel_wise = false;
  /// Task-specific BN parameters and statistics; otherwise Θ's BN, frozen.
  bool task_bn = true;
  /// When false the masks stay all ones (classifier-only with piggyback).
  bool learn_masks = true;

  nlohmann::json to_json() const;
  static TaskOptions from_json(const nlohmann::json& j);
};

struct MaskedLayerState {
  /// Real-valued mask; undefined in final artifacts, which keep only `bits`.
  Tensor real_mask;
  mask::BitMask bits;
  mask::KParams k;

  /// Current binary mask: threshold(real_mask) when present, else `bits`.
  mask::BitMask binary() const { return real_mask.defined() ? mask::threshold(real_mask) : bits; }
};

/// Everything stored for one task.
struct TaskParams {
  std::string name;
  TaskOptions options;
  Architecture arch;
  std::map<std::string, MaskedLayerState> layers;  // masked layer name -> state
  std::map<std::string, nn::BatchNormParams> bn;
  Tensor classifier_weight;  // [classes, feature_dim]
  Tensor classifier_bias;    // [classes]
  data::DatasetSpec dataset;
  std::string baseline_digest;  // hex digest of the Θ this task was trained on

  /// Fresh task: masks from U[0.0001,0.0002], k per variant, BN copied from Θ,
  /// Xavier-uniform classifier.
  static TaskParams initialize(const BaselineParams& theta, std::string name, std::size_t classes,
                               const TaskOptions& options, std::mt19937_64& rng);

  std::size_t classes() const { return classifier_bias.numel(); }
  bool has_real_masks() const;
  /// Replaces real masks by their thresholded bits.
  TaskParams finalized() const;

  /// checkpoint=true keeps real masks as f32 entries for resuming training.
  io::Container to_container(bool checkpoint = false) const;
  static TaskParams from_container(const io::Container& c);
  std::vector<std::uint8_t> encode(bool checkpoint = false) const { return io::encode(to_container(checkpoint)); }

  /// Payload bytes of everything but the classifier, as serialized.
  std::size_t overhead_payload_bytes() const;
};

/// Executable network: backbone from a weight provider plus a classifier head.
class Network {
 public:
  using WeightFn = std::function<Tensor(const LayerInfo&)>;

  Network(Architecture arch, WeightFn weights, std::map<std::string, nn::BatchNormParams> bn, Tensor head_weight,
          Tensor head_bias, bool bn_follows_mode);

  /// Pre-classifier activations [n, feature_dim].
  Tensor features(const Tensor& x, bool training);
  Tensor logits(const Tensor& x, bool training);
  train::ForwardFn forward_fn();

  const Architecture& arch() const { return arch_; }

 private:
  Architecture arch_;
  WeightFn weights_;
  std::map<std::string, nn::BatchNormParams> bn_;
  Tensor head_weight_, head_bias_;
  bool bn_follows_mode_;
};

/// f_0: baseline weights used directly.
Network build_baseline_network(const BaselineParams& theta);

/// f_i: each masked layer uses transform_weights(W, threshold(R) or M, k).
/// Throws layer_mismatch naming the first inconsistent layer.
Network build_task_network(const BaselineParams& theta, const TaskParams& omega);

/// Learnable tensors of a task split into optimizer groups.
train::ParamGroups task_param_groups(const TaskParams& omega);

/// Whole-network groups: backbone and BN to Adam, head to SGD.
train::ParamGroups baseline_param_groups(const BaselineParams& theta);

struct TrainConfig {
  train::Schedule schedule;
  std::uint64_t seed = 0;
  bool mirror = false;
  bool prefetch = false;
  std::function<void(const train::EpochMetrics&)> on_epoch;
  const data::Dataset* eval_set = nullptr;
};

/// Trains a new task against a frozen Θ. Θ's digest is checked before and
/// after; a change raises invariant_violation. The returned parameters keep
/// their real masks (call finalized() for the stored artifact).
TaskParams add_task(const BaselineParams& theta, const std::string& name, const data::Dataset& train_set,
                    const TaskOptions& options, const TrainConfig& config);

/// Trains a baseline from scratch (or continues from `init`) on a dataset.
BaselineParams pretrain(const Architecture& arch, const data::Dataset& train_set, const TrainConfig& config,
                        const BaselineParams* init = nullptr);

/// Fine-tunes every weight of a copy of Θ with a fresh head on a new task.
BaselineParams finetune(const BaselineParams& theta, const data::Dataset& train_set, const TrainConfig& config);

struct OverheadReport {
  std::uint64_t baseline_params = 0;  // masked backbone weights (32-bit words)
  std::vector<std::string> tasks;
  std::vector<std::uint64_t> mask_bits;     // per task
  std::vector<std::uint64_t> scalar_count;  // per task: k scalars + BN entries
  std::uint64_t baseline_bits() const { return 32 * baseline_params; }
  std::uint64_t extra_bits() const;
  std::uint64_t total_bits() const { return baseline_bits() + extra_bits(); }
  double ratio() const;

  nlohmann::json to_json() const;
};

/// Exact parameter accounting, classifier excluded: 1 bit per masked weight
/// and 32 bits per k scalar and BN entry, per task.
OverheadReport overhead(const BaselineParams& theta, const std::vector<const TaskParams*>& omegas);

BaselineParams load_baseline(const std::filesystem::path& path);
TaskParams load_task(const std::filesystem::path& path);
void save_baseline(const BaselineParams& theta, const std::filesystem::path& path);
void save_task(const TaskParams& omega, const std::filesystem::path& path, bool checkpoint = false);

/// Seed for a task's own RNG streams; depends only on the run seed and the
/// task name, so tasks are independent of training order.
std::uint64_t task_seed(std::uint64_t seed, const std::string& task_name);

}  // namespace maskmod
