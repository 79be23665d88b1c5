#pragma once

#include <map>
#include <string>
#include <vector>

#include "json.hpp"

#include "maskmod/data.hpp"
#include "maskmod/registry.hpp"

namespace maskmod::eval {

struct EvalResult {
  std::size_t correct = 0;
  std::size_t total = 0;
  double error() const { return 1.0 - accuracy(); }
  double accuracy() const { return static_cast<double>(correct) / static_cast<double>(total); }
  /// Accuracy per true class; NaN for classes absent from the set.
  std::vector<double> per_class;
};

/// Eval-mode pass in fixed order. Throws invalid_argument on an empty dataset.
EvalResult evaluate(const train::ForwardFn& forward, const data::Dataset& set, std::size_t batch_size = 128);

/// Per-task maximum error E_max, usually twice a fine-tuned reference error.
struct DecathlonConfig {
  std::map<std::string, double> max_error;

  /// 1000 / E_max^2.
  static double alpha(double max_error);
  void validate() const;

  /// Reads {"task": E_max, ...}.
  static DecathlonConfig from_json(const nlohmann::json& j);
};

struct DecathlonScore {
  std::map<std::string, double> per_task;
  double total = 0.0;
};

/// s = alpha * max(0, E_max - E)^2 per task, summed. Throws invalid_argument
/// when the task sets differ.
DecathlonScore decathlon_score(const std::map<std::string, double>& errors, const DecathlonConfig& cfg);

struct LayerDensity {
  std::string layer;
  std::size_t depth = 0;
  std::size_t ones = 0;
  std::size_t size = 0;
  double density = 0.0;
  double k0 = 0.0, k2 = 0.0, k3 = 0.0;
  std::vector<double> k1;
};

struct MaskDensityReport {
  std::string task;
  std::vector<LayerDensity> layers;  // by depth

  double mean_density() const;
  nlohmann::json to_json() const;
  /// One text bar per layer.
  std::string render_bars(std::size_t width = 40) const;
};

MaskDensityReport mask_density(const TaskParams& omega);

}  // namespace maskmod::eval
