#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>

#include "json.hpp"

#include "maskmod/architecture.hpp"
#include "maskmod/data.hpp"
#include "maskmod/registry.hpp"
#include "maskmod/trainer.hpp"

namespace maskmod {

/// JSON run configuration. Relative paths resolve against the directory of
/// the config file.
///
///   {
///     "seed": 7,
///     "architecture": {...},            optional, default desk CNN
///     "pretrain_task": "task0",
///     "pretrain_schedule": {...},       trainer schedule fields
///     "schedule": {...},                used by add-task and finetune
///     "variant": "full", "surrogate": "sigmoid", "learn_k": "0,1,2,3",
///     "channel_wise": false, "task_bn": true, "learn_masks": true,
///     "mirror": false,
///     "suite": {"seed": 1, "tasks": 4}, generates synthetic tasks
///     "tasks": {"name": DatasetSpec, ...}
///   }
struct RunConfig {
  std::uint64_t seed = 0;
  std::optional<Architecture> architecture;
  std::string pretrain_task;
  train::Schedule pretrain_schedule;
  train::Schedule schedule;
  TaskOptions task;
  bool mirror = false;
  std::map<std::string, data::DatasetSpec> tasks;
  std::filesystem::path base_dir;

  const data::DatasetSpec& dataset(const std::string& task_name) const;
  /// Configured architecture, or the desk CNN sized for the pretraining task.
  Architecture resolve_architecture() const;

  static RunConfig from_json(const nlohmann::json& j, const std::filesystem::path& base_dir);
  /// Reads the file and applies MASKMOD_SEED when set.
  static RunConfig load(const std::filesystem::path& path);
};

/// Parses a decimal seed from MASKMOD_SEED, if present.
std::optional<std::uint64_t> seed_from_env();

}  // namespace maskmod
