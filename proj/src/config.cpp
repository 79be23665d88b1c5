#include "maskmod/config.hpp"

#include <charconv>
#include <cstdlib>
#include <fstream>

#include "maskmod/error.hpp"

namespace maskmod {

using nlohmann::json;

const data::DatasetSpec& RunConfig::dataset(const std::string& task_name) const {
  auto it = tasks.find(task_name);
  if (it == tasks.end()) throw Error(ErrorKind::invalid_argument, "config has no task named '" + task_name + "'");
  return it->second;
}

Architecture RunConfig::resolve_architecture() const {
  if (architecture) return *architecture;
  const auto& spec = dataset(pretrain_task);
  if (spec.source != data::DatasetSpec::Source::synthetic) {
    throw Error(ErrorKind::invalid_argument, "an idx pretraining task needs an explicit architecture");
  }
  return desk_architecture(spec.channels, spec.height, spec.width);
}

namespace {

void apply_suite(const json& j, RunConfig& cfg) {
  const auto seed = j.at("seed").get<std::uint64_t>();
  const auto n = j.at("tasks").get<std::size_t>();
  for (auto spec : data::make_synthetic_suite(seed, n)) {
    const bool first = spec.name == "task0";
    if (j.contains("noise")) spec.noise = j.at("noise").get<double>();
    if (j.contains("classes")) spec.classes = j.at("classes").get<std::size_t>();
    if (first && j.contains("pretrain_train_count")) spec.train_count = j.at("pretrain_train_count").get<std::size_t>();
    if (!first && j.contains("train_count")) spec.train_count = j.at("train_count").get<std::size_t>();
    if (j.contains("test_count")) spec.test_count = j.at("test_count").get<std::size_t>();
    if (cfg.pretrain_task.empty() && first) cfg.pretrain_task = spec.name;
    cfg.tasks[spec.name] = spec;
  }
}

}  // namespace

RunConfig RunConfig::from_json(const json& j, const std::filesystem::path& base_dir) {
  RunConfig cfg;
  cfg.base_dir = base_dir;
  try {
    cfg.seed = j.value("seed", std::uint64_t{0});
    if (j.contains("architecture")) cfg.architecture = Architecture::from_json(j.at("architecture"));
    cfg.pretrain_task = j.value("pretrain_task", std::string{});
    if (j.contains("pretrain_schedule")) cfg.pretrain_schedule = train::Schedule::from_json(j.at("pretrain_schedule"));
    if (j.contains("schedule")) cfg.schedule = train::Schedule::from_json(j.at("schedule"));
    cfg.task.variant = mask::parse_variant(j.value("variant", std::string("full")));
    cfg.task.surrogate = mask::parse_surrogate(j.value("surrogate", std::string("sigmoid")));
    cfg.task.learn_k = j.contains("learn_k") ? mask::parse_learn_k(j.at("learn_k").get<std::string>())
                                             : mask::default_learnable(cfg.task.variant);
    cfg.task.channel_wise = j.value("channel_wise", false);
    cfg.task.task_bn = j.value("task_bn", true);
    cfg.task.learn_masks = j.value("learn_masks", true);
    cfg.mirror = j.value("mirror", false);
    if (j.contains("suite")) apply_suite(j.at("suite"), cfg);
    if (j.contains("tasks")) {
      for (const auto& [name, spec] : j.at("tasks").items()) {
        auto parsed = data::DatasetSpec::from_json(spec);
        if (parsed.name.empty()) parsed.name = name;
        cfg.tasks[name] = parsed;
      }
    }
  } catch (const json::exception& e) {
    throw Error(ErrorKind::parse, std::string("config: ") + e.what());
  }
  if (!cfg.pretrain_task.empty()) (void)cfg.dataset(cfg.pretrain_task);
  return cfg;
}

std::optional<std::uint64_t> seed_from_env() {
  const char* text = std::getenv("MASKMOD_SEED");
  if (text == nullptr || *text == '\0') return std::nullopt;
  std::uint64_t seed = 0;
  const char* end = text + std::char_traits<char>::length(text);
  auto [ptr, ec] = std::from_chars(text, end, seed);
  if (ec != std::errc{} || ptr != end) {
    throw Error(ErrorKind::invalid_argument, std::string("MASKMOD_SEED is not an unsigned integer: '") + text + "'");
  }
  return seed;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::io, "cannot open config '" + path.string() + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::parse, "config '" + path.string() + "': " + e.what());
  }
  RunConfig cfg = from_json(j, path.parent_path());
  if (auto seed = seed_from_env()) cfg.seed = *seed;
  return cfg;
}

}  // namespace maskmod
