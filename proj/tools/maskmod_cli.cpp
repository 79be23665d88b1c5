// maskmod: pretrain a shared backbone, add tasks as binary masks, evaluate,
// score and inspect the resulting artifacts.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "maskmod/config.hpp"
#include "maskmod/error.hpp"
#include "maskmod/eval.hpp"
#include "maskmod/kernels.hpp"
#include "maskmod/registry.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace maskmod;

namespace {

struct Common {
  bool deterministic = false;
  bool prefetch = false;
  int threads = 0;
};

void apply_runtime(const Common& c) {
  kernels::set_num_threads(c.deterministic ? 1 : c.threads);
}

class MetricsLog {
 public:
  explicit MetricsLog(const fs::path& artifact) : path_(artifact.string() + ".metrics.jsonl") {
    if (!path_.parent_path().empty()) fs::create_directories(path_.parent_path());
    out_.open(path_, std::ios::trunc);
    if (!out_) throw Error(ErrorKind::io, "cannot write metrics file '" + path_.string() + "'");
  }
  void write(const train::EpochMetrics& m) {
    out_ << m.to_json().dump() << '\n';
    out_.flush();
  }

 private:
  fs::path path_;
  std::ofstream out_;
};

data::DatasetSpec absolute_paths(data::DatasetSpec spec, const fs::path& base) {
  if (spec.source != data::DatasetSpec::Source::idx) return spec;
  for (auto* p : {&spec.train_images, &spec.train_labels, &spec.test_images, &spec.test_labels}) {
    const fs::path path(*p);
    if (path.is_relative()) *p = fs::absolute(base / path).lexically_normal().string();
  }
  return spec;
}

TrainConfig train_config(const RunConfig& cfg, const train::Schedule& schedule, const Common& c, MetricsLog& log) {
  TrainConfig tc;
  tc.schedule = schedule;
  tc.seed = cfg.seed;
  tc.mirror = cfg.mirror;
  tc.prefetch = c.prefetch && !c.deterministic;
  tc.on_epoch = [&log](const train::EpochMetrics& m) { log.write(m); };
  return tc;
}

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::io, "cannot open '" + path.string() + "'");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::parse, "'" + path.string() + "': " + e.what());
  }
}

void write_json_file(const fs::path& path, const json& j) {
  if (!path.parent_path().empty()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorKind::io, "cannot write '" + path.string() + "'");
  out << j.dump(2) << '\n';
}

void emit(const json& j) { std::cout << j.dump(2) << std::endl; }

void check_lineage(const BaselineParams& theta, const TaskParams& omega) {
  const std::string digest = io::to_hex(theta.digest());
  if (omega.baseline_digest != digest) {
    throw Error(ErrorKind::invariant_violation,
                "task '" + omega.name + "' was trained on baseline " + omega.baseline_digest + ", not " + digest);
  }
}

// ---------------------------------------------------------------- commands

void cmd_pretrain(const fs::path& config_path, const fs::path& out, const Common& c) {
  apply_runtime(c);
  const RunConfig cfg = RunConfig::load(config_path);
  if (cfg.pretrain_task.empty()) throw Error(ErrorKind::invalid_argument, "config names no pretrain_task");
  const auto spec = absolute_paths(cfg.dataset(cfg.pretrain_task), cfg.base_dir);
  const auto train_set = data::load(spec, data::Split::train);
  MetricsLog log(out);
  BaselineParams theta = pretrain(cfg.resolve_architecture(), train_set, train_config(cfg, cfg.pretrain_schedule, c, log));
  theta.dataset = spec;
  save_baseline(theta, out);
  emit({{"baseline", out.string()}, {"digest", io::to_hex(theta.digest())}});
}

struct AddTaskArgs {
  fs::path theta, config, out;
  std::string task;
  std::optional<std::string> variant, surrogate, learn_k;
  bool channel_wise = false, freeze_masks = false, no_task_bn = false, checkpoint = false;
};

void cmd_add_task(const AddTaskArgs& a, const Common& c) {
  apply_runtime(c);
  const RunConfig cfg = RunConfig::load(a.config);
  TaskOptions opt = cfg.task;
  if (a.variant) {
    opt.variant = mask::parse_variant(*a.variant);
    if (!a.learn_k) opt.learn_k = mask::default_learnable(opt.variant);
  }
  if (a.surrogate) opt.surrogate = mask::parse_surrogate(*a.surrogate);
  if (a.learn_k) opt.learn_k = mask::parse_learn_k(*a.learn_k);
  if (a.channel_wise) opt.channel_wise = true;
  if (a.freeze_masks) opt.learn_masks = false;
  if (a.no_task_bn) opt.task_bn = false;

  const BaselineParams theta = load_baseline(a.theta);
  const auto theta_bytes = io::read_file(a.theta);
  const auto spec = absolute_paths(cfg.dataset(a.task), cfg.base_dir);
  const auto train_set = data::load(spec, data::Split::train);
  MetricsLog log(a.out);
  TaskParams omega = add_task(theta, a.task, train_set, opt, train_config(cfg, cfg.schedule, c, log));
  omega.dataset = spec;
  if (io::read_file(a.theta) != theta_bytes) {
    throw Error(ErrorKind::invariant_violation, "baseline file changed while adding task '" + a.task + "'");
  }
  if (a.checkpoint) save_task(omega, a.out.string() + ".ckpt", true);
  const TaskParams final_omega = omega.finalized();
  save_task(final_omega, a.out);
  emit({{"task", a.task}, {"omega", a.out.string()}, {"options", opt.to_json()}});
}

void cmd_finetune(const fs::path& theta_path, const std::string& task, const fs::path& config_path,
                  const fs::path& out, const Common& c) {
  apply_runtime(c);
  const RunConfig cfg = RunConfig::load(config_path);
  const BaselineParams theta = load_baseline(theta_path);
  const auto spec = absolute_paths(cfg.dataset(task), cfg.base_dir);
  const auto train_set = data::load(spec, data::Split::train);
  MetricsLog log(out);
  BaselineParams tuned = finetune(theta, train_set, train_config(cfg, cfg.schedule, c, log));
  tuned.dataset = spec;
  save_baseline(tuned, out);
  emit({{"task", task}, {"finetuned", out.string()}});
}

void cmd_eval(const fs::path& theta_path, const std::optional<fs::path>& omega_path, const std::string& split_text,
              const std::optional<fs::path>& report, const Common& c) {
  apply_runtime(c);
  const auto split = data::parse_split(split_text);
  const BaselineParams theta = load_baseline(theta_path);
  std::string task;
  eval::EvalResult r;
  if (omega_path) {
    const TaskParams omega = load_task(*omega_path);
    check_lineage(theta, omega);
    task = omega.name;
    Network net = build_task_network(theta, omega);
    r = eval::evaluate(net.forward_fn(), data::load(omega.dataset, split));
  } else {
    task = theta.dataset.name;
    Network net = build_baseline_network(theta);
    r = eval::evaluate(net.forward_fn(), data::load(theta.dataset, split));
  }
  json entry = {{"error", r.error()}, {"accuracy", r.accuracy()}, {"correct", r.correct}, {"total", r.total},
                {"per_class_accuracy", r.per_class}};
  if (report) {
    json all = fs::exists(*report) ? read_json_file(*report) : json::object();
    all[task] = entry;
    write_json_file(*report, all);
  }
  emit({{task, entry}});
}

void cmd_score(const fs::path& results_path, const fs::path& baseline_errors, const std::optional<fs::path>& out) {
  json results = read_json_file(results_path);
  const auto cfg = eval::DecathlonConfig::from_json(read_json_file(baseline_errors));
  std::map<std::string, double> errors;
  try {
    for (const auto& [task, v] : results.items()) errors[task] = v.at("error").get<double>();
  } catch (const json::exception& e) {
    throw Error(ErrorKind::parse, std::string("results: ") + e.what());
  }
  const auto score = eval::decathlon_score(errors, cfg);
  for (const auto& [task, s] : score.per_task) results[task]["score"] = s;
  if (out) write_json_file(*out, results);
  emit({{"tasks", results}, {"total", score.total}});
}

void cmd_analyze(const fs::path& omega_path, const std::optional<fs::path>& report) {
  const auto density = eval::mask_density(load_task(omega_path));
  if (report) write_json_file(*report, density.to_json());
  std::cout << density.render_bars();
  std::cout << "mean density " << density.mean_density() << '\n';
}

void cmd_overhead(const fs::path& theta_path, const std::vector<fs::path>& omega_paths) {
  const BaselineParams theta = load_baseline(theta_path);
  std::vector<TaskParams> omegas;
  for (const auto& p : omega_paths) omegas.push_back(load_task(p));
  std::vector<const TaskParams*> ptrs;
  for (const auto& o : omegas) ptrs.push_back(&o);
  emit(overhead(theta, ptrs).to_json());
}

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_flag("--deterministic", c.deterministic, "Single-threaded kernels and synchronous data loading");
  cmd->add_flag("--prefetch", c.prefetch, "Build batches on a producer thread");
  cmd->add_option("--threads", c.threads, "OpenMP threads for kernels (0 = runtime default)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Binary-mask multi-task learning on a frozen backbone"};
  app.require_subcommand(1);
  Common common;

  fs::path config, out, theta, omega_file, results, baseline_errors;
  std::string task, split = "test";
  std::optional<fs::path> omega_opt, report, score_out;
  std::vector<fs::path> omegas;
  AddTaskArgs add;

  auto* pre = app.add_subcommand("pretrain", "Train the shared backbone on the pretraining task");
  pre->add_option("--config", config, "Run config")->required()->check(CLI::ExistingFile);
  pre->add_option("--out", out, "Baseline output file")->required();
  add_common(pre, common);

  auto* at = app.add_subcommand("add-task", "Learn masks, k and BN for a new task");
  at->add_option("--theta", add.theta, "Baseline file")->required()->check(CLI::ExistingFile);
  at->add_option("--task", add.task, "Task name from the config")->required();
  at->add_option("--config", add.config, "Run config")->required()->check(CLI::ExistingFile);
  at->add_option("--out", add.out, "Task output file")->required();
  at->add_option("--variant", add.variant, "piggyback | simple | full");
  at->add_option("--surrogate", add.surrogate, "identity | sigmoid");
  at->add_option("--learn-k", add.learn_k, "Learnable subset of 0,1,2,3");
  at->add_flag("--channel-wise", add.channel_wise, "Per-output-channel k1");
  at->add_flag("--freeze-masks", add.freeze_masks, "Keep masks at all ones");
  at->add_flag("--no-task-bn", add.no_task_bn, "Reuse the baseline BN, frozen");
  at->add_flag("--checkpoint", add.checkpoint, "Also write <out>.ckpt with real-valued masks");
  add_common(at, common);

  auto* ft = app.add_subcommand("finetune", "Fine-tune a copy of the whole baseline on a task");
  ft->add_option("--theta", theta, "Baseline file")->required()->check(CLI::ExistingFile);
  ft->add_option("--task", task, "Task name from the config")->required();
  ft->add_option("--config", config, "Run config")->required()->check(CLI::ExistingFile);
  ft->add_option("--out", out, "Fine-tuned output file")->required();
  add_common(ft, common);

  auto* ev = app.add_subcommand("eval", "Error rate of a task network");
  ev->add_option("--theta", theta, "Baseline or fine-tuned file")->required()->check(CLI::ExistingFile);
  ev->add_option("--omega", omega_opt, "Task file; without it the baseline network itself is evaluated");
  ev->add_option("--split", split, "train | test");
  ev->add_option("--report", report, "Results file to create or update");
  add_common(ev, common);

  auto* sc = app.add_subcommand("score", "Decathlon score from a results file");
  sc->add_option("--results", results, "Results file written by eval")->required()->check(CLI::ExistingFile);
  sc->add_option("--baseline-errors", baseline_errors, "JSON map task -> maximum error")
      ->required()
      ->check(CLI::ExistingFile);
  sc->add_option("--out", score_out, "Write the results with scores here");

  auto* an = app.add_subcommand("analyze", "Per-layer mask density and k values");
  an->add_option("--omega", omega_file, "Task file")->required()->check(CLI::ExistingFile);
  an->add_option("--report", report, "JSON report output");

  auto* ov = app.add_subcommand("overhead", "Stored bits relative to the baseline");
  ov->add_option("--theta", theta, "Baseline file")->required()->check(CLI::ExistingFile);
  ov->add_option("--omegas", omegas, "Task files")->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::cerr << json{{"error", "usage"}, {"message", e.what()}}.dump() << std::endl;
    return 64;
  }

  try {
    if (*pre) cmd_pretrain(config, out, common);
    else if (*at) cmd_add_task(add, common);
    else if (*ft) cmd_finetune(theta, task, config, out, common);
    else if (*ev) cmd_eval(theta, omega_opt, split, report, common);
    else if (*sc) cmd_score(results, baseline_errors, score_out);
    else if (*an) cmd_analyze(omega_file, report);
    else if (*ov) cmd_overhead(theta, omegas);
  } catch (const Error& e) {
    std::cerr << json{{"error", to_string(e.kind())}, {"message", e.what()}}.dump() << std::endl;
    return 1;
  } catch (const std::exception& e) {
    std::cerr << json{{"error", "internal"}, {"message", e.what()}}.dump() << std::endl;
    return 1;
  }
  return 0;
}
