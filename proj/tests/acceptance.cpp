// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "maskmod/config.hpp"
#include "maskmod/container.hpp"
#include "maskmod/eval.hpp"
#include "maskmod/kernels.hpp"
#include "maskmod/layers.hpp"
#include "maskmod/mask.hpp"
#include "maskmod/registry.hpp"
#include "support.hpp"

namespace fs = std::filesystem;
using namespace maskmod;
using maskmod::testing::bit_equal;
using maskmod::testing::check_gradients;
using maskmod::testing::probe_loss;
using maskmod::testing::random_size;
using maskmod::testing::random_tensor;
using maskmod::testing::uniform_values;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void report(const std::string& name, const std::function<Outcome()>& check) {
  Outcome o;
  try {
    o = check();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  if (!o.pass) ++failures;
  std::cout << (o.pass ? "PASS " : "FAIL ") << name << ": " << o.detail << std::endl;
}

std::string fmt(double v, int digits = 4) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << v;
  return s.str();
}

std::string sci(double v) {
  std::ostringstream s;
  s << std::scientific << std::setprecision(2) << v;
  return s.str();
}

// ---------------------------------------------------------------- gradients

Outcome gradient_suite() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(2024);
  std::size_t instances = 0;
  double worst = 0.0;
  std::string worst_kind = "none";
  auto record = [&](const char* kind, const maskmod::testing::GradCheck& g) {
    ++instances;
    if (g.max_rel_error >= worst) {
      worst = g.max_rel_error;
      worst_kind = kind;
    }
  };
  PrecisionScope f64(Precision::f64);

  for (int t = 0; t < 20; ++t) {
    const std::size_t c = random_size(rng, 1, 3), o = random_size(rng, 1, 3), k = random_size(rng, 1, 3);
    const std::size_t h = random_size(rng, k, 5), pad = random_size(rng, 0, 1);
    const std::size_t stride = (h + 2 * pad - k) % 2 == 0 ? random_size(rng, 1, 2) : 1;
    Tensor x = random_tensor({2, c, h, h}, rng, true);
    Tensor w = random_tensor({o, c, k, k}, rng, true);
    Tensor b = random_tensor({o}, rng, true);
    const std::size_t oh = (h + 2 * pad - k) / stride + 1;
    const auto probe = uniform_values(2 * o * oh * oh, rng);
    record("conv2d", check_gradients([&] { return probe_loss(nn::conv2d(x, {w, b, stride, pad}), probe); }, {x, w, b}));
  }
  for (int t = 0; t < 15; ++t) {
    const std::size_t n = random_size(rng, 1, 4), in = random_size(rng, 1, 6), out = random_size(rng, 1, 5);
    Tensor x = random_tensor({n, in}, rng, true);
    Tensor w = random_tensor({out, in}, rng, true);
    Tensor b = random_tensor({out}, rng, true);
    const auto probe = uniform_values(n * out, rng);
    record("linear", check_gradients([&] { return probe_loss(nn::linear(x, w, b), probe); }, {x, w, b}));
  }
  for (int t = 0; t < 15; ++t) {
    const bool train = t % 2 == 0;
    const Shape shape = t % 3 == 0 ? Shape{4, 3} : Shape{3, 2, 3, 3};
    Tensor x = random_tensor(shape, rng, true);
    auto p = nn::BatchNormParams::identity(shape[1]);
    p.scale = random_tensor({shape[1]}, rng, true, 0.5, 1.5);
    p.bias = random_tensor({shape[1]}, rng, true);
    p.running_mean = random_tensor({shape[1]}, rng);
    p.running_var = random_tensor({shape[1]}, rng, false, 0.5, 2.0);
    const auto probe = uniform_values(shape_numel(shape), rng);
    record("batchnorm", check_gradients(
        [&] {
          auto q = p;
          q.running_mean = p.running_mean.clone();
          q.running_var = p.running_var.clone();
          return probe_loss(nn::batchnorm(x, q, train), probe);
        },
        {x, p.scale, p.bias}));
  }
  for (int t = 0; t < 15; ++t) {
    // Kept clear of the relu kink so the finite-difference stencil stays on one side.
    auto values = uniform_values(64, rng, 0.05, 1.0);
    for (auto& v : values) v = (rng() & 1U) ? v : -v;
    Tensor x = Tensor::from({2, 2, 4, 4}, values, true);
    const auto probe = uniform_values(2 * 2 * 2 * 2, rng);
    record("max_pool2d", check_gradients([&] { return probe_loss(nn::max_pool2d(x, 2, 2), probe); }, {x}));
    const auto probe2 = uniform_values(2 * 2 * 4 * 4, rng);
    record("relu", check_gradients([&] { return probe_loss(ops::relu(x), probe2); }, {x}));
  }
  for (int t = 0; t < 20; ++t) {
    const std::size_t n = random_size(rng, 1, 5), classes = random_size(rng, 2, 6);
    Tensor logits = random_tensor({n, classes}, rng, true, -3.0, 3.0);
    std::vector<int> labels(n);
    for (auto& l : labels) l = static_cast<int>(rng() % classes);
    record("softmax_xent", check_gradients([&] { return nn::softmax_xent(logits, labels); }, {logits}));
    Tensor x = random_tensor({n, 2, 3, 3}, rng, true);
    Tensor w = random_tensor({classes, 2}, rng, true);
    record("gap+linear+softmax_xent", check_gradients([&] { return nn::softmax_xent(nn::linear(nn::global_avg_pool(x), w), labels); }, {x, w}));
  }
  for (int t = 0; t < 30; ++t) {
    const auto variant = t % 3 == 0 ? mask::Variant::simple : mask::Variant::full;
    const bool channel_wise = t % 2 == 0;
    const std::size_t o = random_size(rng, 1, 4), i = random_size(rng, 1, 5);
    const Tensor w = random_tensor({o, i}, rng);
    Tensor m = Tensor::from({o, i}, uniform_values(o * i, rng, 0.0, 1.0), true);
    auto k = mask::KParams::initial(variant, false, channel_wise, o, mask::parse_learn_k("0,1,2,3"));
    for (Tensor* kt : {&k.k0, &k.k1, &k.k2, &k.k3}) {
      if (kt->requires_grad()) *kt = random_tensor(kt->shape(), rng, true);
    }
    const auto probe = uniform_values(o * i, rng);
    record("transform_weights", check_gradients([&] { return probe_loss(mask::transform_weights(w, m, k, variant), probe); },
                           {m, k.k0, k.k1, k.k2, k.k3}));
  }

  const double secs = seconds_since(t0);
  const bool pass = instances >= 100 && worst < 1e-6 && secs < 60.0;
  return {pass, std::to_string(instances) + " instances, max relative error " + sci(worst) + " (< 1e-6, worst op " + worst_kind + "), " +
                    fmt(secs, 1) + " s (< 60 s)"};
}

// ---------------------------------------------------------------- transform

Outcome piggyback_reduction() {
  std::mt19937_64 rng(31);
  std::size_t identical = 0;
  const auto k = mask::KParams::initial(mask::Variant::piggyback, false, false, 1, {});
  for (int t = 0; t < 1000; ++t) {
    const Shape shape = {random_size(rng, 1, 8), random_size(rng, 1, 3), random_size(rng, 1, 3), random_size(rng, 1, 3)};
    const Tensor w = random_tensor(shape, rng, false, -3.0, 3.0);
    std::vector<double> bits(shape_numel(shape));
    for (auto& b : bits) b = static_cast<double>(rng() & 1U);
    const Tensor m = Tensor::from(shape, bits);
    const Tensor out = mask::transform_weights(w, m, k, mask::Variant::piggyback);
    std::vector<double> hadamard(bits.size());
    for (std::size_t i = 0; i < bits.size(); ++i) hadamard[i] = static_cast<float>(w[i] * bits[i]);
    identical += bit_equal(out.data(), hadamard) ? 1 : 0;
  }
  return {identical == 1000, std::to_string(identical) + "/1000 instances bit-identical to W*M"};
}

Outcome sign_agreement() {
  std::mt19937_64 rng(41);
  const std::size_t n = 1'000'000;
  std::size_t violations = 0, compared = 0;
  PrecisionScope f64(Precision::f64);
  for (auto kind : {mask::Surrogate::identity, mask::Surrogate::sigmoid}) {
    Tensor r = Tensor::from({n}, uniform_values(n, rng, -0.01, 0.01), true);
    const auto upstream = uniform_values(n, rng, -1.0, 1.0);
    const Tensor u = Tensor::from({n}, upstream);
    // d/dM of sum(M * u) is u.
    backward(ops::sum(ops::mul(mask::threshold_op(r, kind), u)));
    const auto g = r.grad();
    for (std::size_t i = 0; i < n; ++i) {
      if (upstream[i] == 0.0) continue;
      ++compared;
      if (g[i] == 0.0 || std::signbit(g[i]) != std::signbit(upstream[i])) ++violations;
    }
  }
  return {violations == 0, std::to_string(violations) + " violations over " + std::to_string(compared) +
                               " entries (identity and sigmoid)"};
}

// ---------------------------------------------------------------- registry

data::Dataset small_task(std::uint64_t seed, data::Transform t) {
  data::DatasetSpec spec;
  spec.name = "small";
  spec.classes = 5;
  spec.generator_seed = seed;
  spec.sample_seed = seed + 100;
  spec.transform = t;
  spec.channels = 3;
  spec.height = spec.width = 12;
  spec.train_count = 200;
  return data::load(spec, data::Split::train);
}

TrainConfig small_config() {
  TrainConfig c;
  c.schedule.epochs = 3;
  c.schedule.decay_epoch = 2;
  c.schedule.adam_lr = 3e-3;
  c.seed = 5;
  return c;
}

BaselineParams trained_baseline() {
  TrainConfig c = small_config();
  c.schedule.sgd_lr = 1e-2;
  return pretrain(desk_architecture(3, 12, 12), small_task(1, data::Transform::none), c);
}

Outcome neutrality(const BaselineParams& theta) {
  std::mt19937_64 rng(51);
  const Tensor probe = random_tensor({32, 3, 12, 12}, rng);
  Network base = build_baseline_network(theta);
  const Tensor ref = base.features(probe, false);
  std::size_t ok = 0, total = 0;
  for (auto v : {mask::Variant::piggyback, mask::Variant::simple, mask::Variant::full}) {
    TaskOptions opt;
    opt.variant = v;
    opt.learn_k = mask::default_learnable(v);
    const TaskParams omega = TaskParams::initialize(theta, "fresh", 5, opt, rng);
    Network net = build_task_network(theta, omega);
    ok += bit_equal(net.features(probe, false).data(), ref.data()) ? 1 : 0;
    ++total;
  }
  return {ok == total, std::to_string(ok) + "/" + std::to_string(total) +
                           " variants reproduce baseline activations bit-for-bit on 32 probe samples"};
}

Outcome forgetting_freeness(const BaselineParams& theta) {
  const auto digest = theta.digest();
  TaskOptions full;
  const TaskParams a = add_task(theta, "a", small_task(2, data::Transform::rotate90), full, small_config()).finalized();
  std::mt19937_64 rng(61);
  const Tensor probe = random_tensor({32, 3, 12, 12}, rng);
  Network net_a = build_task_network(theta, a);
  const Tensor before = net_a.logits(probe, false);
  TaskOptions simple;
  simple.variant = mask::Variant::simple;
  simple.learn_k = mask::default_learnable(simple.variant);
  (void)add_task(theta, "b", small_task(3, data::Transform::invert), simple, small_config());
  (void)add_task(theta, "c", small_task(4, data::Transform::channel_shuffle), full, small_config());
  Network again = build_task_network(theta, a);
  const bool same_digest = theta.digest() == digest;
  const bool same_logits = bit_equal(again.logits(probe, false).data(), before.data());
  return {same_digest && same_logits, std::string("baseline digest ") + (same_digest ? "unchanged" : "CHANGED") +
                                          ", task A probe logits " + (same_logits ? "bit-identical" : "DIFFER")};
}

Architecture toy_architecture() {
  return Architecture({40, 9, 9}, {{LayerKind::conv, "conv1", 8, 5},
                                   {LayerKind::batchnorm, "bn1"},
                                   {LayerKind::relu},
                                   {LayerKind::conv, "conv2", 8, 5},
                                   {LayerKind::batchnorm, "bn2"},
                                   {LayerKind::relu},
                                   {LayerKind::flatten}});
}

Outcome overhead_accounting() {
  std::mt19937_64 rng(71);
  const BaselineParams theta = BaselineParams::initialize(toy_architecture(), 5, rng);
  std::vector<TaskParams> tasks;
  for (int i = 0; i < 4; ++i) {
    tasks.push_back(TaskParams::initialize(theta, "t" + std::to_string(i), 5, TaskOptions{}, rng).finalized());
  }
  bool pass = true;
  std::ostringstream detail;
  // Payload measured from the serialized files, classifier excluded.
  for (const auto& t : tasks) {
    const io::Container c = io::decode(t.encode(false));
    std::uint64_t bytes = 0;
    for (const auto& e : c.entries) {
      if (!e.name.starts_with("classifier.")) bytes += e.payload_bytes();
    }
    const auto r = overhead(theta, {&t});
    pass = pass && bytes * 8 == r.extra_bits();
  }
  const std::uint64_t baseline_bits = 32 * theta.arch.masked_weight_count();
  for (std::size_t m : {1, 2, 4}) {
    std::vector<const TaskParams*> ptrs;
    for (std::size_t i = 0; i < m; ++i) ptrs.push_back(&tasks[i]);
    const auto r = overhead(theta, ptrs);
    std::uint64_t expected = baseline_bits;
    for (std::size_t i = 0; i < m; ++i) expected += r.mask_bits[i] + 32 * r.scalar_count[i];
    const bool exact = r.total_bits() == expected && r.baseline_bits() == baseline_bits;
    const bool bounded = r.ratio() < 1.0 + 0.05 * static_cast<double>(m);
    pass = pass && exact && bounded;
    detail << "m=" << m << " ratio " << fmt(r.ratio(), 5) << " (< " << fmt(1.0 + 0.05 * static_cast<double>(m), 2)
           << (exact ? ", exact" : ", MISMATCH") << ") ";
  }
  detail << "| serialized payload matches accounting";
  return {pass, detail.str()};
}

Outcome decathlon_calibration() {
  std::mt19937_64 rng(81);
  std::uniform_real_distribution<double> u(1e-3, 1.0);
  double worst = 0.0;
  for (int t = 0; t < 1000; ++t) {
    eval::DecathlonConfig cfg;
    std::map<std::string, double> half, zero;
    for (int d = 0; d < 10; ++d) {
      const std::string name = "d" + std::to_string(d);
      cfg.max_error[name] = u(rng);
      half[name] = cfg.max_error[name] / 2.0;
      zero[name] = 0.0;
    }
    for (const auto& [task, s] : eval::decathlon_score(half, cfg).per_task) {
      worst = std::max(worst, std::abs(s - 250.0) / 250.0);
    }
    for (const auto& [task, s] : eval::decathlon_score(zero, cfg).per_task) {
      worst = std::max(worst, std::abs(s - 1000.0) / 1000.0);
    }
  }
  return {worst <= 1e-9, "max relative deviation from 250/1000 is " + sci(worst) + " (<= 1e-9)"};
}

// ---------------------------------------------------------------- trend

struct TrendRun {
  std::map<std::string, double> mean_accuracy;  // regime -> mean test accuracy
  std::map<std::string, std::map<std::string, double>> per_task;
  std::vector<TaskParams> full_tasks;
  BaselineParams theta;
  double seconds = 0.0;
};

const std::vector<std::string> kRegimes = {"classifier-only", "piggyback", "simple", "full", "fine-tune"};

TaskOptions regime_options(const std::string& regime, const TaskOptions& defaults) {
  TaskOptions o = defaults;
  if (regime == "classifier-only") {
    o.variant = mask::Variant::piggyback;
    o.learn_k = {};
    o.learn_masks = false;
    o.task_bn = false;
  } else if (regime == "piggyback") {
    o.variant = mask::Variant::piggyback;
    o.learn_k = {};
  } else if (regime == "simple") {
    o.variant = mask::Variant::simple;
    o.learn_k = mask::default_learnable(o.variant);
  } else {
    o.variant = mask::Variant::full;
    o.learn_k = mask::default_learnable(o.variant);
  }
  return o;
}

TrendRun run_trend(const RunConfig& cfg) {
  const auto t0 = Clock::now();
  TrendRun run;
  TrainConfig pre;
  pre.schedule = cfg.pretrain_schedule;
  pre.seed = cfg.seed;
  run.theta = pretrain(cfg.resolve_architecture(), data::load(cfg.dataset(cfg.pretrain_task), data::Split::train), pre);
  run.theta.dataset = cfg.dataset(cfg.pretrain_task);

  TrainConfig tc;
  tc.schedule = cfg.schedule;
  tc.seed = cfg.seed;
  std::size_t n_tasks = 0;
  for (const auto& [name, spec] : cfg.tasks) {
    if (name == cfg.pretrain_task) continue;
    ++n_tasks;
    const auto train_set = data::load(spec, data::Split::train);
    const auto test_set = data::load(spec, data::Split::test);
    for (const auto& regime : kRegimes) {
      double acc = 0.0;
      if (regime == "fine-tune") {
        const BaselineParams tuned = finetune(run.theta, train_set, tc);
        Network net = build_baseline_network(tuned);
        acc = eval::evaluate(net.forward_fn(), test_set).accuracy();
      } else {
        TaskParams omega = add_task(run.theta, name, train_set, regime_options(regime, cfg.task), tc).finalized();
        omega.dataset = spec;
        Network net = build_task_network(run.theta, omega);
        acc = eval::evaluate(net.forward_fn(), test_set).accuracy();
        if (regime == "full") run.full_tasks.push_back(std::move(omega));
      }
      run.per_task[regime][name] = acc;
      run.mean_accuracy[regime] += acc;
    }
  }
  for (auto& [regime, acc] : run.mean_accuracy) acc /= static_cast<double>(n_tasks);
  run.seconds = seconds_since(t0);
  return run;
}

Outcome trend_outcome(const TrendRun& a, const TrendRun& b) {
  const auto& m = a.mean_accuracy;
  const double cls = m.at("classifier-only"), pig = m.at("piggyback"), simple = m.at("simple"), full = m.at("full"),
               ft = m.at("fine-tune");
  const bool ordered = cls < pig && pig <= simple && simple <= full;
  const bool close = (ft - full) * 100.0 <= 2.0;
  double spread = 0.0;
  for (const auto& regime : kRegimes) {
    spread = std::max(spread, 100.0 * std::abs(a.mean_accuracy.at(regime) - b.mean_accuracy.at(regime)));
  }
  const bool fast = a.seconds < 900.0 && b.seconds < 900.0;
  std::ostringstream d;
  d << "mean test accuracy classifier-only " << fmt(cls) << " < piggyback " << fmt(pig) << " <= simple "
    << fmt(simple) << " <= full " << fmt(full) << (ordered ? "" : " (ORDER VIOLATED)") << "; fine-tune " << fmt(ft)
    << ", gap " << fmt(100.0 * (ft - full), 2) << " points (<= 2); runtime " << fmt(a.seconds, 0) << " s and "
    << fmt(b.seconds, 0) << " s (< 900 s); re-run spread " << fmt(spread, 3) << " points (< 0.5)";
  return {ordered && close && fast && spread < 0.5, d.str()};
}

Outcome density_outcome(const TrendRun& run) {
  bool strict = true;
  double mean = 0.0;
  std::ostringstream d;
  for (const auto& omega : run.full_tasks) {
    const auto r = eval::mask_density(omega);
    for (const auto& l : r.layers) strict = strict && l.density > 0.0 && l.density < 1.0;
    mean += r.mean_density();
    std::cout << "  density report for " << omega.name << "\n" << r.render_bars();
  }
  mean /= static_cast<double>(run.full_tasks.size());
  const bool typical = mean >= 0.2 && mean <= 0.8;
  d << "every layer density in (0,1): " << (strict ? "yes" : "NO") << "; mean density " << fmt(mean, 3)
    << (typical ? " within" : " outside") << " [0.2, 0.8] (diagnostic)";
  return {strict, d.str()};
}

// ---------------------------------------------------------------- CLI determinism

int run_cli(const std::string& args) {
  const std::string cmd = std::string(MASKMOD_CLI_PATH) + " " + args + " > /dev/null";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

Outcome cli_determinism(const BaselineParams& theta, const RunConfig& cfg) {
  const fs::path dir = fs::temp_directory_path() / "maskmod_acceptance";
  fs::create_directories(dir);
  const fs::path theta_path = dir / "theta.mtmk";
  save_baseline(theta, theta_path);
  std::string task;
  for (const auto& [name, spec] : cfg.tasks) {
    if (name != cfg.pretrain_task) {
      task = name;
      break;
    }
  }
  std::vector<std::vector<std::uint8_t>> outputs;
  for (int i = 0; i < 2; ++i) {
    const fs::path out = dir / ("omega" + std::to_string(i) + ".mtmk");
    const int code = run_cli("add-task --deterministic --theta " + theta_path.string() + " --task " + task +
                             " --config " + std::string(MASKMOD_DESK_CONFIG) + " --out " + out.string());
    if (code != 0) return {false, "add-task exited with " + std::to_string(code)};
    outputs.push_back(io::read_file(out));
  }
  fs::remove_all(dir);
  const bool same = outputs[0] == outputs[1];
  return {same, "two add-task --deterministic runs on " + task + " wrote " + std::to_string(outputs[0].size()) +
                    " and " + std::to_string(outputs[1].size()) + " bytes, " + (same ? "byte-identical" : "DIFFERENT")};
}

}  // namespace

int main() {
  ::unsetenv("MASKMOD_SEED");
  kernels::set_num_threads(1);

  report("gradient suite", gradient_suite);
  report("piggyback reduction", piggyback_reduction);
  report("sign agreement", sign_agreement);

  BaselineParams small;
  report("initialization neutrality", [&] {
    small = trained_baseline();
    return neutrality(small);
  });
  report("forgetting-freeness", [&] { return forgetting_freeness(small); });
  report("overhead accounting", overhead_accounting);
  report("decathlon calibration", decathlon_calibration);

  const RunConfig cfg = RunConfig::load(MASKMOD_DESK_CONFIG);
  TrendRun first, second;
  report("desk-scale trend", [&] {
    first = run_trend(cfg);
    second = run_trend(cfg);
    return trend_outcome(first, second);
  });
  report("mask density", [&] { return density_outcome(first); });
  report("deterministic add-task", [&] { return cli_determinism(first.theta, cfg); });

  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
  return failures == 0 ? 0 : 1;
}
