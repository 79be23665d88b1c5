#include "maskmod/registry.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "maskmod/error.hpp"
#include "maskmod/ops.hpp"

namespace maskmod {

namespace {

using nlohmann::json;

json parse_descriptor(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::parse, std::string("descriptor: ") + e.what());
  }
}

Tensor he_normal(const Shape& shape, std::size_t fan_in, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = dist(rng);
  return Tensor::from(shape, std::move(v));
}

Tensor xavier_uniform(const Shape& shape, std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-a, a);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = dist(rng);
  return Tensor::from(shape, std::move(v));
}

std::size_t fan_in(const Shape& weight) { return shape_numel(weight) / weight.at(0); }

const io::Entry& require_entry(const io::Container& c, const std::string& name, const Shape& shape) {
  if (!c.contains(name)) throw Error(ErrorKind::layer_mismatch, "missing entry '" + name + "'");
  const auto& e = c.entry(name);
  if (e.shape() != shape) {
    throw Error(ErrorKind::layer_mismatch, "entry '" + name + "' has shape " + shape_to_string(e.shape()) +
                                               ", expected " + shape_to_string(shape));
  }
  return e;
}

Tensor require_f32(const io::Container& c, const std::string& name, const Shape& shape, bool requires_grad) {
  const auto& e = require_entry(c, name, shape);
  if (e.dtype != io::DType::f32) throw Error(ErrorKind::parse, "entry '" + name + "' is not an f32 array");
  Tensor t = e.values.clone();
  t.set_requires_grad(requires_grad);
  return t;
}

void push_bn(std::vector<io::Entry>& out, const std::string& name, const nn::BatchNormParams& p) {
  out.push_back(io::Entry::f32(name + ".scale", p.scale));
  out.push_back(io::Entry::f32(name + ".bias", p.bias));
  out.push_back(io::Entry::f32(name + ".running_mean", p.running_mean));
  out.push_back(io::Entry::f32(name + ".running_var", p.running_var));
}

nn::BatchNormParams read_bn(const io::Container& c, const std::string& name, std::size_t channels, bool trainable) {
  nn::BatchNormParams p = nn::BatchNormParams::identity(channels);
  p.scale = require_f32(c, name + ".scale", {channels}, trainable);
  p.bias = require_f32(c, name + ".bias", {channels}, trainable);
  p.running_mean = require_f32(c, name + ".running_mean", {channels}, false);
  p.running_var = require_f32(c, name + ".running_var", {channels}, false);
  for (double v : p.running_var.data()) {
    if (!(v > 0.0)) throw Error(ErrorKind::parse, "BN '" + name + "' has a non-positive running variance");
  }
  return p;
}

void set_bn_trainable(nn::BatchNormParams& p, bool trainable) {
  p.scale.set_requires_grad(trainable);
  p.bias.set_requires_grad(trainable);
}

std::map<std::string, nn::BatchNormParams> clone_bn(const std::map<std::string, nn::BatchNormParams>& bn) {
  std::map<std::string, nn::BatchNormParams> out;
  for (const auto& [name, p] : bn) out.emplace(name, p.clone());
  return out;
}

train::TrainOptions train_options(const TrainConfig& config, std::uint64_t seed) {
  train::TrainOptions o;
  o.schedule = config.schedule;
  o.seed = seed;
  o.mirror = config.mirror;
  o.prefetch = config.prefetch;
  o.eval_set = config.eval_set;
  o.on_epoch = config.on_epoch;
  return o;
}

void check_shape(const std::string& what, const Shape& got, const Shape& want) {
  if (got != want) {
    throw Error(ErrorKind::layer_mismatch,
                what + " has shape " + shape_to_string(got) + ", expected " + shape_to_string(want));
  }
}

}  // namespace

// ---------------------------------------------------------------- Θ

BaselineParams BaselineParams::initialize(const Architecture& arch, std::size_t classes, std::mt19937_64& rng) {
  if (classes < 2) throw Error(ErrorKind::invalid_argument, "a classifier needs at least 2 classes");
  BaselineParams p;
  p.arch = arch;
  for (const auto* info : arch.masked_layers()) {
    p.weights.emplace(info->spec.name, he_normal(info->weight, fan_in(info->weight), rng));
  }
  for (const auto* info : arch.bn_layers()) {
    p.bn.emplace(info->spec.name, nn::BatchNormParams::identity(info->output.at(0)));
  }
  p.head_weight = he_normal({classes, arch.feature_dim()}, arch.feature_dim(), rng);
  p.head_bias = Tensor::zeros({classes});
  return p;
}

BaselineParams BaselineParams::clone() const {
  BaselineParams p;
  p.arch = arch;
  for (const auto& [name, w] : weights) p.weights.emplace(name, w.clone());
  p.bn = clone_bn(bn);
  p.head_weight = head_weight.clone();
  p.head_bias = head_bias.clone();
  p.dataset = dataset;
  return p;
}

void BaselineParams::set_trainable(bool trainable) {
  for (auto& [name, w] : weights) w.set_requires_grad(trainable);
  for (auto& [name, p] : bn) set_bn_trainable(p, trainable);
  head_weight.set_requires_grad(trainable);
  head_bias.set_requires_grad(trainable);
}

io::Container BaselineParams::to_container() const {
  io::Container c;
  c.kind = io::ContainerKind::baseline;
  c.descriptor = json{{"arch", arch.to_json()}, {"classes", classes()}, {"dataset", dataset.to_json()}}.dump();
  for (const auto* info : arch.masked_layers()) {
    c.entries.push_back(io::Entry::f32(info->spec.name + ".weight", weights.at(info->spec.name)));
  }
  for (const auto* info : arch.bn_layers()) push_bn(c.entries, info->spec.name, bn.at(info->spec.name));
  c.entries.push_back(io::Entry::f32("head.weight", head_weight));
  c.entries.push_back(io::Entry::f32("head.bias", head_bias));
  return c;
}

BaselineParams BaselineParams::from_container(const io::Container& c) {
  if (c.kind != io::ContainerKind::baseline) throw Error(ErrorKind::parse, "not a baseline container");
  const json d = parse_descriptor(c.descriptor);
  BaselineParams p;
  std::size_t classes = 0;
  try {
    p.arch = Architecture::from_json(d.at("arch"));
    classes = d.at("classes").get<std::size_t>();
    if (d.contains("dataset")) p.dataset = data::DatasetSpec::from_json(d.at("dataset"));
  } catch (const json::exception& e) {
    throw Error(ErrorKind::parse, std::string("baseline descriptor: ") + e.what());
  }
  std::set<std::string> expected;
  for (const auto* info : p.arch.masked_layers()) {
    const std::string name = info->spec.name + ".weight";
    p.weights.emplace(info->spec.name, require_f32(c, name, info->weight, false));
    expected.insert(name);
  }
  for (const auto* info : p.arch.bn_layers()) {
    p.bn.emplace(info->spec.name, read_bn(c, info->spec.name, info->output.at(0), false));
    for (const char* s : {".scale", ".bias", ".running_mean", ".running_var"}) expected.insert(info->spec.name + s);
  }
  p.head_weight = require_f32(c, "head.weight", {classes, p.arch.feature_dim()}, false);
  p.head_bias = require_f32(c, "head.bias", {classes}, false);
  expected.insert({"head.weight", "head.bias"});
  for (const auto& e : c.entries) {
    if (!expected.contains(e.name)) throw Error(ErrorKind::layer_mismatch, "unexpected entry '" + e.name + "'");
  }
  return p;
}

io::Digest BaselineParams::digest() const { return io::sha256(encode()); }

// ---------------------------------------------------------------- options

json TaskOptions::to_json() const {
  return {{"variant", mask::to_string(variant)}, {"surrogate", mask::to_string(surrogate)},
          {"learn_k", mask::format_learn_k(learn_k)}, {"channel_wise", channel_wise},
          {"task_bn", task_bn}, {"learn_masks", learn_masks}};
}

TaskOptions TaskOptions::from_json(const json& j) {
  TaskOptions o;
  try {
    o.variant = mask::parse_variant(j.at("variant").get<std::string>());
    o.surrogate = mask::parse_surrogate(j.at("surrogate").get<std::string>());
    o.learn_k = mask::parse_learn_k(j.at("learn_k").get<std::string>());
    o.channel_wise = j.at("channel_wise").get<bool>();
    o.task_bn = j.at("task_bn").get<bool>();
    o.learn_masks = j.at("learn_masks").get<bool>();
  } catch (const json::exception& e) {
    throw Error(ErrorKind::parse, std::string("task options: ") + e.what());
  }
  return o;
}

// ---------------------------------------------------------------- Ω

TaskParams TaskParams::initialize(const BaselineParams& theta, std::string name, std::size_t classes,
                                  const TaskOptions& options, std::mt19937_64& rng) {
  if (classes < 2) throw Error(ErrorKind::invalid_argument, "a classifier needs at least 2 classes");
  TaskParams t;
  t.name = std::move(name);
  t.options = options;
  t.arch = theta.arch;
  for (const auto* info : theta.arch.masked_layers()) {
    MaskedLayerState s;
    s.real_mask = mask::init_mask(info->weight, rng);
    s.real_mask.set_requires_grad(options.learn_masks);
    s.bits = mask::threshold(s.real_mask);
    s.k = mask::KParams::initial(options.variant, info->followed_by_bn, options.channel_wise, info->weight.at(0),
                                 options.learn_k);
    t.layers.emplace(info->spec.name, std::move(s));
  }
  if (options.task_bn) {
    t.bn = clone_bn(theta.bn);
    for (auto& [n, p] : t.bn) set_bn_trainable(p, true);
  }
  const std::size_t features = theta.arch.feature_dim();
  t.classifier_weight = xavier_uniform({classes, features}, features, classes, rng);
  t.classifier_weight.set_requires_grad(true);
  t.classifier_bias = Tensor::zeros({classes}, true);
  t.baseline_digest = io::to_hex(theta.digest());
  return t;
}

bool TaskParams::has_real_masks() const {
  for (const auto& [n, s] : layers) {
    if (s.real_mask.defined()) return true;
  }
  return false;
}

TaskParams TaskParams::finalized() const {
  TaskParams t;
  t.name = name;
  t.options = options;
  t.arch = arch;
  for (const auto& [n, s] : layers) {
    MaskedLayerState f;
    f.bits = s.binary();
    f.k = s.k.clone();
    t.layers.emplace(n, std::move(f));
  }
  t.bn = clone_bn(bn);
  t.classifier_weight = classifier_weight.clone();
  t.classifier_bias = classifier_bias.clone();
  t.dataset = dataset;
  t.baseline_digest = baseline_digest;
  return t;
}

io::Container TaskParams::to_container(bool checkpoint) const {
  if (checkpoint && !has_real_masks()) {
    throw Error(ErrorKind::invalid_argument, "task '" + name + "' has no real masks to checkpoint");
  }
  io::Container c;
  c.kind = io::ContainerKind::task;
  c.descriptor = json{{"arch", arch.to_json()},
                      {"task", name},
                      {"classes", classes()},
                      {"options", options.to_json()},
                      {"dataset", dataset.to_json()},
                      {"baseline_digest", baseline_digest},
                      {"checkpoint", checkpoint}}
                     .dump();
  for (const auto* info : arch.masked_layers()) {
    const auto& name_ = info->spec.name;
    const auto& s = layers.at(name_);
    if (checkpoint) {
      c.entries.push_back(io::Entry::f32(name_ + ".real_mask", s.real_mask));
    } else {
      c.entries.push_back(io::Entry::mask(name_ + ".mask", s.binary()));
    }
    c.entries.push_back(io::Entry::f32(name_ + ".k0", s.k.k0));
    c.entries.push_back(io::Entry::f32(name_ + ".k1", s.k.k1));
    c.entries.push_back(io::Entry::f32(name_ + ".k2", s.k.k2));
    c.entries.push_back(io::Entry::f32(name_ + ".k3", s.k.k3));
  }
  if (options.task_bn) {
    for (const auto* info : arch.bn_layers()) push_bn(c.entries, info->spec.name, bn.at(info->spec.name));
  }
  c.entries.push_back(io::Entry::f32("classifier.weight", classifier_weight));
  c.entries.push_back(io::Entry::f32("classifier.bias", classifier_bias));
  return c;
}

TaskParams TaskParams::from_container(const io::Container& c) {
  if (c.kind != io::ContainerKind::task) throw Error(ErrorKind::parse, "not a task container");
  const json d = parse_descriptor(c.descriptor);
  TaskParams t;
  std::size_t classes = 0;
  bool checkpoint = false;
  try {
    t.arch = Architecture::from_json(d.at("arch"));
    t.name = d.at("task").get<std::string>();
    classes = d.at("classes").get<std::size_t>();
    t.options = TaskOptions::from_json(d.at("options"));
    t.dataset = data::DatasetSpec::from_json(d.at("dataset"));
    t.baseline_digest = d.at("baseline_digest").get<std::string>();
    checkpoint = d.at("checkpoint").get<bool>();
  } catch (const json::exception& e) {
    throw Error(ErrorKind::parse, std::string("task descriptor: ") + e.what());
  }
  std::set<std::string> expected;
  for (const auto* info : t.arch.masked_layers()) {
    const auto& n = info->spec.name;
    MaskedLayerState s;
    if (checkpoint) {
      s.real_mask = require_f32(c, n + ".real_mask", info->weight, t.options.learn_masks);
      s.bits = mask::threshold(s.real_mask);
      expected.insert(n + ".real_mask");
    } else {
      const auto& e = require_entry(c, n + ".mask", info->weight);
      if (e.dtype != io::DType::bits) throw Error(ErrorKind::parse, "entry '" + n + ".mask' is not a bit mask");
      s.bits = e.bits;
      expected.insert(n + ".mask");
    }
    const std::size_t out = info->weight.at(0);
    s.k = mask::KParams::initial(t.options.variant, info->followed_by_bn, t.options.channel_wise, out,
                                 t.options.learn_k);
    s.k.k0 = require_f32(c, n + ".k0", {1}, s.k.learnable.k0);
    s.k.k1 = require_f32(c, n + ".k1", {t.options.channel_wise ? out : std::size_t{1}}, s.k.learnable.k1);
    s.k.k2 = require_f32(c, n + ".k2", {1}, s.k.learnable.k2);
    s.k.k3 = require_f32(c, n + ".k3", {1}, s.k.learnable.k3);
    s.k.validate(t.options.variant, info->followed_by_bn);
    for (const char* k : {".k0", ".k1", ".k2", ".k3"}) expected.insert(n + k);
    t.layers.emplace(n, std::move(s));
  }
  if (t.options.task_bn) {
    for (const auto* info : t.arch.bn_layers()) {
      t.bn.emplace(info->spec.name, read_bn(c, info->spec.name, info->output.at(0), true));
      for (const char* s : {".scale", ".bias", ".running_mean", ".running_var"}) expected.insert(info->spec.name + s);
    }
  }
  t.classifier_weight = require_f32(c, "classifier.weight", {classes, t.arch.feature_dim()}, true);
  t.classifier_bias = require_f32(c, "classifier.bias", {classes}, true);
  expected.insert({"classifier.weight", "classifier.bias"});
  for (const auto& e : c.entries) {
    if (!expected.contains(e.name)) throw Error(ErrorKind::layer_mismatch, "unexpected entry '" + e.name + "'");
  }
  return t;
}

std::size_t TaskParams::overhead_payload_bytes() const {
  std::size_t bytes = 0;
  for (const auto& e : to_container(false).entries) {
    if (!e.name.starts_with("classifier.")) bytes += e.payload_bytes();
  }
  return bytes;
}

// ---------------------------------------------------------------- networks

Network::Network(Architecture arch, WeightFn weights, std::map<std::string, nn::BatchNormParams> bn,
                 Tensor head_weight, Tensor head_bias, bool bn_follows_mode)
    : arch_(std::move(arch)),
      weights_(std::move(weights)),
      bn_(std::move(bn)),
      head_weight_(std::move(head_weight)),
      head_bias_(std::move(head_bias)),
      bn_follows_mode_(bn_follows_mode) {}

Tensor Network::features(const Tensor& x, bool training) {
  Shape expected = arch_.input_shape();
  if (x.rank() != 4 || Shape(x.shape().begin() + 1, x.shape().end()) != expected) {
    throw Error(ErrorKind::shape_mismatch, "network input " + shape_to_string(x.shape()) +
                                               " does not match [n]+" + shape_to_string(expected));
  }
  Tensor h = x;
  for (const auto& info : arch_.layers()) {
    const auto& s = info.spec;
    switch (s.kind) {
      case LayerKind::conv:
        h = nn::conv2d(h, {weights_(info), {}, s.stride, s.padding});
        break;
      case LayerKind::dense:
        h = nn::linear(h, weights_(info));
        break;
      case LayerKind::batchnorm:
        h = nn::batchnorm(h, bn_.at(s.name), training && bn_follows_mode_);
        break;
      case LayerKind::relu:
        h = ops::relu(h);
        break;
      case LayerKind::maxpool:
        h = nn::max_pool2d(h, s.kernel, s.stride);
        break;
      case LayerKind::global_avg_pool:
        h = nn::global_avg_pool(h);
        break;
      case LayerKind::flatten:
        h = ops::flatten(h);
        break;
    }
  }
  return h;
}

Tensor Network::logits(const Tensor& x, bool training) {
  return nn::linear(features(x, training), head_weight_, head_bias_);
}

train::ForwardFn Network::forward_fn() {
  return [this](const Tensor& images, bool training) { return logits(images, training); };
}

Network build_baseline_network(const BaselineParams& theta) {
  auto weights = theta.weights;
  return Network(theta.arch, [weights](const LayerInfo& info) { return weights.at(info.spec.name); }, theta.bn,
                 theta.head_weight, theta.head_bias, true);
}

Network build_task_network(const BaselineParams& theta, const TaskParams& omega) {
  const auto& arch = theta.arch;
  if (!(omega.arch == arch)) {
    const auto& a = arch.layers();
    const auto& b = omega.arch.layers();
    std::string where = "input " + shape_to_string(omega.arch.input_shape());
    for (std::size_t i = 0; i < std::max(a.size(), b.size()); ++i) {
      if (i >= a.size() || i >= b.size() || a[i].spec.name != b[i].spec.name || a[i].output != b[i].output ||
          a[i].input != b[i].input) {
        where = "layer '" + (i < b.size() ? b[i].spec.name : a[i].spec.name) + "' (#" + std::to_string(i) + ")";
        break;
      }
    }
    throw Error(ErrorKind::layer_mismatch, "task architecture differs from the baseline at " + where);
  }
  std::set<std::string> masked;
  for (const auto* info : arch.masked_layers()) {
    const auto& n = info->spec.name;
    masked.insert(n);
    auto w = theta.weights.find(n);
    if (w == theta.weights.end()) throw Error(ErrorKind::layer_mismatch, "baseline has no weight for layer '" + n + "'");
    check_shape("baseline weight of layer '" + n + "'", w->second.shape(), info->weight);
    auto s = omega.layers.find(n);
    if (s == omega.layers.end()) throw Error(ErrorKind::layer_mismatch, "task has no mask for layer '" + n + "'");
    const Shape mask_shape = s->second.real_mask.defined() ? s->second.real_mask.shape() : s->second.bits.shape();
    check_shape("mask of layer '" + n + "'", mask_shape, info->weight);
    const std::size_t k1 = s->second.k.k1.numel();
    if (k1 != 1 && k1 != info->weight.at(0)) {
      throw Error(ErrorKind::layer_mismatch, "k1 of layer '" + n + "' has " + std::to_string(k1) + " entries");
    }
  }
  for (const auto& [n, s] : omega.layers) {
    if (!masked.contains(n)) throw Error(ErrorKind::layer_mismatch, "task has a mask for unknown layer '" + n + "'");
  }
  if (omega.options.task_bn) {
    for (const auto* info : arch.bn_layers()) {
      const auto& n = info->spec.name;
      auto p = omega.bn.find(n);
      if (p == omega.bn.end()) throw Error(ErrorKind::layer_mismatch, "task has no BN parameters for layer '" + n + "'");
      if (p->second.channels() != info->output.at(0)) {
        throw Error(ErrorKind::layer_mismatch, "BN layer '" + n + "' has " + std::to_string(p->second.channels()) +
                                                   " channels, expected " + std::to_string(info->output.at(0)));
      }
    }
  }
  check_shape("classifier weight", omega.classifier_weight.shape(), {omega.classes(), arch.feature_dim()});

  auto weights = theta.weights;
  auto layers = omega.layers;
  const auto variant = omega.options.variant;
  const auto surrogate = omega.options.surrogate;
  auto provider = [weights, layers, variant, surrogate](const LayerInfo& info) {
    const auto& s = layers.at(info.spec.name);
    const Tensor m = s.real_mask.defined() ? mask::threshold_op(s.real_mask, surrogate) : s.bits.to_tensor();
    return mask::transform_weights(weights.at(info.spec.name), m, s.k, variant);
  };
  if (omega.options.task_bn) {
    return Network(arch, provider, omega.bn, omega.classifier_weight, omega.classifier_bias, true);
  }
  return Network(arch, provider, theta.bn, omega.classifier_weight, omega.classifier_bias, false);
}

train::ParamGroups task_param_groups(const TaskParams& omega) {
  train::ParamGroups g;
  for (const auto* info : omega.arch.masked_layers()) {
    const auto& s = omega.layers.at(info->spec.name);
    if (s.real_mask.defined() && s.real_mask.requires_grad()) g.adam.push_back(s.real_mask);
    for (const Tensor* k : {&s.k.k0, &s.k.k1, &s.k.k2, &s.k.k3}) {
      if (k->requires_grad()) g.adam.push_back(*k);
    }
  }
  for (const auto& [n, p] : omega.bn) {
    if (p.scale.requires_grad()) g.adam.push_back(p.scale);
    if (p.bias.requires_grad()) g.adam.push_back(p.bias);
  }
  g.sgd = {omega.classifier_weight, omega.classifier_bias};
  return g;
}

train::ParamGroups baseline_param_groups(const BaselineParams& theta) {
  train::ParamGroups g;
  for (const auto* info : theta.arch.masked_layers()) g.adam.push_back(theta.weights.at(info->spec.name));
  for (const auto& [n, p] : theta.bn) {
    g.adam.push_back(p.scale);
    g.adam.push_back(p.bias);
  }
  g.sgd = {theta.head_weight, theta.head_bias};
  return g;
}

// ---------------------------------------------------------------- training

std::uint64_t task_seed(std::uint64_t seed, const std::string& task_name) {
  return data::derive_seed(seed, "task:" + task_name);
}

TaskParams add_task(const BaselineParams& theta, const std::string& name, const data::Dataset& train_set,
                    const TaskOptions& options, const TrainConfig& config) {
  const io::Digest before = theta.digest();
  const std::uint64_t seed = task_seed(config.seed, name);
  std::mt19937_64 rng(seed);
  TaskParams omega = TaskParams::initialize(theta, name, train_set.classes, options, rng);
  Network net = build_task_network(theta, omega);
  train::train(net.forward_fn(), task_param_groups(omega), train_set,
               train_options(config, data::derive_seed(seed, "order")));
  for (auto& [n, s] : omega.layers) s.bits = s.binary();
  if (theta.digest() != before) {
    throw Error(ErrorKind::invariant_violation, "baseline parameters changed while training task '" + name + "'");
  }
  return omega;
}

BaselineParams pretrain(const Architecture& arch, const data::Dataset& train_set, const TrainConfig& config,
                        const BaselineParams* init) {
  std::mt19937_64 rng(data::derive_seed(config.seed, "pretrain"));
  BaselineParams theta = init ? init->clone() : BaselineParams::initialize(arch, train_set.classes, rng);
  if (init && !(init->arch == arch)) throw Error(ErrorKind::layer_mismatch, "initial baseline has another architecture");
  theta.set_trainable(true);
  Network net = build_baseline_network(theta);
  train::train(net.forward_fn(), baseline_param_groups(theta), train_set,
               train_options(config, data::derive_seed(config.seed, "pretrain-order")));
  theta.set_trainable(false);
  return theta;
}

BaselineParams finetune(const BaselineParams& theta, const data::Dataset& train_set, const TrainConfig& config) {
  std::mt19937_64 rng(data::derive_seed(config.seed, "finetune"));
  BaselineParams tuned = theta.clone();
  const std::size_t features = theta.arch.feature_dim();
  tuned.head_weight = xavier_uniform({train_set.classes, features}, features, train_set.classes, rng);
  tuned.head_bias = Tensor::zeros({train_set.classes});
  tuned.set_trainable(true);
  Network net = build_baseline_network(tuned);
  train::train(net.forward_fn(), baseline_param_groups(tuned), train_set,
               train_options(config, data::derive_seed(config.seed, "finetune-order")));
  tuned.set_trainable(false);
  return tuned;
}

// ---------------------------------------------------------------- overhead

std::uint64_t OverheadReport::extra_bits() const {
  std::uint64_t bits = 0;
  for (std::size_t i = 0; i < tasks.size(); ++i) bits += mask_bits[i] + 32 * scalar_count[i];
  return bits;
}

double OverheadReport::ratio() const {
  if (baseline_params == 0) throw Error(ErrorKind::invalid_argument, "baseline has no masked parameters");
  return static_cast<double>(total_bits()) / static_cast<double>(baseline_bits());
}

json OverheadReport::to_json() const {
  json per_task = json::array();
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    per_task.push_back({{"task", tasks[i]},
                        {"mask_bits", mask_bits[i]},
                        {"scalar_count", scalar_count[i]},
                        {"extra_bits", mask_bits[i] + 32 * scalar_count[i]}});
  }
  return {{"baseline_params", baseline_params}, {"baseline_bits", baseline_bits()}, {"tasks", per_task},
          {"extra_bits", extra_bits()},         {"total_bits", total_bits()},       {"ratio", ratio()}};
}

OverheadReport overhead(const BaselineParams& theta, const std::vector<const TaskParams*>& omegas) {
  OverheadReport r;
  r.baseline_params = theta.arch.masked_weight_count();
  for (const TaskParams* t : omegas) {
    std::uint64_t bits = 0, scalars = 0;
    for (const auto& [n, s] : t->layers) {
      bits += s.binary().size();
      scalars += s.k.scalar_count();
    }
    for (const auto& [n, p] : t->bn) scalars += 4 * p.channels();
    r.tasks.push_back(t->name);
    r.mask_bits.push_back(bits);
    r.scalar_count.push_back(scalars);
  }
  return r;
}

// ---------------------------------------------------------------- files

BaselineParams load_baseline(const std::filesystem::path& path) {
  return BaselineParams::from_container(io::decode(io::read_file(path)));
}

TaskParams load_task(const std::filesystem::path& path) {
  return TaskParams::from_container(io::decode(io::read_file(path)));
}

void save_baseline(const BaselineParams& theta, const std::filesystem::path& path) {
  io::write_file(path, theta.encode());
}

void save_task(const TaskParams& omega, const std::filesystem::path& path, bool checkpoint) {
  io::write_file(path, omega.encode(checkpoint));
}

}  // namespace maskmod
