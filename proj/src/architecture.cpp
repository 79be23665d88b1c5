#include "maskmod/architecture.hpp"

#include <set>

#include "maskmod/error.hpp"

namespace maskmod {

namespace {

const char* kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::conv: return "conv";
    case LayerKind::dense: return "dense";
    case LayerKind::batchnorm: return "batchnorm";
    case LayerKind::relu: return "relu";
    case LayerKind::maxpool: return "maxpool";
    case LayerKind::global_avg_pool: return "gap";
    case LayerKind::flatten: return "flatten";
  }
  return "?";
}

LayerKind parse_kind(const std::string& s) {
  for (auto k : {LayerKind::conv, LayerKind::dense, LayerKind::batchnorm, LayerKind::relu, LayerKind::maxpool,
                 LayerKind::global_avg_pool, LayerKind::flatten}) {
    if (s == kind_name(k)) return k;
  }
  throw Error(ErrorKind::parse, "unknown layer type '" + s + "'");
}

[[noreturn]] void bad_layer(const LayerSpec& s, std::size_t index, const std::string& why) {
  throw Error(ErrorKind::invalid_argument, "layer " + std::to_string(index) + " (" + kind_name(s.kind) +
                                               (s.name.empty() ? "" : " '" + s.name + "'") + "): " + why);
}

}  // namespace

Architecture::Architecture(Shape input, std::vector<LayerSpec> layers) : input_(std::move(input)) {
  for (auto& s : layers) layers_.push_back(LayerInfo{std::move(s), {}, {}, {}, false, false, 0});
  resolve();
}

void Architecture::resolve() {
  if (input_.size() != 3) throw Error(ErrorKind::invalid_argument, "architecture input must be [c,h,w]");
  Shape cur = input_;
  std::set<std::string> names;
  std::size_t depth = 0;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    auto& info = layers_[i];
    const auto& s = info.spec;
    info.input = cur;
    info.masked = false;
    info.followed_by_bn = false;
    info.weight.clear();
    if (s.has_parameters()) {
      if (s.name.empty()) bad_layer(s, i, "needs a name");
      if (!names.insert(s.name).second) bad_layer(s, i, "duplicate name");
    }
    switch (s.kind) {
      case LayerKind::conv: {
        if (cur.size() != 3) bad_layer(s, i, "conv needs [c,h,w] input");
        if (s.out == 0 || s.kernel == 0 || s.stride == 0) bad_layer(s, i, "out, kernel and stride must be positive");
        const std::size_t ph = cur[1] + 2 * s.padding, pw = cur[2] + 2 * s.padding;
        if (s.kernel > ph || s.kernel > pw) bad_layer(s, i, "kernel larger than padded input");
        if ((ph - s.kernel) % s.stride != 0 || (pw - s.kernel) % s.stride != 0) {
          bad_layer(s, i, "non-integral output extent");
        }
        info.weight = {s.out, cur[0], s.kernel, s.kernel};
        cur = {s.out, (ph - s.kernel) / s.stride + 1, (pw - s.kernel) / s.stride + 1};
        info.masked = true;
        break;
      }
      case LayerKind::dense:
        if (cur.size() != 1) bad_layer(s, i, "dense needs flat input (add flatten or gap)");
        if (s.out == 0) bad_layer(s, i, "out must be positive");
        info.weight = {s.out, cur[0]};
        cur = {s.out};
        info.masked = true;
        break;
      case LayerKind::batchnorm:
        if (cur.empty()) bad_layer(s, i, "batchnorm needs an input");
        break;
      case LayerKind::relu:
        break;
      case LayerKind::maxpool:
        if (cur.size() != 3) bad_layer(s, i, "maxpool needs [c,h,w] input");
        if (s.kernel == 0 || s.stride == 0 || s.kernel > cur[1] || s.kernel > cur[2] ||
            (cur[1] - s.kernel) % s.stride != 0 || (cur[2] - s.kernel) % s.stride != 0) {
          bad_layer(s, i, "window does not tile the input");
        }
        cur = {cur[0], (cur[1] - s.kernel) / s.stride + 1, (cur[2] - s.kernel) / s.stride + 1};
        break;
      case LayerKind::global_avg_pool:
        if (cur.size() != 3) bad_layer(s, i, "gap needs [c,h,w] input");
        cur = {cur[0]};
        break;
      case LayerKind::flatten:
        cur = {shape_numel(cur)};
        break;
    }
    if (info.masked) info.depth = depth++;
    info.output = cur;
  }
  for (std::size_t i = 0; i + 1 < layers_.size(); ++i) {
    if (layers_[i].masked && layers_[i + 1].spec.kind == LayerKind::batchnorm) layers_[i].followed_by_bn = true;
  }
  if (cur.size() != 1) throw Error(ErrorKind::invalid_argument, "architecture must end in a flat feature vector");
}

std::size_t Architecture::feature_dim() const { return layers_.empty() ? shape_numel(input_) : layers_.back().output[0]; }

std::vector<const LayerInfo*> Architecture::masked_layers() const {
  std::vector<const LayerInfo*> out;
  for (const auto& l : layers_)
    if (l.masked) out.push_back(&l);
  return out;
}

std::vector<const LayerInfo*> Architecture::bn_layers() const {
  std::vector<const LayerInfo*> out;
  for (const auto& l : layers_)
    if (l.spec.kind == LayerKind::batchnorm) out.push_back(&l);
  return out;
}

const LayerInfo& Architecture::layer(const std::string& name) const {
  for (const auto& l : layers_)
    if (l.spec.name == name) return l;
  throw Error(ErrorKind::layer_mismatch, "no layer named '" + name + "'");
}

std::size_t Architecture::masked_weight_count() const {
  std::size_t n = 0;
  for (const auto* l : masked_layers()) n += shape_numel(l->weight);
  return n;
}

nlohmann::json Architecture::to_json() const {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : layers_) {
    const auto& s = l.spec;
    nlohmann::json j{{"type", kind_name(s.kind)}};
    if (!s.name.empty()) j["name"] = s.name;
    switch (s.kind) {
      case LayerKind::conv:
        j["out"] = s.out;
        j["kernel"] = s.kernel;
        j["stride"] = s.stride;
        j["padding"] = s.padding;
        break;
      case LayerKind::dense:
        j["out"] = s.out;
        break;
      case LayerKind::maxpool:
        j["kernel"] = s.kernel;
        j["stride"] = s.stride;
        break;
      default:
        break;
    }
    layers.push_back(std::move(j));
  }
  return {{"input", input_}, {"layers", std::move(layers)}};
}

Architecture Architecture::from_json(const nlohmann::json& j) {
  try {
    std::vector<LayerSpec> specs;
    for (const auto& l : j.at("layers")) {
      LayerSpec s;
      s.kind = parse_kind(l.at("type").get<std::string>());
      s.name = l.value("name", std::string{});
      s.out = l.value("out", std::size_t{0});
      s.kernel = l.value("kernel", std::size_t{0});
      s.stride = l.value("stride", std::size_t{1});
      s.padding = l.value("padding", std::size_t{0});
      specs.push_back(std::move(s));
    }
    return Architecture(j.at("input").get<Shape>(), std::move(specs));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::parse, std::string("architecture descriptor: ") + e.what());
  }
}

Architecture desk_architecture(std::size_t channels, std::size_t height, std::size_t width) {
  std::vector<LayerSpec> layers{
      {LayerKind::conv, "conv1", 8, 3, 1, 1},
      {LayerKind::batchnorm, "bn1"},
      {LayerKind::relu},
      {LayerKind::maxpool, "", 0, 2, 2},
      {LayerKind::conv, "conv2", 16, 3, 1, 1},
      {LayerKind::batchnorm, "bn2"},
      {LayerKind::relu},
      {LayerKind::maxpool, "", 0, 2, 2},
      {LayerKind::conv, "conv3", 16, 3, 1, 1},
      {LayerKind::batchnorm, "bn3"},
      {LayerKind::relu},
      {LayerKind::global_avg_pool},
      {LayerKind::dense, "fc1", 32},
      {LayerKind::batchnorm, "bn4"},
      {LayerKind::relu},
  };
  return Architecture({channels, height, width}, std::move(layers));
}

}  // namespace maskmod
