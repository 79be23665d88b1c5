#include "maskmod/eval.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>

#include "maskmod/error.hpp"
#include "maskmod/layers.hpp"

namespace maskmod::eval {

EvalResult evaluate(const train::ForwardFn& forward, const data::Dataset& set, std::size_t batch_size) {
  if (set.size() == 0) throw Error(ErrorKind::invalid_argument, "cannot evaluate on an empty dataset");
  if (batch_size == 0) throw Error(ErrorKind::invalid_argument, "batch size must be positive");
  EvalResult r;
  std::vector<std::size_t> hits(set.classes, 0), seen(set.classes, 0);
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < set.size(); start += batch_size) {
    idx.clear();
    for (std::size_t i = start; i < std::min(set.size(), start + batch_size); ++i) idx.push_back(i);
    const auto labels = set.batch_labels(idx);
    const auto pred = nn::argmax_rows(forward(set.batch(idx), false));
    for (std::size_t i = 0; i < pred.size(); ++i) {
      const auto y = static_cast<std::size_t>(labels[i]);
      ++seen[y];
      if (pred[i] == labels[i]) {
        ++hits[y];
        ++r.correct;
      }
    }
    r.total += idx.size();
  }
  r.per_class.resize(set.classes);
  for (std::size_t c = 0; c < set.classes; ++c) {
    r.per_class[c] = seen[c] == 0 ? std::numeric_limits<double>::quiet_NaN()
                                  : static_cast<double>(hits[c]) / static_cast<double>(seen[c]);
  }
  return r;
}

double DecathlonConfig::alpha(double max_error) { return 1000.0 / (max_error * max_error); }

void DecathlonConfig::validate() const {
  for (const auto& [task, e] : max_error) {
    if (!(e > 0.0 && e <= 1.0)) {
      throw Error(ErrorKind::invalid_argument, "max error of task '" + task + "' must lie in (0,1]");
    }
  }
}

DecathlonConfig DecathlonConfig::from_json(const nlohmann::json& j) {
  DecathlonConfig cfg;
  if (!j.is_object()) throw Error(ErrorKind::parse, "baseline errors must be a JSON object of task -> max error");
  for (const auto& [task, v] : j.items()) {
    if (!v.is_number()) throw Error(ErrorKind::parse, "max error of task '" + task + "' is not a number");
    cfg.max_error[task] = v.get<double>();
  }
  cfg.validate();
  return cfg;
}

DecathlonScore decathlon_score(const std::map<std::string, double>& errors, const DecathlonConfig& cfg) {
  cfg.validate();
  for (const auto& [task, e] : errors) {
    if (!cfg.max_error.contains(task)) throw Error(ErrorKind::invalid_argument, "no max error for task '" + task + "'");
  }
  DecathlonScore s;
  for (const auto& [task, max_e] : cfg.max_error) {
    auto it = errors.find(task);
    if (it == errors.end()) throw Error(ErrorKind::invalid_argument, "no error given for task '" + task + "'");
    const double margin = std::max(0.0, max_e - it->second) / max_e;
    const double score = 1000.0 * margin * margin;
    s.per_task[task] = score;
    s.total += score;
  }
  return s;
}

double MaskDensityReport::mean_density() const {
  if (layers.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& l : layers) sum += l.density;
  return sum / static_cast<double>(layers.size());
}

nlohmann::json MaskDensityReport::to_json() const {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& l : layers) {
    arr.push_back({{"layer", l.layer},
                   {"depth", l.depth},
                   {"ones", l.ones},
                   {"size", l.size},
                   {"density", l.density},
                   {"k0", l.k0},
                   {"k1", l.k1},
                   {"k2", l.k2},
                   {"k3", l.k3}});
  }
  return arr;
}

std::string MaskDensityReport::render_bars(std::size_t width) const {
  std::size_t name_w = 0;
  for (const auto& l : layers) name_w = std::max(name_w, l.layer.size());
  std::ostringstream out;
  for (const auto& l : layers) {
    const auto filled = static_cast<std::size_t>(std::lround(l.density * static_cast<double>(width)));
    out << std::left << std::setw(static_cast<int>(name_w)) << l.layer << " |" << std::string(filled, '#')
        << std::string(width - filled, '.') << "| " << std::fixed << std::setprecision(1) << 100.0 * l.density
        << "%\n";
  }
  return out.str();
}

MaskDensityReport mask_density(const TaskParams& omega) {
  MaskDensityReport r;
  r.task = omega.name;
  for (const auto* info : omega.arch.masked_layers()) {
    const auto& s = omega.layers.at(info->spec.name);
    const mask::BitMask bits = s.binary();
    LayerDensity l;
    l.layer = info->spec.name;
    l.depth = info->depth;
    l.ones = bits.popcount();
    l.size = bits.size();
    l.density = bits.density();
    l.k0 = s.k.k0.item();
    l.k1.assign(s.k.k1.data().begin(), s.k.k1.data().end());
    l.k2 = s.k.k2.item();
    l.k3 = s.k.k3.item();
    r.layers.push_back(std::move(l));
  }
  return r;
}

}  // namespace maskmod::eval
