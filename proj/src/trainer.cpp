#include "maskmod/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <condition_variable>
#include <deque>
#include <mutex>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <thread>

#include "maskmod/error.hpp"
#include "maskmod/layers.hpp"
#include "maskmod/optim.hpp"

namespace maskmod::train {

double Schedule::adam_lr_at(std::size_t epoch) const { return epoch >= decay_epoch ? adam_lr / decay_factor : adam_lr; }
double Schedule::sgd_lr_at(std::size_t epoch) const { return epoch >= decay_epoch ? sgd_lr / decay_factor : sgd_lr; }

void Schedule::validate() const {
  if (epochs == 0 || batch_size == 0) throw Error(ErrorKind::invalid_argument, "schedule needs epochs and batch size > 0");
  if (decay_epoch >= epochs) {
    throw Error(ErrorKind::invalid_argument, "decay epoch " + std::to_string(decay_epoch) +
                                                 " must be below the epoch count " + std::to_string(epochs));
  }
  if (!(adam_lr > 0.0) || !(sgd_lr > 0.0) || !(decay_factor > 0.0) || momentum < 0.0 || momentum >= 1.0) {
    throw Error(ErrorKind::invalid_argument, "schedule learning rates must be positive and momentum in [0,1)");
  }
}

nlohmann::json Schedule::to_json() const {
  return {{"epochs", epochs},   {"decay_epoch", decay_epoch}, {"batch_size", batch_size},     {"adam_lr", adam_lr},
          {"sgd_lr", sgd_lr},   {"momentum", momentum},       {"decay_factor", decay_factor}};
}

Schedule Schedule::from_json(const nlohmann::json& j) { return from_json(j, Schedule{}); }

Schedule Schedule::from_json(const nlohmann::json& j, Schedule d) {
  try {
    d.epochs = j.value("epochs", d.epochs);
    d.decay_epoch = j.value("decay_epoch", d.decay_epoch);
    d.batch_size = j.value("batch_size", d.batch_size);
    d.adam_lr = j.value("adam_lr", d.adam_lr);
    d.sgd_lr = j.value("sgd_lr", d.sgd_lr);
    d.momentum = j.value("momentum", d.momentum);
    d.decay_factor = j.value("decay_factor", d.decay_factor);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::parse, std::string("schedule: ") + e.what());
  }
  d.validate();
  return d;
}

nlohmann::json EpochMetrics::to_json() const {
  return {{"epoch", epoch}, {"split", split}, {"loss", loss}, {"accuracy", accuracy},
          {"lrs", {{"adam", adam_lr}, {"sgd", sgd_lr}}}};
}

namespace {

struct Batch {
  Tensor images;
  std::vector<int> labels;
};

std::vector<std::vector<std::size_t>> plan_epoch(std::size_t n, std::size_t batch_size, std::mt19937_64& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t end = std::min(n, start + batch_size);
    // A trailing batch of one sample cannot feed batch statistics.
    if (end - start < 2 && !batches.empty()) {
      batches.back().push_back(order[start]);
      continue;
    }
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

Batch make_batch(const data::Dataset& set, const std::vector<std::size_t>& idx, bool mirror, std::mt19937_64& rng) {
  std::vector<std::uint8_t> flags;
  if (mirror) {
    std::bernoulli_distribution coin(0.5);
    flags.resize(idx.size());
    for (auto& f : flags) f = coin(rng) ? 1 : 0;
  }
  return {set.batch(idx, flags), set.batch_labels(idx)};
}

/// Single-producer bounded queue.
class BatchQueue {
 public:
  explicit BatchQueue(std::size_t capacity) : capacity_(capacity) {}

  void push(Batch b) {
    std::unique_lock lock(mu_);
    not_full_.wait(lock, [&] { return items_.size() < capacity_; });
    items_.push_back(std::move(b));
    not_empty_.notify_one();
  }

  Batch pop() {
    std::unique_lock lock(mu_);
    not_empty_.wait(lock, [&] { return !items_.empty(); });
    Batch b = std::move(items_.front());
    items_.pop_front();
    not_full_.notify_one();
    return b;
  }

 private:
  std::size_t capacity_;
  std::mutex mu_;
  std::condition_variable not_full_, not_empty_;
  std::deque<Batch> items_;
};

}  // namespace

Accuracy measure(const ForwardFn& forward, const data::Dataset& set, std::size_t batch_size) {
  Accuracy acc;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < set.size(); start += batch_size) {
    idx.clear();
    for (std::size_t i = start; i < std::min(set.size(), start + batch_size); ++i) idx.push_back(i);
    const auto labels = set.batch_labels(idx);
    const Tensor logits = forward(set.batch(idx), false);
    const auto pred = nn::argmax_rows(logits);
    for (std::size_t i = 0; i < pred.size(); ++i) acc.correct += pred[i] == labels[i] ? 1 : 0;
    acc.loss += nn::softmax_xent(logits.detach(), labels).item() * static_cast<double>(idx.size());
    acc.total += idx.size();
  }
  if (acc.total > 0) acc.loss /= static_cast<double>(acc.total);
  return acc;
}

TrainResult train(const ForwardFn& forward, const ParamGroups& groups, const data::Dataset& train_set,
                  const TrainOptions& options) {
  const auto& schedule = options.schedule;
  schedule.validate();
  if (train_set.size() < 2) throw Error(ErrorKind::invalid_argument, "training set needs at least 2 samples");

  optim::Adam adam(groups.adam, {schedule.adam_lr});
  optim::SgdMomentum sgd(groups.sgd, {schedule.sgd_lr, schedule.momentum});
  std::mt19937_64 order_rng(options.seed);
  std::mt19937_64 augment_rng(options.seed ^ 0x5bd1e995ULL);

  TrainResult result;
  for (std::size_t epoch = 0; epoch < schedule.epochs; ++epoch) {
    adam.set_lr(schedule.adam_lr_at(epoch));
    sgd.set_lr(schedule.sgd_lr_at(epoch));
    const auto plan = plan_epoch(train_set.size(), schedule.batch_size, order_rng);

    std::optional<BatchQueue> queue;
    std::thread producer;
    if (options.prefetch) {
      queue.emplace(4);
      producer = std::thread([&] {
        for (const auto& idx : plan) queue->push(make_batch(train_set, idx, options.mirror, augment_rng));
      });
    }

    double loss_sum = 0.0;
    std::size_t correct = 0, seen = 0, consumed = 0;
    try {
      for (std::size_t b = 0; b < plan.size(); ++b) {
        Batch batch = queue ? queue->pop() : make_batch(train_set, plan[b], options.mirror, augment_rng);
        ++consumed;
        adam.zero_grad();
        sgd.zero_grad();
        const Tensor logits = forward(batch.images, true);
        const Tensor loss = nn::softmax_xent(logits, batch.labels);
        const double value = loss.item();
        if (!std::isfinite(value)) {
          std::ostringstream msg;
          msg << "non-finite loss at epoch " << epoch << ", batch " << b << " (adam lr " << adam.lr() << ", sgd lr "
              << sgd.lr() << ")";
          throw Error(ErrorKind::numerical, msg.str());
        }
        backward(loss);
        adam.step();
        sgd.step();

        const auto pred = nn::argmax_rows(logits);
        for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == batch.labels[i] ? 1 : 0;
        loss_sum += value * static_cast<double>(pred.size());
        seen += pred.size();
        if (options.on_step) options.on_step(epoch, b, value);
      }
    } catch (...) {
      if (producer.joinable()) {
        // The producer pushes exactly one batch per plan entry; drain them so it can exit.
        for (; consumed < plan.size(); ++consumed) (void)queue->pop();
        producer.join();
      }
      throw;
    }
    if (producer.joinable()) producer.join();

    EpochMetrics m{epoch, "train", loss_sum / static_cast<double>(seen),
                   static_cast<double>(correct) / static_cast<double>(seen), adam.lr(), sgd.lr()};
    result.metrics.push_back(m);
    if (options.on_epoch) options.on_epoch(m);
    if (options.eval_set) {
      const auto acc = measure(forward, *options.eval_set);
      EpochMetrics t{epoch, "test", acc.loss, acc.value(), adam.lr(), sgd.lr()};
      result.metrics.push_back(t);
      if (options.on_epoch) options.on_epoch(t);
    }
  }
  return result;
}

}  // namespace maskmod::train
