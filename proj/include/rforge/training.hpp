#pragma once

// Classifier and generator training loops. Both are serial and fully
// determined by their seeds; each records one metrics row per epoch (epoch 0
// is the untrained model) and returns the best-epoch snapshot.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <ostream>
#include <span>
#include <vector>

#include "rforge/error.hpp"
#include "rforge/metrics.hpp"
#include "rforge/models.hpp"
#include "rforge/objective.hpp"
#include "rforge/optim.hpp"
#include "rforge/rng.hpp"

namespace rforge {

struct Sample {
  const Volume* volume = nullptr;
  int label = 0;
};

struct TrainConfig {
  double lr = 0.01;
  std::uint32_t epochs = 100;
  std::uint32_t batch = 4;
  std::uint64_t seed = 1;
};

struct EpochMetrics {
  std::uint32_t epoch = 0;
  double train_loss = 0;
  double val_metric = 0;  // classifier: validation AUC; generator: validation total loss
  double wall_seconds = 0;
  // Secondary validation figure: classifier mean BCE, generator mean |y_p - y_np|.
  double val_aux = 0;
};

template <class T>
struct TrainingRun {
  ModelParams<T> best;
  std::uint32_t best_epoch = 0;
  std::vector<EpochMetrics> metrics;
  std::vector<LossBreakdown> steps;  // generator only
};

// Columns: epoch, train_loss, val_metric, wall_seconds, then val_aux under
// the given column name.
inline void write_metrics_tsv(const std::vector<EpochMetrics>& rows, std::ostream& os,
                              const char* aux_name) {
  os << "epoch\ttrain_loss\tval_metric\twall_seconds\t" << aux_name << "\n";
  for (const auto& r : rows)
    os << r.epoch << '\t' << r.train_loss << '\t' << r.val_metric << '\t' << r.wall_seconds << '\t'
       << r.val_aux << "\n";
}

// Called after each epoch's metrics row is recorded.
using EpochCallback = std::function<void(const EpochMetrics&)>;

namespace detail {

inline std::vector<const Volume*> volumes_of(std::span<const Sample> samples, std::span<const std::size_t> idx) {
  std::vector<const Volume*> out;
  for (auto i : idx) out.push_back(samples[i].volume);
  return out;
}

inline void require_samples(std::span<const Sample> train, std::span<const Sample> val) {
  if (train.empty() || val.empty()) throw SpecError("training needs nonempty train and validation splits");
}

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace detail

template <class T>
std::vector<double> predict_samples(const ModelParams<T>& classifier, std::span<const Sample> samples,
                                    std::size_t batch = 8) {
  std::vector<double> out;
  for (std::size_t i = 0; i < samples.size(); i += batch) {
    std::vector<const Volume*> vs;
    for (std::size_t j = i; j < std::min(samples.size(), i + batch); ++j) vs.push_back(samples[j].volume);
    const auto p = predict_batch(classifier, std::span<const Volume* const>(vs));
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

template <class T>
double samples_auc(const ModelParams<T>& classifier, std::span<const Sample> samples) {
  const auto scores = predict_samples(classifier, samples);
  std::vector<int> labels;
  for (const auto& s : samples) labels.push_back(s.label);
  return auc(scores, labels);
}

struct ClassifierScore {
  double auc = 0;
  double bce = 0;
};

template <class T>
ClassifierScore score_classifier(const ModelParams<T>& classifier, std::span<const Sample> samples) {
  const auto p = predict_samples(classifier, samples);
  std::vector<int> labels;
  ClassifierScore s;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    labels.push_back(samples[i].label);
    s.bce += bce_loss(p[i], samples[i].label) / static_cast<double>(samples.size());
  }
  s.auc = auc(p, labels);
  return s;
}

// Adam on batch-mean BCE; keeps the snapshot with the highest validation
// AUC. AUC saturates early on separable data, so ties go to the lower
// validation BCE and then to the earliest epoch.
template <class T = float>
TrainingRun<T> train_classifier(std::span<const Sample> train, std::span<const Sample> val,
                                const ClassifierSpec& spec, const TrainConfig& cfg,
                                const EpochCallback& on_epoch = {}) {
  detail::require_samples(train, val);
  if (cfg.batch == 0) throw SpecError("batch size must be positive");
  TrainingRun<T> run;
  ModelParams<T> model = build_classifier<T>(spec, cfg.seed);
  Adam<T> adam(model, AdamConfig{cfg.lr});
  CounterRng order_rng(cfg.seed, 0x0DE5);
  const auto t0 = std::chrono::steady_clock::now();

  const auto record = [&](std::uint32_t epoch, double train_loss) {
    const ClassifierScore score = score_classifier(model, val);
    EpochMetrics m{epoch, train_loss, score.auc, detail::seconds_since(t0), score.bce};
    run.metrics.push_back(m);
    const EpochMetrics& best = run.metrics[run.best_epoch];
    if (run.metrics.size() == 1 || m.val_metric > best.val_metric ||
        (m.val_metric == best.val_metric && m.val_aux < best.val_aux)) {
      run.best_epoch = epoch;
      run.best = model.clone();
      run.best.set_epoch(epoch);
    }
    if (on_epoch) on_epoch(m);
  };

  {
    const auto p = predict_samples(model, train);
    double loss = 0;
    for (std::size_t i = 0; i < train.size(); ++i) loss += bce_loss(p[i], train[i].label);
    record(0, loss / static_cast<double>(train.size()));
  }

  std::vector<std::size_t> order(train.size());
  for (std::uint32_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    CounterRng rng = order_rng.split(epoch);
    shuffle(order, rng);
    double loss_sum = 0;
    try {
      for (std::size_t b = 0; b < order.size(); b += cfg.batch) {
        const std::size_t e = std::min<std::size_t>(order.size(), b + cfg.batch);
        std::span<const std::size_t> idx(order.data() + b, e - b);
        const auto vols = detail::volumes_of(train, idx);
        std::vector<int> labels;
        for (auto i : idx) labels.push_back(train[i].label);
        auto x = ad::constant(batch_tensor<T>(std::span<const Volume* const>(vols)));
        auto loss = ad::bce(classifier_forward(model, x), labels);
        ad::backward(loss);
        adam.step();
        model.zero_grad();
        loss_sum += static_cast<double>(loss->value[0]) * static_cast<double>(idx.size());
      }
    } catch (const NonFiniteError& e) {
      throw TrainingError(std::string("classifier training diverged: ") + e.what(), static_cast<int>(epoch));
    }
    const double train_loss = loss_sum / static_cast<double>(order.size());
    if (!std::isfinite(train_loss)) throw TrainingError("classifier loss is not finite", static_cast<int>(epoch));
    record(epoch, train_loss);
  }
  return run;
}

struct GeneratorEval {
  LossBreakdown breakdown;  // item-weighted means over the split
  double mean_gap = 0;      // mean |y_p - y_np|
};

// Objective over a whole split without recording gradients.
template <class T>
GeneratorEval evaluate_generator(const ModelParams<T>& generator, const ModelParams<T>& frozen_classifier,
                                 std::span<const Sample> samples, const LossConfig& loss_cfg,
                                 std::size_t batch = 4) {
  ad::NoGradGuard guard;
  GeneratorEval ev;
  auto& b = ev.breakdown;
  const double n = static_cast<double>(samples.size());
  for (std::size_t i = 0; i < samples.size(); i += batch) {
    std::vector<const Volume*> vs;
    for (std::size_t j = i; j < std::min(samples.size(), i + batch); ++j) vs.push_back(samples[j].volume);
    const double w = static_cast<double>(vs.size()) / n;
    auto x = ad::constant(batch_tensor<T>(std::span<const Volume* const>(vs)));
    auto r = total_loss(frozen_classifier, x, generator_forward(generator, x), loss_cfg);
    b.perturbation += w * r.breakdown.perturbation;
    b.l1 += w * r.breakdown.l1;
    b.indecisive += w * r.breakdown.indecisive;
    b.total += w * r.breakdown.total;
    b.y_p += w * r.breakdown.y_p;
    b.y_np += w * r.breakdown.y_np;
    for (std::size_t k = 0; k < vs.size(); ++k)
      ev.mean_gap += std::abs(static_cast<double>(r.y_p->value[k]) - static_cast<double>(r.y_np[k])) / n;
  }
  return ev;
}

// Adam on the composite objective through the frozen classifier into the
// generator only. Keeps the snapshot with the lowest validation total
// (ties keep the earliest epoch). Labels are not used.
template <class T = float>
TrainingRun<T> train_generator(std::span<const Sample> train, std::span<const Sample> val,
                               const ModelParams<T>& classifier, const GeneratorSpec& spec,
                               const TrainConfig& cfg, const LossConfig& loss_cfg,
                               const EpochCallback& on_epoch = {}) {
  detail::require_samples(train, val);
  loss_cfg.validate();
  if (cfg.batch == 0) throw SpecError("batch size must be positive");
  const std::uint64_t classifier_sum = classifier.checksum();
  ModelParams<T> frozen = classifier.clone();
  frozen.set_trainable(false);

  TrainingRun<T> run;
  ModelParams<T> gen = build_generator<T>(spec, cfg.seed);
  Adam<T> adam(gen, AdamConfig{cfg.lr});
  CounterRng order_rng(cfg.seed, 0x6E0D);
  const auto t0 = std::chrono::steady_clock::now();

  const auto record = [&](std::uint32_t epoch, double train_loss) {
    GeneratorEval ev;
    try {
      ev = evaluate_generator(gen, frozen, val, loss_cfg);
    } catch (const NonFiniteError& e) {
      throw TrainingError(std::string("generator validation diverged: ") + e.what(), static_cast<int>(epoch));
    }
    EpochMetrics m{epoch, train_loss, ev.breakdown.total, detail::seconds_since(t0), ev.mean_gap};
    run.metrics.push_back(m);
    if (run.metrics.size() == 1 || m.val_metric < run.metrics[run.best_epoch].val_metric) {
      run.best_epoch = epoch;
      run.best = gen.clone();
      run.best.set_epoch(epoch);
    }
    if (on_epoch) on_epoch(m);
  };

  record(0, evaluate_generator(gen, frozen, train, loss_cfg).breakdown.total);

  std::vector<std::size_t> order(train.size());
  for (std::uint32_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    CounterRng rng = order_rng.split(epoch);
    shuffle(order, rng);
    double loss_sum = 0;
    try {
      for (std::size_t b = 0; b < order.size(); b += cfg.batch) {
        const std::size_t e = std::min<std::size_t>(order.size(), b + cfg.batch);
        std::span<const std::size_t> idx(order.data() + b, e - b);
        const auto vols = detail::volumes_of(train, idx);
        auto x = ad::constant(batch_tensor<T>(std::span<const Volume* const>(vols)));
        auto r = total_loss(frozen, x, generator_forward(gen, x), loss_cfg);
        ad::backward(r.total);
        adam.step();
        gen.zero_grad();
        run.steps.push_back(r.breakdown);
        loss_sum += r.breakdown.total * static_cast<double>(idx.size());
      }
    } catch (const NonFiniteError& e) {
      throw TrainingError(std::string("generator training diverged: ") + e.what(), static_cast<int>(epoch));
    }
    const double train_loss = loss_sum / static_cast<double>(order.size());
    if (!std::isfinite(train_loss)) throw TrainingError("generator loss is not finite", static_cast<int>(epoch));
    record(epoch, train_loss);
  }
  if (frozen.checksum() != classifier_sum || classifier.checksum() != classifier_sum)
    throw Error("internal: classifier parameters changed during generator training");
  return run;
}

}  // namespace rforge
