#include <gtest/gtest.h>

#include <sstream>

#include "rforge/training.hpp"
#include "test_util.hpp"

using namespace rforge;

namespace {

constexpr Dims kDims{8, 8, 8};

// Label-1 volumes are brighter on average, so a tiny classifier can learn
// them within a few epochs.
struct ToyData {
  std::vector<Volume> volumes;
  std::vector<int> labels;

  explicit ToyData(std::size_t n, std::uint64_t seed) {
    for (std::size_t i = 0; i < n; ++i) {
      const int label = static_cast<int>(i % 2);
      volumes.push_back(test::random_volume(2, kDims, seed + i, label ? 0.3 : 0.0, label ? 1.0 : 0.7));
      labels.push_back(label);
    }
  }

  std::vector<Sample> samples(std::size_t begin, std::size_t end) const {
    std::vector<Sample> out;
    for (std::size_t i = begin; i < end; ++i) out.push_back({&volumes[i], labels[i]});
    return out;
  }
};

ClassifierSpec toy_classifier_spec() {
  ClassifierSpec cs;
  cs.dims = kDims;
  cs.stem_width = 4;
  cs.block_widths = {4};
  return cs;
}

GeneratorSpec toy_generator_spec() {
  GeneratorSpec gs;
  gs.dims = kDims;
  gs.output_bias = 3.0;
  return gs;
}

TrainConfig toy_train(double lr, std::uint32_t epochs) {
  TrainConfig tc;
  tc.lr = lr;
  tc.epochs = epochs;
  tc.batch = 4;
  tc.seed = 5;
  return tc;
}

}  // namespace

TEST(TrainClassifier, DeterministicAndRecordsEveryEpoch) {
  const ToyData data(16, 100);
  const auto tr = data.samples(0, 12), va = data.samples(12, 16);
  const auto a = train_classifier<float>(tr, va, toy_classifier_spec(), toy_train(0.01, 4));
  const auto b = train_classifier<float>(tr, va, toy_classifier_spec(), toy_train(0.01, 4));
  ASSERT_EQ(a.metrics.size(), 5u);
  for (std::uint32_t e = 0; e < 5; ++e) {
    EXPECT_EQ(a.metrics[e].epoch, e);
    EXPECT_EQ(a.metrics[e].train_loss, b.metrics[e].train_loss);
    EXPECT_EQ(a.metrics[e].val_metric, b.metrics[e].val_metric);
  }
  EXPECT_EQ(a.best.checksum(), b.best.checksum());
  EXPECT_EQ(a.best_epoch, b.best_epoch);
  EXPECT_EQ(a.best.epoch(), a.best_epoch);
}

TEST(TrainClassifier, KeepsBestValidationAuc) {
  const ToyData data(24, 200);
  const auto tr = data.samples(0, 16), va = data.samples(16, 24);
  const auto run = train_classifier<float>(tr, va, toy_classifier_spec(), toy_train(0.01, 6));
  for (const auto& m : run.metrics) {
    EXPECT_LE(m.val_metric, run.metrics[run.best_epoch].val_metric);
    if (m.val_metric == run.metrics[run.best_epoch].val_metric)
      EXPECT_GE(m.val_aux, run.metrics[run.best_epoch].val_aux);
  }
  EXPECT_EQ(samples_auc(run.best, std::span<const Sample>(va)), run.metrics[run.best_epoch].val_metric);
}

TEST(TrainClassifier, LearnsSeparableToyData) {
  const ToyData data(32, 300);
  const auto tr = data.samples(0, 24), va = data.samples(24, 32);
  const auto run = train_classifier<float>(tr, va, toy_classifier_spec(), toy_train(0.01, 10));
  EXPECT_GE(run.metrics[run.best_epoch].val_metric, 0.9);
  EXPECT_LT(run.metrics.back().train_loss, run.metrics.front().train_loss);
}

TEST(TrainClassifier, Rejections) {
  const ToyData data(4, 1);
  const auto tr = data.samples(0, 4);
  EXPECT_THROW(train_classifier<float>(tr, {}, toy_classifier_spec(), toy_train(0.01, 1)), SpecError);
  auto tc = toy_train(0.01, 1);
  tc.batch = 0;
  EXPECT_THROW(train_classifier<float>(tr, tr, toy_classifier_spec(), tc), SpecError);
}

TEST(TrainClassifier, DivergenceIsReported) {
  const ToyData data(8, 9);
  const auto tr = data.samples(0, 8);
  try {
    train_classifier<float>(tr, tr, toy_classifier_spec(), toy_train(1e30, 3));
    FAIL() << "expected TrainingError";
  } catch (const TrainingError& e) {
    EXPECT_EQ(std::string(e.category()), "divergence");
    EXPECT_GE(e.epoch(), 1);
  }
}

TEST(TrainGenerator, DeterministicFrozenAndSelectsMinimum) {
  const ToyData data(12, 400);
  const auto tr = data.samples(0, 8), va = data.samples(8, 12);
  const auto clf = train_classifier<float>(tr, va, toy_classifier_spec(), toy_train(0.01, 2)).best;
  const auto sum = clf.checksum();
  const auto a = train_generator<float>(tr, va, clf, toy_generator_spec(), toy_train(0.001, 3), LossConfig{});
  const auto b = train_generator<float>(tr, va, clf, toy_generator_spec(), toy_train(0.001, 3), LossConfig{});
  EXPECT_EQ(clf.checksum(), sum);
  EXPECT_EQ(a.best.checksum(), b.best.checksum());
  ASSERT_EQ(a.metrics.size(), 4u);
  EXPECT_EQ(a.steps.size(), 3u * 2u);
  for (const auto& m : a.metrics) EXPECT_GE(m.val_metric, a.metrics[a.best_epoch].val_metric);
  for (const auto& s : a.steps) EXPECT_NEAR(s.total, s.perturbation + s.l1 + s.indecisive, 1e-6);
  auto frozen = clf.clone();
  frozen.set_trainable(false);
  const auto ev = evaluate_generator(a.best, frozen, std::span<const Sample>(va), LossConfig{});
  EXPECT_NEAR(ev.breakdown.total, a.metrics[a.best_epoch].val_metric, 1e-9);
  EXPECT_NEAR(ev.mean_gap, a.metrics[a.best_epoch].val_aux, 1e-9);
}

TEST(TrainGenerator, Rejections) {
  const ToyData data(4, 1);
  const auto tr = data.samples(0, 4);
  const auto clf = build_classifier(toy_classifier_spec(), 1);
  LossConfig bad;
  bad.epsilon_gap = 0;
  EXPECT_THROW(train_generator<float>(tr, tr, clf, toy_generator_spec(), toy_train(0.001, 1), bad), SpecError);
  EXPECT_THROW(train_generator<float>(tr, {}, clf, toy_generator_spec(), toy_train(0.001, 1), LossConfig{}),
               SpecError);
}

TEST(MetricsTsv, HeaderAndRows) {
  std::vector<EpochMetrics> rows{{0, 0.5, 0.75, 1.0, 0.25}, {1, 0.25, 1.0, 2.0, 0.125}};
  std::ostringstream os;
  write_metrics_tsv(rows, os, "val_bce");
  EXPECT_EQ(os.str(),
            "epoch\ttrain_loss\tval_metric\twall_seconds\tval_bce\n"
            "0\t0.5\t0.75\t1\t0.25\n"
            "1\t0.25\t1\t2\t0.125\n");
}
