#include <random>
#include <set>

#include <gtest/gtest.h>

#include "cme/metrics.hpp"
#include "cme/predictor.hpp"
#include "oracles.hpp"

namespace cme::metrics {
namespace {

TEST(Fidelity, Examples) {
  EXPECT_EQ(fidelity({1, 2, 3}, {1, 2, 3}), 1.0);
  EXPECT_DOUBLE_EQ(fidelity({1, 2, 3, 4}, {1, 0, 3, 0}), 0.5);
  EXPECT_THROW(fidelity({1}, {1, 2}), ValidationError);
  std::mt19937_64 rng(1);
  for (int t = 0; t < 20; ++t) {
    Labels a(30), b(30);
    for (auto& v : a) v = static_cast<int32_t>(rng() % 3);
    for (auto& v : b) v = static_cast<int32_t>(rng() % 3);
    EXPECT_DOUBLE_EQ(fidelity(a, b), fidelity(b, a));
    EXPECT_DOUBLE_EQ(fidelity(a, b), 1.0 - learn::error_rate(a, b));
    EXPECT_EQ(task_accuracy(a, b), fidelity(a, b));
  }
}

double f1_oracle(const Labels& pred, const Labels& truth) {
  std::set<int32_t> values(pred.begin(), pred.end());
  values.insert(truth.begin(), truth.end());
  double sum = 0.0;
  for (auto v : values) {
    double tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
      tp += pred[i] == v && truth[i] == v;
      fp += pred[i] == v && truth[i] != v;
      fn += pred[i] != v && truth[i] == v;
    }
    const double p = tp + fp > 0 ? tp / (tp + fp) : 0.0;
    const double r = tp + fn > 0 ? tp / (tp + fn) : 0.0;
    sum += p + r > 0 ? 2 * p * r / (p + r) : 0.0;
  }
  return sum / static_cast<double>(values.size());
}

TEST(MacroF1, Examples) {
  EXPECT_EQ(concept_macro_f1({0, 1, 2}, {0, 1, 2}), 1.0);
  EXPECT_NEAR(concept_macro_f1({0, 0, 0, 0}, {0, 1, 0, 1}), 1.0 / 3.0, 1e-12);
  IntMatrix a(4, 2), b(4, 2);
  a << 0, 1, 1, 1, 0, 0, 1, 0;
  EXPECT_EQ(macro_f1_per_concept(a, a), 1.0);
  b = a;
  b(2, 1) = 1;
  EXPECT_LT(macro_f1_per_concept(b, a), 1.0);
  EXPECT_THROW(macro_f1_per_concept(a, IntMatrix(3, 2)), ValidationError);
}

TEST(MacroF1, MatchesPerConceptOracle) {
  std::mt19937_64 rng(4);
  for (int t = 0; t < 50; ++t) {
    IntMatrix pred(25, 4), truth(25, 4);
    for (Eigen::Index i = 0; i < pred.size(); ++i) {
      truth.data()[i] = static_cast<int32_t>(rng() % 4);
      pred.data()[i] = rng() % 3 ? truth.data()[i] : static_cast<int32_t>(rng() % 4);
    }
    double mean = 0.0;
    for (Eigen::Index c = 0; c < 4; ++c) {
      Labels pc, tc;
      for (Eigen::Index i = 0; i < 25; ++i) {
        pc.push_back(pred(i, c));
        tc.push_back(truth(i, c));
      }
      const double expected = f1_oracle(pc, tc);
      EXPECT_NEAR(concept_macro_f1(pc, tc), expected, 1e-12);
      mean += expected / 4.0;
    }
    EXPECT_NEAR(macro_f1_per_concept(pred, truth), mean, 1e-12);
  }
}

TEST(ConceptAccuracy, AndMajorityBaseline) {
  IntMatrix truth(4, 2), pred(4, 2);
  truth << 0, 1, 0, 2, 1, 2, 0, 2;
  pred << 0, 1, 1, 2, 1, 0, 0, 2;
  EXPECT_EQ(concept_accuracy(pred, truth), (std::vector<double>{0.75, 0.75}));
  EXPECT_EQ(majority_baseline(truth), (std::vector<double>{0.75, 0.75}));
}

TEST(Mpo, DirectCountExample) {
  IntMatrix truth = IntMatrix::Zero(4, 3);
  IntMatrix pred = truth;
  pred(1, 0) = 1;
  pred(2, 0) = pred(2, 1) = 1;
  pred.row(3).setOnes();
  const auto curve = mpo_curve(truth, pred, {true, true, true});
  EXPECT_EQ(curve.values, (std::vector<double>{1.0, 0.75, 0.5, 0.25}));
  EXPECT_EQ(curve.sample_count, 4u);
  EXPECT_EQ(mismatch_counts(truth, pred, {true, true, true}), (std::vector<std::size_t>{0, 1, 2, 3}));
}

TEST(Mpo, PerfectPrediction) {
  IntMatrix truth = IntMatrix::Ones(5, 3);
  const auto curve = mpo_curve(truth, truth, {true, false, true});
  EXPECT_EQ(curve.values, (std::vector<double>{1.0, 0.0, 0.0, 0.0}));
}

TEST(Mpo, MatchesDirectCountOracle) {
  std::mt19937_64 rng(2024);
  for (int i = 0; i < 1000; ++i) {
    const auto inst = oracle::random_mpo_instance(rng);
    const auto check = oracle::check_mpo(inst);
    ASSERT_TRUE(check.equal) << "instance " << i;
    ASSERT_TRUE(check.monotone) << "instance " << i;
    ASSERT_TRUE(check.starts_at_one) << "instance " << i;
  }
}

TEST(Mpo, ShrinkingMaskNeverIncreases) {
  std::mt19937_64 rng(7);
  for (int i = 0; i < 200; ++i) {
    auto inst = oracle::random_mpo_instance(rng);
    const auto full = mpo_curve(inst.truth, inst.pred, inst.mask).values;
    auto smaller = inst.mask;
    smaller[rng() % smaller.size()] = false;
    const auto reduced = mpo_curve(inst.truth, inst.pred, smaller).values;
    for (std::size_t m = 0; m < full.size(); ++m) EXPECT_LE(reduced[m], full[m]);
  }
}

TEST(Mpo, ShapeErrors) {
  EXPECT_THROW(mpo_curve(IntMatrix::Zero(2, 2), IntMatrix::Zero(3, 2), {true, true}), ValidationError);
  EXPECT_THROW(mpo_curve(IntMatrix::Zero(2, 2), IntMatrix::Zero(2, 2), {true}), ValidationError);
}

}  // namespace
}  // namespace cme::metrics
