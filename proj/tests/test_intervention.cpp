#include <random>

#include <gtest/gtest.h>

#include "cme/intervention.hpp"
#include "oracles.hpp"

namespace cme::intervention {
namespace {

extract::QHat manual_logistic(MatrixD weights, std::vector<int32_t> cardinalities) {
  extract::QHat q;
  q.learner = extract::QHatLearner::kLogistic;
  q.cardinalities = std::move(cardinalities);
  learn::LogisticModel m;
  m.bias = VectorD::Zero(weights.rows());
  for (Eigen::Index c = 0; c < weights.rows(); ++c) m.classes.push_back(static_cast<int32_t>(c));
  m.weights = std::move(weights);
  q.model = m;
  return q;
}

extract::QHatSpec logistic_spec() {
  extract::QHatSpec spec;
  spec.learner = extract::QHatLearner::kLogistic;
  return spec;
}

TEST(RankConcepts, SummedAbsoluteCoefficients) {
  MatrixD w(2, 2);
  w << 3, 0, -3, 0;
  EXPECT_EQ(rank_concepts(manual_logistic(w, {1, 1})), (std::vector<std::size_t>{0, 1}));
  w << 0, 1, 0, -2;
  EXPECT_EQ(rank_concepts(manual_logistic(w, {1, 1})), (std::vector<std::size_t>{1, 0}));
}

TEST(RankConcepts, TiesKeepLowerIndexAndZeroColumnsLast) {
  MatrixD w(2, 5);
  w << 1, 0, 0, 1, 0,
       0, 1, 0, 0, 1;
  // concepts: {0,1} card 2, {2} card 1, {3,4} card 2
  EXPECT_EQ(rank_concepts(manual_logistic(w, {2, 1, 2})), (std::vector<std::size_t>{0, 2, 1}));
}

TEST(RankConcepts, LabelEqualsOneConceptRanksItFirst) {
  std::mt19937_64 rng(3);
  IntMatrix c(300, 4);
  for (Eigen::Index i = 0; i < c.size(); ++i) c.data()[i] = static_cast<int32_t>(rng() % 3);
  for (Eigen::Index j = 0; j < 4; ++j) {
    Labels y(static_cast<std::size_t>(c.rows()));
    for (Eigen::Index i = 0; i < c.rows(); ++i) y[static_cast<std::size_t>(i)] = c(i, j);
    const auto q = extract::extract_qhat(c, y, {3, 3, 3, 3}, logistic_spec());
    EXPECT_EQ(rank_concepts(q).front(), static_cast<std::size_t>(j));
  }
}

TEST(RankConcepts, RequiresLogistic) {
  extract::QHat q;
  q.cardinalities = {2};
  EXPECT_THROW(rank_concepts(q), ValidationError);
}

TEST(InterventionCurve, EndpointsMatchDirectFits) {
  const auto planted = oracle::planted_intervention(11);
  const auto& d = planted.data;
  const auto spec = logistic_spec();
  const auto ranking_q = extract::extract_qhat(d.truth_train, d.targets_train, planted.cardinalities, spec);
  const auto order = rank_concepts(ranking_q);
  EXPECT_EQ(order.front(), 0u);
  const auto curve = intervention_curve(d, planted.cardinalities, order, 4, spec);
  ASSERT_EQ(curve.accuracies.size(), 5u);
  EXPECT_EQ(curve.corrected_counts, (std::vector<std::size_t>{0, 1, 2, 3, 4}));
  EXPECT_EQ(curve.importance_order, order);

  const auto uncorrected = extract::extract_qhat(d.predicted_train, d.targets_train, planted.cardinalities, spec);
  EXPECT_DOUBLE_EQ(curve.accuracies[0], oracle::accuracy(uncorrected.predict(d.predicted_test), d.targets_test));
  EXPECT_NEAR(curve.accuracies[4], oracle::ground_truth_qhat_accuracy(planted, spec), 0.01);
  EXPECT_GT(curve.accuracies[1], curve.accuracies[0] + 0.1);
  EXPECT_GE(curve.accuracies[4], curve.accuracies[0]);
}

TEST(InterventionCurve, TreeLearnerAndDeterminism) {
  const auto planted = oracle::planted_intervention(5);
  extract::QHatSpec spec;
  const std::vector<std::size_t> order{0, 1, 2, 3};
  const auto a = intervention_curve(planted.data, planted.cardinalities, order, 4, spec);
  const auto b = intervention_curve(planted.data, planted.cardinalities, order, 4, spec);
  EXPECT_EQ(a.accuracies, b.accuracies);
  EXPECT_NEAR(a.accuracies[4], oracle::ground_truth_qhat_accuracy(planted, spec), 0.01);
}

TEST(InterventionCurve, RejectsBadArguments) {
  const auto planted = oracle::planted_intervention(2, 40, 20);
  const auto spec = logistic_spec();
  EXPECT_THROW(intervention_curve(planted.data, planted.cardinalities, {0, 1, 2, 3}, 5, spec), ValidationError);
  EXPECT_THROW(intervention_curve(planted.data, planted.cardinalities, {0, 0}, 2, spec), ValidationError);
  EXPECT_THROW(intervention_curve(planted.data, planted.cardinalities, {0}, 2, spec), ValidationError);
  EXPECT_THROW(intervention_curve(planted.data, {3, 2}, {0}, 1, spec), ValidationError);
  auto broken = planted.data;
  broken.targets_train.pop_back();
  EXPECT_THROW(intervention_curve(broken, planted.cardinalities, {0}, 1, spec), ValidationError);
}

}  // namespace
}  // namespace cme::intervention
