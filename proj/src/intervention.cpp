#include "cme/intervention.hpp"

#include <algorithm>
#include <numeric>

#include <fmt/format.h>

#include "cme/metrics.hpp"

namespace cme::intervention {

std::vector<std::size_t> rank_concepts(const extract::QHat& q_lr) {
  if (q_lr.learner != extract::QHatLearner::kLogistic) throw ValidationError("concept ranking needs a logistic surrogate");
  const MatrixD& w = q_lr.logistic().weights;
  const auto ranges = q_lr.concept_columns();
  std::vector<double> importance(ranges.size(), 0.0);
  for (std::size_t c = 0; c < ranges.size(); ++c) {
    const auto begin = static_cast<Eigen::Index>(ranges[c].first);
    const auto width = static_cast<Eigen::Index>(ranges[c].second - ranges[c].first);
    importance[c] = w.middleCols(begin, width).cwiseAbs().sum();
  }
  std::vector<std::size_t> order(ranges.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return importance[a] > importance[b]; });
  return order;
}

namespace {

void check(const IntMatrix& a, const IntMatrix& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ValidationError(fmt::format("shape mismatch in {}: [{} x {}] vs [{} x {}]", what, a.rows(), a.cols(), b.rows(), b.cols()));
  }
}

IntMatrix corrected(const IntMatrix& predicted, const IntMatrix& truth, const std::vector<std::size_t>& order, std::size_t i) {
  IntMatrix out = predicted;
  for (std::size_t j = 0; j < i; ++j) out.col(static_cast<Eigen::Index>(order[j])) = truth.col(static_cast<Eigen::Index>(order[j]));
  return out;
}

}  // namespace

InterventionCurve intervention_curve(const InterventionData& data, const std::vector<int32_t>& cardinalities,
                                     const std::vector<std::size_t>& order, std::size_t max_corrected,
                                     const extract::QHatSpec& learner) {
  check(data.predicted_train, data.truth_train, "train split");
  check(data.predicted_test, data.truth_test, "test split");
  const auto k = static_cast<std::size_t>(data.predicted_train.cols());
  if (static_cast<std::size_t>(data.predicted_test.cols()) != k || cardinalities.size() != k) {
    throw ValidationError("train, test and cardinalities disagree on the concept count");
  }
  if (data.targets_train.size() != static_cast<std::size_t>(data.predicted_train.rows()) ||
      data.targets_test.size() != static_cast<std::size_t>(data.predicted_test.rows())) {
    throw ValidationError("target count does not match the concept rows");
  }
  if (max_corrected > k) throw ValidationError(fmt::format("max_corrected {} exceeds the {} concepts", max_corrected, k));
  if (order.size() < max_corrected) throw ValidationError("importance order is shorter than max_corrected");
  std::vector<bool> seen(k, false);
  for (auto c : order) {
    if (c >= k || seen[c]) throw ValidationError("importance order is not a permutation prefix");
    seen[c] = true;
  }

  InterventionCurve curve;
  curve.importance_order = order;
  curve.corrected_counts.resize(max_corrected + 1);
  std::iota(curve.corrected_counts.begin(), curve.corrected_counts.end(), std::size_t{0});
  curve.accuracies.assign(max_corrected + 1, 0.0);
  parallel_for(max_corrected + 1, [&](std::size_t i) {
    const IntMatrix train = corrected(data.predicted_train, data.truth_train, order, i);
    const IntMatrix test = corrected(data.predicted_test, data.truth_test, order, i);
    const extract::QHat q = extract::extract_qhat(train, data.targets_train, cardinalities, learner);
    curve.accuracies[i] = metrics::task_accuracy(q.predict(test), data.targets_test);
  });
  return curve;
}

}  // namespace cme::intervention
