#pragma once

#include <vector>

#include "cme/extraction.hpp"

namespace cme::intervention {

struct InterventionCurve {
  std::vector<std::size_t> corrected_counts;  // 0..max_corrected
  std::vector<double> accuracies;
  std::vector<std::size_t> importance_order;
};

/// Concept indices by descending summed |coefficient| over all classes and the
/// concept's one-hot columns; ties keep the lower index.
std::vector<std::size_t> rank_concepts(const extract::QHat& q_lr);

struct InterventionData {
  IntMatrix predicted_train, predicted_test;  // p̂ concept codes
  IntMatrix truth_train, truth_test;          // ground-truth concept codes
  Labels targets_train, targets_test;
};

/// For each i, replaces the first i concepts of order with ground truth in both splits,
/// refits q̂ on the modified train split and scores it on the modified test split.
InterventionCurve intervention_curve(const InterventionData& data, const std::vector<int32_t>& cardinalities,
                                     const std::vector<std::size_t>& order, std::size_t max_corrected,
                                     const extract::QHatSpec& learner);

}  // namespace cme::intervention
