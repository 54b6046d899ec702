#pragma once

#include <vector>

#include "cme/common.hpp"

namespace cme::metrics {

/// values[m] for m = 0..k: fraction of samples with at least m relevant concepts wrong.
struct MpoCurve {
  std::vector<double> values;
  std::vector<bool> relevant_mask;
  std::size_t sample_count = 0;
};

/// Agreement fraction between two label vectors.
double fidelity(const Labels& fhat_labels, const Labels& model_outputs);

/// Accuracy against ground-truth task labels (same computation as fidelity).
double task_accuracy(const Labels& predicted, const Labels& truth);

/// Macro-F1 over the values of a single concept column. The value set is the union of
/// observed true and predicted codes; an undefined precision or recall counts as 0.
double concept_macro_f1(const Labels& predicted, const Labels& truth);

/// Unweighted mean of concept_macro_f1 over the k columns.
double macro_f1_per_concept(const IntMatrix& predicted, const IntMatrix& truth);

/// Per-column exact-match accuracy.
std::vector<double> concept_accuracy(const IntMatrix& predicted, const IntMatrix& truth);

/// Per column, the frequency of the most common true value.
std::vector<double> majority_baseline(const IntMatrix& truth);

/// Number of mismatched relevant concepts in each row.
std::vector<std::size_t> mismatch_counts(const IntMatrix& truth, const IntMatrix& predicted,
                                         const std::vector<bool>& relevant_mask);

MpoCurve mpo_curve(const IntMatrix& truth, const IntMatrix& predicted, const std::vector<bool>& relevant_mask);

}  // namespace cme::metrics
