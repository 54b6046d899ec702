#include "cme/metrics.hpp"

#include <algorithm>
#include <map>
#include <set>

#include <fmt/format.h>

namespace cme::metrics {

namespace {

void require_same_shape(const IntMatrix& a, const IntMatrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ValidationError(fmt::format("shape mismatch: [{} x {}] vs [{} x {}]", a.rows(), a.cols(), b.rows(), b.cols()));
  }
}

Labels column(const IntMatrix& m, Eigen::Index c) {
  Labels out(static_cast<std::size_t>(m.rows()));
  for (Eigen::Index r = 0; r < m.rows(); ++r) out[static_cast<std::size_t>(r)] = m(r, c);
  return out;
}

}  // namespace

double fidelity(const Labels& fhat_labels, const Labels& model_outputs) {
  if (fhat_labels.size() != model_outputs.size()) {
    throw ValidationError(fmt::format("length mismatch: {} vs {}", fhat_labels.size(), model_outputs.size()));
  }
  if (fhat_labels.empty()) return 1.0;
  std::size_t same = 0;
  for (std::size_t i = 0; i < fhat_labels.size(); ++i) same += fhat_labels[i] == model_outputs[i];
  return static_cast<double>(same) / static_cast<double>(fhat_labels.size());
}

double task_accuracy(const Labels& predicted, const Labels& truth) { return fidelity(predicted, truth); }

double concept_macro_f1(const Labels& predicted, const Labels& truth) {
  if (predicted.size() != truth.size()) {
    throw ValidationError(fmt::format("length mismatch: {} vs {}", predicted.size(), truth.size()));
  }
  if (truth.empty()) return 1.0;
  std::set<int32_t> values(truth.begin(), truth.end());
  values.insert(predicted.begin(), predicted.end());
  std::map<int32_t, std::size_t> tp, fp, fn;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (predicted[i] == truth[i]) {
      ++tp[truth[i]];
    } else {
      ++fp[predicted[i]];
      ++fn[truth[i]];
    }
  }
  double sum = 0.0;
  for (auto v : values) {
    const auto t = static_cast<double>(tp[v]);
    const double precision = t + fp[v] > 0 ? t / (t + fp[v]) : 0.0;
    const double recall = t + fn[v] > 0 ? t / (t + fn[v]) : 0.0;
    sum += precision + recall > 0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
  }
  return sum / static_cast<double>(values.size());
}

double macro_f1_per_concept(const IntMatrix& predicted, const IntMatrix& truth) {
  require_same_shape(predicted, truth);
  if (truth.cols() == 0) throw ValidationError("no concepts to score");
  double sum = 0.0;
  for (Eigen::Index c = 0; c < truth.cols(); ++c) sum += concept_macro_f1(column(predicted, c), column(truth, c));
  return sum / static_cast<double>(truth.cols());
}

std::vector<double> concept_accuracy(const IntMatrix& predicted, const IntMatrix& truth) {
  require_same_shape(predicted, truth);
  std::vector<double> out;
  for (Eigen::Index c = 0; c < truth.cols(); ++c) out.push_back(fidelity(column(predicted, c), column(truth, c)));
  return out;
}

std::vector<double> majority_baseline(const IntMatrix& truth) {
  std::vector<double> out;
  for (Eigen::Index c = 0; c < truth.cols(); ++c) {
    std::map<int32_t, std::size_t> counts;
    std::size_t best = 0;
    for (Eigen::Index r = 0; r < truth.rows(); ++r) best = std::max(best, ++counts[truth(r, c)]);
    out.push_back(truth.rows() > 0 ? static_cast<double>(best) / static_cast<double>(truth.rows()) : 0.0);
  }
  return out;
}

std::vector<std::size_t> mismatch_counts(const IntMatrix& truth, const IntMatrix& predicted,
                                         const std::vector<bool>& relevant_mask) {
  require_same_shape(truth, predicted);
  if (relevant_mask.size() != static_cast<std::size_t>(truth.cols())) {
    throw ValidationError(fmt::format("mask has {} entries for {} concepts", relevant_mask.size(), truth.cols()));
  }
  std::vector<std::size_t> counts(static_cast<std::size_t>(truth.rows()), 0);
  for (Eigen::Index r = 0; r < truth.rows(); ++r) {
    for (Eigen::Index c = 0; c < truth.cols(); ++c) {
      counts[static_cast<std::size_t>(r)] += relevant_mask[static_cast<std::size_t>(c)] && truth(r, c) != predicted(r, c);
    }
  }
  return counts;
}

MpoCurve mpo_curve(const IntMatrix& truth, const IntMatrix& predicted, const std::vector<bool>& relevant_mask) {
  const auto counts = mismatch_counts(truth, predicted, relevant_mask);
  const auto k = static_cast<std::size_t>(truth.cols());
  MpoCurve curve;
  curve.relevant_mask = relevant_mask;
  curve.sample_count = counts.size();
  // at_least[m] = #samples with count >= m, via a histogram suffix sum.
  std::vector<std::size_t> at_least(k + 2, 0);
  for (auto c : counts) ++at_least[c];
  for (std::size_t m = k; m-- > 0;) at_least[m] += at_least[m + 1];
  curve.values.resize(k + 1);
  for (std::size_t m = 0; m <= k; ++m) {
    curve.values[m] = counts.empty() ? (m == 0 ? 1.0 : 0.0)
                                     : static_cast<double>(at_least[m]) / static_cast<double>(counts.size());
  }
  return curve;
}

}  // namespace cme::metrics
