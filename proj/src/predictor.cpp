#include "cme/predictor.hpp"

#include <fmt/format.h>

namespace cme::learn {

namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

}  // namespace

Labels OneVsRestModel::predict(const MatrixD& features) const {
  if (values.empty()) throw ValidationError("one-vs-rest model has no values");
  MatrixD positive(features.rows(), static_cast<Eigen::Index>(values.size()));
  for (std::size_t v = 0; v < values.size(); ++v) {
    // Column 1 is the "is this value" class.
    positive.col(static_cast<Eigen::Index>(v)) = regressors[v].probabilities(features).col(1);
  }
  Labels out(static_cast<std::size_t>(features.rows()));
  for (Eigen::Index r = 0; r < positive.rows(); ++r) out[static_cast<std::size_t>(r)] = values[argmax_lowest(positive.row(r))];
  return out;
}

std::string_view predictor_kind_name(PredictorKind kind) {
  switch (kind) {
    case PredictorKind::kConstant: return "constant";
    case PredictorKind::kLabelSpreading: return "label_spreading";
    case PredictorKind::kLogistic: return "logistic";
    case PredictorKind::kTree: return "tree";
    case PredictorKind::kOneVsRest: return "one_vs_rest";
  }
  return "unknown";
}

ConceptPredictor::ConceptPredictor(Model model, int feature_dim) : model_(std::move(model)), feature_dim_(feature_dim) {
  if (feature_dim_ < 0) throw ValidationError("feature_dim must be non-negative");
}

PredictorKind ConceptPredictor::kind() const {
  return std::visit(Overloaded{[](const ConstantModel&) { return PredictorKind::kConstant; },
                               [](const SpreadingModel&) { return PredictorKind::kLabelSpreading; },
                               [](const LogisticModel&) { return PredictorKind::kLogistic; },
                               [](const TreeModel&) { return PredictorKind::kTree; },
                               [](const OneVsRestModel&) { return PredictorKind::kOneVsRest; }},
                    model_);
}

std::vector<int32_t> ConceptPredictor::classes() const {
  return std::visit(Overloaded{[](const ConstantModel& m) { return std::vector<int32_t>{m.value}; },
                               [](const OneVsRestModel& m) { return m.values; },
                               [](const auto& m) { return m.classes; }},
                    model_);
}

Labels ConceptPredictor::predict(const MatrixD& features) const {
  if (features.cols() != feature_dim_) {
    throw ValidationError(fmt::format("predictor expects {} features, got {}", feature_dim_, features.cols()));
  }
  return std::visit(Overloaded{[&](const ConstantModel& m) { return Labels(static_cast<std::size_t>(features.rows()), m.value); },
                               [&](const auto& m) { return m.predict(features); }},
                    model_);
}

double error_rate(const Labels& predicted, const Labels& truth) {
  if (predicted.size() != truth.size()) {
    throw ValidationError(fmt::format("error_rate length mismatch: {} vs {}", predicted.size(), truth.size()));
  }
  if (truth.empty()) return 0.0;
  std::size_t wrong = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) wrong += predicted[i] != truth[i];
  return static_cast<double>(wrong) / static_cast<double>(truth.size());
}

}  // namespace cme::learn
