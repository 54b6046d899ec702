#pragma once

#include <string_view>
#include <variant>
#include <vector>

#include "cme/label_spreading.hpp"
#include "cme/logistic.hpp"
#include "cme/tree.hpp"

namespace cme::learn {

/// Predicts one fixed code for every input.
struct ConstantModel {
  int32_t value = 0;
};

/// Binarised multi-valued concept: one binary regressor per value, and the value
/// whose regressor assigns the highest positive probability wins.
struct OneVsRestModel {
  std::vector<int32_t> values;
  std::vector<LogisticModel> regressors;  // 2-class models over {0: other, 1: this value}

  Labels predict(const MatrixD& features) const;
};

enum class PredictorKind { kConstant, kLabelSpreading, kLogistic, kTree, kOneVsRest };

std::string_view predictor_kind_name(PredictorKind kind);

/// A fitted g: features -> concept codes.
class ConceptPredictor {
 public:
  using Model = std::variant<ConstantModel, SpreadingModel, LogisticModel, TreeModel, OneVsRestModel>;

  ConceptPredictor(Model model, int feature_dim);

  PredictorKind kind() const;
  int feature_dim() const { return feature_dim_; }
  /// Codes this predictor can emit.
  std::vector<int32_t> classes() const;
  const Model& model() const { return model_; }

  Labels predict(const MatrixD& features) const;

 private:
  Model model_;
  int feature_dim_;
};

/// Fraction of positions where predicted and truth differ.
double error_rate(const Labels& predicted, const Labels& truth);

}  // namespace cme::learn
