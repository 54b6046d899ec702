#pragma once

#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "cme/data_core.hpp"
#include "cme/predictor.hpp"

namespace cme::extract {

enum class LearnerKind { kAuto, kLabelSpreading, kLogistic, kTree };

/// Base learner used for every grid cell. kAuto picks label spreading for concepts
/// with three or more values and logistic regression otherwise.
struct LearnerSpec {
  LearnerKind kind = LearnerKind::kAuto;
  learn::SpreadingParams spreading;
  learn::LogisticParams logistic;
  learn::TreeParams tree;
};

LearnerKind resolve_learner(const LearnerSpec& spec, int32_t cardinality);

/// Number of validation folds: round(1 / val_fraction), at least 2; 0 when val_fraction is 0.
int validation_folds(double val_fraction);

struct GridOptions {
  double val_fraction = 0.2;  // each fold holds out this share of the labelled rows
  uint64_t seed = 0;
  std::vector<std::string> layers;  // empty: every bundle layer, in bundle order
};

/// The (layer x concept) family of fitted concept predictors. Each predictor is fitted
/// on every labelled row of its concept; its loss is the held-out error pooled over
/// stratified folds (the training error when val_fraction is 0).
struct PredictorGrid {
  std::vector<std::string> layer_ids;
  std::vector<std::string> concept_names;
  std::vector<int32_t> cardinalities;
  std::vector<std::vector<learn::ConceptPredictor>> entries;  // [layer][concept]
  std::vector<std::vector<double>> val_loss;                  // [layer][concept], in [0, 1]
  std::vector<IndexList> labelled_rows;                       // per concept
  std::vector<std::vector<int>> folds;                        // per concept, fold id of each labelled row

  std::size_t layer_count() const { return layer_ids.size(); }
  std::size_t concept_count() const { return concept_names.size(); }
};

PredictorGrid train_predictor_grid(const ActivationBundle& bundle, const ConceptDataset& concepts,
                                   const LearnerSpec& learner, const GridOptions& options = {});

enum class LayerTieBreak { kEarliest, kLatest };

/// Per concept, the layer index with the smallest loss; ties keep the earliest layer
/// unless kLatest is given.
std::vector<std::size_t> select_layers(const std::vector<std::vector<double>>& val_loss,
                                       LayerTieBreak tie_break = LayerTieBreak::kEarliest);
std::vector<std::size_t> select_layers(const PredictorGrid& grid, LayerTieBreak tie_break = LayerTieBreak::kEarliest);

struct PHatEntry {
  std::string layer_id;
  learn::ConceptPredictor predictor;
};

/// Input-to-concept map: concept i is read from its own layer by its own predictor.
struct PHat {
  std::vector<std::string> concept_names;
  std::vector<int32_t> cardinalities;
  std::vector<PHatEntry> entries;

  std::size_t concept_count() const { return entries.size(); }
};

PHat compose_phat(const PredictorGrid& grid, const std::vector<std::size_t>& selected_layers);
PHat compose_phat(const PredictorGrid& grid);

/// [n x k] concept codes; column i comes only from entries[i] applied to its layer.
IntMatrix predict_concepts(const PHat& p_hat, const ActivationBundle& bundle);

enum class QHatLearner { kTree, kLogistic };
enum class QHatTarget { kModelOutputs, kDatasetLabels };

struct QHatSpec {
  QHatLearner learner = QHatLearner::kTree;
  QHatTarget target = QHatTarget::kModelOutputs;
  learn::TreeParams tree;
  learn::LogisticParams logistic;
};

/// Concept-to-output surrogate. Trees read raw concept codes; logistic models read a
/// one-hot encoding with cardinality columns per concept.
struct QHat {
  QHatLearner learner = QHatLearner::kTree;
  QHatTarget target = QHatTarget::kModelOutputs;
  std::vector<int32_t> cardinalities;
  std::variant<learn::TreeModel, learn::LogisticModel> model;
  double train_accuracy = 0.0;

  std::size_t feature_dim() const { return cardinalities.size(); }
  /// [begin, end) one-hot column range of each concept (logistic encoding).
  std::vector<std::pair<std::size_t, std::size_t>> concept_columns() const;
  MatrixD encode(const IntMatrix& concepts) const;
  Labels predict(const IntMatrix& concepts) const;

  const learn::TreeModel& tree() const;
  const learn::LogisticModel& logistic() const;
};

QHat extract_qhat(const IntMatrix& concept_preds, const Labels& targets, const std::vector<int32_t>& cardinalities,
                  const QHatSpec& spec = {});

struct ExtractedModel {
  PHat p_hat;
  QHat q_hat;
};

Labels predict_fhat(const ExtractedModel& model, const ActivationBundle& bundle);

/// Second-to-last layer of the bundle (the last hidden layer before the logits).
std::string default_baseline_layer(const ActivationBundle& bundle);

/// Single-layer binarised baseline: per concept, one-vs-rest logistic regressors over
/// the given layer, fitted on every concept-labelled row.
PHat extract_net2vec_baseline(const ActivationBundle& bundle, const ConceptDataset& concepts,
                              const std::string& layer_id, const learn::LogisticParams& params = {});

/// Same over a raw activation array; rank-4 [N x H x W x C] input is spatially averaged first.
PHat extract_net2vec_baseline(const std::string& layer_id, const DenseArray& activations,
                              const ConceptDataset& concepts, const learn::LogisticParams& params = {});

}  // namespace cme::extract
