#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "cme/data_core.hpp"
#include "cme/mlp.hpp"

namespace cme::ref {

struct MlpHyper {
  std::vector<int> hidden{64, 32};
  SgdParams sgd;
  double test_fraction = 0.2;
  uint64_t seed = 0;
};

/// A trained reference classifier together with the split it was trained on.
struct MlpModel {
  Mlp net;
  int num_classes = 0;
  uint64_t seed = 0;
  double train_accuracy = 0.0;
  double test_accuracy = 0.0;
  std::vector<double> epoch_loss;
  IndexList train_index;
  IndexList test_index;
};

/// Trains a softmax classifier on images [n x pixels]. Weights are kept at f32 precision.
MlpModel train_mlp(const RowMatrixF& images, const Labels& labels, const MlpHyper& hyper);

Labels predict_labels(const Mlp& net, const RowMatrixF& inputs);

/// "hidden_1" ... "hidden_{L-1}", then "logits".
std::vector<std::string> recordable_layers(const Mlp& net);

/// Captures the requested layers (all when empty) for every input row; model_outputs
/// is the argmax of the logits.
ActivationBundle record_activations(const Mlp& net, const RowMatrixF& inputs,
                                    const std::vector<std::string>& layer_ids = {});

void save_mlp(const MlpModel& model, const std::filesystem::path& dir);
MlpModel load_mlp(const std::filesystem::path& dir);

/// Two-stage concept bottleneck: images -> one softmax head per concept, then
/// concept codes -> task label. The label network sees nothing but the k codes.
struct CbmModel {
  Mlp concept_net;
  Mlp label_net;
  std::vector<int32_t> cardinalities;

  std::size_t bottleneck_width() const { return cardinalities.size(); }
  IntMatrix predict_concepts(const RowMatrixF& images) const;
  Labels predict_from_concepts(const IntMatrix& concepts) const;
  Labels predict(const RowMatrixF& images) const;
};

struct CbmHyper {
  std::vector<int> concept_hidden{64, 32};
  std::vector<int> label_hidden{32};
  SgdParams concept_sgd;
  SgdParams label_sgd;
  uint64_t seed = 0;
};

struct CbmResult {
  CbmModel model;
  std::vector<double> concept_train_accuracy;
  double task_train_accuracy = 0.0;
};

/// Concept codes scaled into [0, 1] per concept; [k x n].
MatrixD encode_concept_codes(const IntMatrix& concepts, const std::vector<int32_t>& cardinalities);

CbmResult train_cbm_sequential(const RowMatrixF& images, const ConceptTable& concepts,
                               const Labels& labels, const CbmHyper& hyper);

}  // namespace cme::ref
