#pragma once

#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "cme/common.hpp"

namespace cme {

/// Ground-truth concept annotations: one integer code column per concept.
struct ConceptTable {
  std::vector<std::string> names;
  std::vector<int32_t> cardinalities;
  IntMatrix values;  // [samples x k]; entries in [0, cardinality) or kMissing

  std::size_t concept_count() const { return names.size(); }
  std::size_t index_of(std::string_view name) const;
  void validate(std::size_t expected_rows) const;
};

struct Layer {
  std::string id;
  RowMatrixF activations;  // [samples x width]
};

/// Hidden representations of one sample set plus the labels the analysed model emitted.
struct ActivationBundle {
  std::size_t sample_count = 0;
  std::vector<Layer> layers;
  std::optional<Labels> model_outputs;
  std::optional<Labels> dataset_labels;
  std::optional<std::vector<std::string>> input_ref;
  std::optional<ConceptTable> concepts;

  const Layer& layer(std::string_view id) const;
  const Layer* find_layer(std::string_view id) const;
  std::vector<std::string> layer_ids() const;
  const Labels& outputs() const;

  /// Throws ValidationError on any broken invariant.
  void validate() const;

  /// Row subset of every array, in the given order.
  ActivationBundle subset(const IndexList& rows) const;
};

/// Concept-labelled / concept-unlabelled partition of a sample set.
struct ConceptDataset {
  std::vector<std::string> names;
  std::vector<int32_t> cardinalities;
  IntMatrix values;  // unlabelled rows are kMissing throughout
  IndexList labelled_index;
  IndexList unlabelled_index;

  std::size_t sample_count() const { return static_cast<std::size_t>(values.rows()); }
  std::size_t concept_count() const { return names.size(); }
  void validate() const;
};

struct TotalCount {
  std::size_t n;
};

/// n_c labelled samples drawn from each task class.
struct PerClassCount {
  std::size_t n_per_class;
  Labels task_labels;
};

using LabelledSplitMode = std::variant<TotalCount, PerClassCount>;

ConceptDataset split_concept_labelled(const ConceptTable& concepts,
                                      const LabelledSplitMode& mode, uint64_t seed);

/// Dense real array of arbitrary rank, row-major.
struct DenseArray {
  std::vector<std::size_t> shape;
  std::vector<float> data;
};

/// [N x H x W x C] -> [N x C], averaging over the H x W positions.
RowMatrixF spatial_average(const DenseArray& activations);

struct TrainTestIndex {
  IndexList train;
  IndexList test;
};

/// Random partition of [0, n) with round(n * test_fraction) test rows; both lists sorted.
TrainTestIndex train_test_split(std::size_t n, double test_fraction, uint64_t seed);

/// A uniformly drawn sorted subset of [0, n) of size min(n, count).
IndexList sample_without_replacement(std::size_t n, std::size_t count, uint64_t seed);

}  // namespace cme
