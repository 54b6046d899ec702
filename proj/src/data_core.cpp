#include "cme/data_core.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <set>

#include <fmt/format.h>

namespace cme {

namespace {

IndexList shuffled_range(std::size_t n, uint64_t seed) {
  IndexList idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  return idx;
}

void check_labels(const Labels& labels, std::size_t rows, const char* what) {
  if (labels.size() != rows) {
    throw ValidationError(fmt::format("{} has {} entries, expected {}", what, labels.size(), rows));
  }
  for (auto v : labels) {
    if (v < 0) throw ValidationError(fmt::format("{} contains negative label {}", what, v));
  }
}

}  // namespace

std::size_t ConceptTable::index_of(std::string_view name) const {
  const auto it = std::find(names.begin(), names.end(), name);
  if (it == names.end()) throw ValidationError(fmt::format("unknown concept '{}'", name));
  return static_cast<std::size_t>(it - names.begin());
}

void ConceptTable::validate(std::size_t expected_rows) const {
  if (names.size() != cardinalities.size()) {
    throw ValidationError("concept names and cardinalities differ in length");
  }
  if (static_cast<std::size_t>(values.cols()) != names.size()) {
    throw ValidationError(fmt::format("concept matrix has {} columns, expected {}", values.cols(),
                                      names.size()));
  }
  if (static_cast<std::size_t>(values.rows()) != expected_rows) {
    throw ValidationError(fmt::format("concept matrix has {} rows, expected {}", values.rows(),
                                      expected_rows));
  }
  for (std::size_t c = 0; c < names.size(); ++c) {
    if (cardinalities[c] < 1) {
      throw ValidationError(fmt::format("concept '{}' has cardinality {}", names[c], cardinalities[c]));
    }
    const auto col = values.col(static_cast<Eigen::Index>(c));
    for (Eigen::Index r = 0; r < col.size(); ++r) {
      const int32_t v = col(r);
      if (v != kMissing && (v < 0 || v >= cardinalities[c])) {
        throw ValidationError(
            fmt::format("concept '{}' row {} has code {} outside [0, {})", names[c], r, v, cardinalities[c]));
      }
    }
  }
}

const Layer* ActivationBundle::find_layer(std::string_view id) const {
  for (const auto& l : layers) {
    if (l.id == id) return &l;
  }
  return nullptr;
}

const Layer& ActivationBundle::layer(std::string_view id) const {
  if (const auto* l = find_layer(id)) return *l;
  throw ValidationError(fmt::format("bundle has no layer '{}'", id));
}

std::vector<std::string> ActivationBundle::layer_ids() const {
  std::vector<std::string> ids;
  ids.reserve(layers.size());
  for (const auto& l : layers) ids.push_back(l.id);
  return ids;
}

const Labels& ActivationBundle::outputs() const {
  if (!model_outputs) throw ValidationError("bundle carries no model outputs");
  return *model_outputs;
}

void ActivationBundle::validate() const {
  if (layers.empty()) throw ValidationError("bundle must contain ≥1 layer");
  std::set<std::string> seen;
  for (const auto& l : layers) {
    if (!seen.insert(l.id).second) throw ValidationError(fmt::format("duplicate layer id '{}'", l.id));
    if (static_cast<std::size_t>(l.activations.rows()) != sample_count) {
      throw ValidationError(fmt::format("layer '{}' has {} rows, expected {}", l.id,
                                        l.activations.rows(), sample_count));
    }
    if (!l.activations.allFinite()) {
      throw ValidationError(fmt::format("layer '{}' contains non-finite values", l.id));
    }
  }
  if (model_outputs) check_labels(*model_outputs, sample_count, "model_outputs");
  if (dataset_labels) check_labels(*dataset_labels, sample_count, "dataset_labels");
  if (input_ref && input_ref->size() != sample_count) {
    throw ValidationError("input_ref length differs from sample_count");
  }
  if (concepts) concepts->validate(sample_count);
}

ActivationBundle ActivationBundle::subset(const IndexList& rows) const {
  ActivationBundle out;
  out.sample_count = rows.size();
  for (const auto& l : layers) out.layers.push_back({l.id, take_rows(l.activations, rows)});
  if (model_outputs) out.model_outputs = take(*model_outputs, rows);
  if (dataset_labels) out.dataset_labels = take(*dataset_labels, rows);
  if (input_ref) {
    std::vector<std::string> refs;
    refs.reserve(rows.size());
    for (auto r : rows) refs.push_back(input_ref->at(r));
    out.input_ref = std::move(refs);
  }
  if (concepts) {
    out.concepts = ConceptTable{concepts->names, concepts->cardinalities, take_rows(concepts->values, rows)};
  }
  return out;
}

void ConceptDataset::validate() const {
  if (names.size() != cardinalities.size() || static_cast<std::size_t>(values.cols()) != names.size()) {
    throw ValidationError("concept dataset shape is inconsistent");
  }
  const std::size_t n = sample_count();
  if (labelled_index.size() + unlabelled_index.size() != n) {
    throw ValidationError("labelled and unlabelled index sets do not cover the samples");
  }
  std::vector<char> mark(n, 0);
  for (auto r : labelled_index) {
    if (r >= n || mark[r]++) throw ValidationError("labelled index out of range or repeated");
    for (Eigen::Index c = 0; c < values.cols(); ++c) {
      if (values(static_cast<Eigen::Index>(r), c) == kMissing) {
        throw ValidationError(fmt::format("labelled row {} has a missing concept", r));
      }
    }
  }
  for (auto r : unlabelled_index) {
    if (r >= n || mark[r]++) throw ValidationError("labelled and unlabelled index sets overlap");
  }
}

ConceptDataset split_concept_labelled(const ConceptTable& concepts, const LabelledSplitMode& mode,
                                      uint64_t seed) {
  const std::size_t n = static_cast<std::size_t>(concepts.values.rows());
  IndexList labelled;
  if (const auto* total = std::get_if<TotalCount>(&mode)) {
    if (total->n > n) {
      throw ValidationError(fmt::format("requested {} labelled samples but only {} exist", total->n, n));
    }
    auto order = shuffled_range(n, seed);
    labelled.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(total->n));
  } else {
    const auto& per_class = std::get<PerClassCount>(mode);
    if (per_class.task_labels.size() != n) throw ValidationError("task labels length differs from concepts");
    std::map<int32_t, IndexList> by_class;
    for (std::size_t r = 0; r < n; ++r) by_class[per_class.task_labels[r]].push_back(r);
    for (auto& [cls, rows] : by_class) {
      if (per_class.n_per_class > rows.size()) {
        throw ValidationError(fmt::format("class {} has {} samples, fewer than the {} requested", cls,
                                          rows.size(), per_class.n_per_class));
      }
      std::mt19937_64 rng(derive_seed(seed, fmt::format("class{}", cls)));
      std::shuffle(rows.begin(), rows.end(), rng);
      labelled.insert(labelled.end(), rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(per_class.n_per_class));
    }
  }
  std::sort(labelled.begin(), labelled.end());

  ConceptDataset out;
  out.names = concepts.names;
  out.cardinalities = concepts.cardinalities;
  out.values = IntMatrix::Constant(concepts.values.rows(), concepts.values.cols(), kMissing);
  out.labelled_index = labelled;
  std::vector<char> is_labelled(n, 0);
  for (auto r : labelled) {
    is_labelled[r] = 1;
    out.values.row(static_cast<Eigen::Index>(r)) = concepts.values.row(static_cast<Eigen::Index>(r));
  }
  for (std::size_t r = 0; r < n; ++r) {
    if (!is_labelled[r]) out.unlabelled_index.push_back(r);
  }
  out.validate();
  return out;
}

RowMatrixF spatial_average(const DenseArray& activations) {
  if (activations.shape.size() != 4) {
    throw ValidationError(fmt::format("spatial_average expects rank 4, got rank {}", activations.shape.size()));
  }
  const auto [n, h, w, c] = std::array{activations.shape[0], activations.shape[1], activations.shape[2],
                                       activations.shape[3]};
  if (h < 1 || w < 1) throw ValidationError("spatial extent must be at least 1x1");
  if (activations.data.size() != n * h * w * c) throw ValidationError("array data does not match shape");
  RowMatrixF out = RowMatrixF::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(c));
  const std::size_t positions = h * w;
  for (std::size_t s = 0; s < n; ++s) {
    Eigen::VectorXd acc = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(c));
    const float* base = activations.data.data() + s * positions * c;
    for (std::size_t p = 0; p < positions; ++p) {
      for (std::size_t ch = 0; ch < c; ++ch) acc(static_cast<Eigen::Index>(ch)) += base[p * c + ch];
    }
    out.row(static_cast<Eigen::Index>(s)) = (acc / static_cast<double>(positions)).cast<float>().transpose();
  }
  return out;
}

TrainTestIndex train_test_split(std::size_t n, double test_fraction, uint64_t seed) {
  if (test_fraction < 0.0 || test_fraction >= 1.0) throw ValidationError("test fraction must lie in [0, 1)");
  const auto order = shuffled_range(n, seed);
  const auto n_test = static_cast<std::size_t>(std::llround(static_cast<double>(n) * test_fraction));
  TrainTestIndex out;
  out.test.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_test));
  out.train.assign(order.begin() + static_cast<std::ptrdiff_t>(n_test), order.end());
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.test.begin(), out.test.end());
  return out;
}

IndexList sample_without_replacement(std::size_t n, std::size_t count, uint64_t seed) {
  auto order = shuffled_range(n, seed);
  order.resize(std::min(n, count));
  std::sort(order.begin(), order.end());
  return order;
}

}  // namespace cme
