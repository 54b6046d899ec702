#include "cme/extraction.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

namespace cme::extract {

namespace {

using learn::ConceptPredictor;

struct ConceptFolds {
  IndexList rows;         // labelled rows carrying this concept, sorted
  std::vector<int> fold;  // fold id per row; -1 everywhere when nothing is held out
};

// Stratified by concept value: each value's rows are shuffled and dealt round-robin,
// the dealing offset carrying over between values so small groups spread evenly.
ConceptFolds assign_folds(const ConceptDataset& concepts, std::size_t col, int n_folds, uint64_t seed) {
  std::map<int32_t, IndexList> by_value;
  for (auto row : concepts.labelled_index) {
    const int32_t v = concepts.values(static_cast<Eigen::Index>(row), static_cast<Eigen::Index>(col));
    if (v != kMissing) by_value[v].push_back(row);
  }
  std::mt19937_64 rng(derive_seed(seed, fmt::format("validation/{}", concepts.names[col])));
  std::map<std::size_t, int> fold_of;
  int next = 0;
  for (auto& [value, rows] : by_value) {
    std::shuffle(rows.begin(), rows.end(), rng);
    for (auto r : rows) {
      fold_of[r] = n_folds > 0 ? next : -1;
      if (n_folds > 0) next = (next + 1) % n_folds;
    }
  }
  ConceptFolds out;
  for (const auto& [row, f] : fold_of) {
    out.rows.push_back(row);
    out.fold.push_back(f);
  }
  return out;
}

Labels concept_column(const ConceptDataset& concepts, std::size_t col, const IndexList& rows) {
  Labels out(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out[i] = concepts.values(static_cast<Eigen::Index>(rows[i]), static_cast<Eigen::Index>(col));
  }
  return out;
}

MatrixD gather(const MatrixD& x, const IndexList& rows) {
  MatrixD out(static_cast<Eigen::Index>(rows.size()), x.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = x.row(static_cast<Eigen::Index>(rows[i]));
  return out;
}

std::size_t distinct_count(Labels values) {
  std::sort(values.begin(), values.end());
  return static_cast<std::size_t>(std::unique(values.begin(), values.end()) - values.begin());
}

ConceptPredictor fit_cell(LearnerKind kind, const LearnerSpec& spec, const MatrixD& x,
                          const std::shared_ptr<const learn::SpreadingGraph>& graph, const IndexList& train_rows,
                          const Labels& train_values) {
  const int dim = static_cast<int>(x.cols());
  if (distinct_count(train_values) == 1) return {learn::ConstantModel{train_values.front()}, dim};
  switch (kind) {
    case LearnerKind::kLabelSpreading: {
      Labels seeds(static_cast<std::size_t>(x.rows()), kMissing);
      for (std::size_t i = 0; i < train_rows.size(); ++i) seeds[train_rows[i]] = train_values[i];
      return {learn::fit_label_spreading(*graph, seeds, spec.spreading).model, dim};
    }
    case LearnerKind::kLogistic:
      return {learn::fit_logistic(gather(x, train_rows), train_values, spec.logistic).model, dim};
    case LearnerKind::kTree:
      return {learn::fit_tree(gather(x, train_rows), train_values, spec.tree), dim};
    case LearnerKind::kAuto:
      break;
  }
  throw ValidationError("unresolved learner kind");
}

}  // namespace

int validation_folds(double val_fraction) {
  if (val_fraction <= 0.0) return 0;
  return std::max(2, static_cast<int>(std::lround(1.0 / val_fraction)));
}

LearnerKind resolve_learner(const LearnerSpec& spec, int32_t cardinality) {
  if (spec.kind != LearnerKind::kAuto) return spec.kind;
  return cardinality >= 3 ? LearnerKind::kLabelSpreading : LearnerKind::kLogistic;
}

PredictorGrid train_predictor_grid(const ActivationBundle& bundle, const ConceptDataset& concepts,
                                   const LearnerSpec& learner, const GridOptions& options) {
  bundle.validate();
  concepts.validate();
  if (concepts.sample_count() != bundle.sample_count) {
    throw ValidationError(fmt::format("concept dataset has {} rows but the bundle has {} samples",
                                      concepts.sample_count(), bundle.sample_count));
  }
  if (concepts.concept_count() == 0) throw ValidationError("concept dataset has no concepts");
  if (concepts.labelled_index.empty()) throw ValidationError("concept dataset has no labelled rows");
  if (!(options.val_fraction >= 0.0 && options.val_fraction < 1.0)) {
    throw ValidationError(fmt::format("val_fraction must lie in [0, 1), got {}", options.val_fraction));
  }
  learner.spreading.validate();

  PredictorGrid grid;
  grid.layer_ids = options.layers.empty() ? bundle.layer_ids() : options.layers;
  for (const auto& id : grid.layer_ids) bundle.layer(id);
  grid.concept_names = concepts.names;
  grid.cardinalities = concepts.cardinalities;

  const std::size_t k = concepts.concept_count();
  const std::size_t n_layers = grid.layer_ids.size();
  const int n_folds = validation_folds(options.val_fraction);
  std::vector<LearnerKind> kinds(k);
  bool any_spreading = false;
  for (std::size_t c = 0; c < k; ++c) {
    ConceptFolds folds = assign_folds(concepts, c, n_folds, options.seed);
    if (folds.rows.empty()) throw ValidationError(fmt::format("concept '{}' has no labelled rows", concepts.names[c]));
    grid.labelled_rows.push_back(std::move(folds.rows));
    grid.folds.push_back(std::move(folds.fold));
    kinds[c] = resolve_learner(learner, concepts.cardinalities[c]);
    any_spreading = any_spreading || kinds[c] == LearnerKind::kLabelSpreading;
  }

  std::vector<std::shared_ptr<const MatrixD>> features(n_layers);
  std::vector<std::shared_ptr<const learn::SpreadingGraph>> graphs(n_layers);
  parallel_for(n_layers, [&](std::size_t l) {
    features[l] = std::make_shared<const MatrixD>(to_double(bundle.layer(grid.layer_ids[l]).activations));
    if (any_spreading) {
      graphs[l] = std::make_shared<const learn::SpreadingGraph>(learn::build_spreading_graph(*features[l], learner.spreading));
    }
  });

  std::vector<std::optional<ConceptPredictor>> cells(n_layers * k);
  std::vector<double> losses(n_layers * k, 0.0);
  parallel_for(n_layers * k, [&](std::size_t cell) {
    const std::size_t l = cell / k, c = cell % k;
    const MatrixD& x = *features[l];
    const IndexList& rows = grid.labelled_rows[c];
    const Labels values = concept_column(concepts, c, rows);
    ConceptPredictor full = fit_cell(kinds[c], learner, x, graphs[l], rows, values);
    if (n_folds == 0) {
      losses[cell] = learn::error_rate(full.predict(gather(x, rows)), values);
    } else {
      // Pooled held-out error over the folds.
      std::size_t wrong = 0;
      for (int f = 0; f < n_folds; ++f) {
        IndexList fit_rows, held_rows;
        Labels fit_values, held_values;
        for (std::size_t i = 0; i < rows.size(); ++i) {
          if (grid.folds[c][i] == f) {
            held_rows.push_back(rows[i]);
            held_values.push_back(values[i]);
          } else {
            fit_rows.push_back(rows[i]);
            fit_values.push_back(values[i]);
          }
        }
        if (held_rows.empty() || fit_rows.empty()) {
          wrong += held_rows.size();
          continue;
        }
        const ConceptPredictor part = fit_cell(kinds[c], learner, x, graphs[l], fit_rows, fit_values);
        const Labels pred = part.predict(gather(x, held_rows));
        for (std::size_t i = 0; i < pred.size(); ++i) wrong += pred[i] != held_values[i];
      }
      losses[cell] = static_cast<double>(wrong) / static_cast<double>(rows.size());
    }
    cells[cell].emplace(std::move(full));
  });

  grid.entries.resize(n_layers);
  grid.val_loss.assign(n_layers, std::vector<double>(k, 0.0));
  for (std::size_t l = 0; l < n_layers; ++l) {
    for (std::size_t c = 0; c < k; ++c) {
      grid.entries[l].push_back(std::move(*cells[l * k + c]));
      grid.val_loss[l][c] = losses[l * k + c];
    }
  }
  return grid;
}

std::vector<std::size_t> select_layers(const std::vector<std::vector<double>>& val_loss, LayerTieBreak tie_break) {
  if (val_loss.empty()) throw ValidationError("loss table has no layers");
  const std::size_t k = val_loss.front().size();
  for (const auto& row : val_loss) {
    if (row.size() != k) throw ValidationError("loss table rows differ in length");
  }
  const bool latest = tie_break == LayerTieBreak::kLatest;
  std::vector<std::size_t> chosen(k, 0);
  for (std::size_t c = 0; c < k; ++c) {
    for (std::size_t l = 1; l < val_loss.size(); ++l) {
      if (val_loss[l][c] < val_loss[chosen[c]][c] || (latest && val_loss[l][c] == val_loss[chosen[c]][c])) chosen[c] = l;
    }
  }
  return chosen;
}

std::vector<std::size_t> select_layers(const PredictorGrid& grid, LayerTieBreak tie_break) {
  return select_layers(grid.val_loss, tie_break);
}

PHat compose_phat(const PredictorGrid& grid, const std::vector<std::size_t>& selected_layers) {
  if (selected_layers.size() != grid.concept_count()) {
    throw ValidationError(fmt::format("expected {} layer choices, got {}", grid.concept_count(), selected_layers.size()));
  }
  PHat p_hat;
  p_hat.concept_names = grid.concept_names;
  p_hat.cardinalities = grid.cardinalities;
  for (std::size_t c = 0; c < selected_layers.size(); ++c) {
    const std::size_t l = selected_layers[c];
    if (l >= grid.layer_count()) throw ValidationError(fmt::format("layer choice {} out of range", l));
    p_hat.entries.push_back({grid.layer_ids[l], grid.entries[l][c]});
  }
  return p_hat;
}

PHat compose_phat(const PredictorGrid& grid) { return compose_phat(grid, select_layers(grid)); }

IntMatrix predict_concepts(const PHat& p_hat, const ActivationBundle& bundle) {
  const auto n = static_cast<Eigen::Index>(bundle.sample_count);
  IntMatrix out(n, static_cast<Eigen::Index>(p_hat.concept_count()));
  std::map<std::string, MatrixD> cache;
  for (const auto& entry : p_hat.entries) {
    if (!cache.count(entry.layer_id)) cache.emplace(entry.layer_id, to_double(bundle.layer(entry.layer_id).activations));
  }
  parallel_for(p_hat.concept_count(), [&](std::size_t c) {
    const auto& entry = p_hat.entries[c];
    const Labels codes = entry.predictor.predict(cache.at(entry.layer_id));
    for (Eigen::Index r = 0; r < n; ++r) out(r, static_cast<Eigen::Index>(c)) = codes[static_cast<std::size_t>(r)];
  });
  return out;
}

std::vector<std::pair<std::size_t, std::size_t>> QHat::concept_columns() const {
  std::vector<std::pair<std::size_t, std::size_t>> ranges;
  std::size_t at = 0;
  for (auto card : cardinalities) {
    ranges.emplace_back(at, at + static_cast<std::size_t>(card));
    at += static_cast<std::size_t>(card);
  }
  return ranges;
}

MatrixD QHat::encode(const IntMatrix& concepts) const {
  if (static_cast<std::size_t>(concepts.cols()) != cardinalities.size()) {
    throw ValidationError(fmt::format("surrogate expects {} concepts, got {}", cardinalities.size(), concepts.cols()));
  }
  if (learner == QHatLearner::kTree) return concepts.cast<double>();
  const auto ranges = concept_columns();
  MatrixD out = MatrixD::Zero(concepts.rows(), static_cast<Eigen::Index>(ranges.empty() ? 0 : ranges.back().second));
  for (Eigen::Index r = 0; r < concepts.rows(); ++r) {
    for (std::size_t c = 0; c < ranges.size(); ++c) {
      const int32_t code = concepts(r, static_cast<Eigen::Index>(c));
      // Out-of-range codes encode as all-zero.
      if (code >= 0 && code < cardinalities[c]) out(r, static_cast<Eigen::Index>(ranges[c].first) + code) = 1.0;
    }
  }
  return out;
}

Labels QHat::predict(const IntMatrix& concepts) const {
  const MatrixD x = encode(concepts);
  return std::visit([&](const auto& m) { return m.predict(x); }, model);
}

const learn::TreeModel& QHat::tree() const {
  if (const auto* t = std::get_if<learn::TreeModel>(&model)) return *t;
  throw ValidationError("surrogate is not a tree");
}

const learn::LogisticModel& QHat::logistic() const {
  if (const auto* m = std::get_if<learn::LogisticModel>(&model)) return *m;
  throw ValidationError("surrogate is not a logistic model");
}

QHat extract_qhat(const IntMatrix& concept_preds, const Labels& targets, const std::vector<int32_t>& cardinalities,
                  const QHatSpec& spec) {
  if (static_cast<std::size_t>(concept_preds.rows()) != targets.size()) {
    throw ValidationError(fmt::format("{} col rows but {} targets", concept_preds.rows(), targets.size()));
  }
  if (targets.empty()) throw ValidationError("surrogate needs at least one sample");
  QHat q;
  q.learner = spec.learner;
  q.target = spec.target;
  q.cardinalities = cardinalities;
  const MatrixD x = q.encode(concept_preds);
  if (spec.learner == QHatLearner::kTree) {
    q.model = learn::fit_tree(x, targets, spec.tree);
  } else if (distinct_count(targets) == 1) {
    learn::LogisticModel constant;
    constant.weights = MatrixD::Zero(1, x.cols());
    constant.bias = VectorD::Zero(1);
    constant.classes = {targets.front()};
    q.model = std::move(constant);
  } else {
    q.model = learn::fit_logistic(x, targets, spec.logistic).model;
  }
  q.train_accuracy = 1.0 - learn::error_rate(q.predict(concept_preds), targets);
  return q;
}

Labels predict_fhat(const ExtractedModel& model, const ActivationBundle& bundle) {
  return model.q_hat.predict(predict_concepts(model.p_hat, bundle));
}

std::string default_baseline_layer(const ActivationBundle& bundle) {
  if (bundle.layers.empty()) throw ValidationError("bundle must contain ≥1 layer");
  return bundle.layers.size() >= 2 ? bundle.layers[bundle.layers.size() - 2].id : bundle.layers.front().id;
}

namespace {

PHat net2vec_on_features(const std::string& layer_id, const MatrixD& x, const ConceptDataset& concepts,
                         const learn::LogisticParams& params) {
  concepts.validate();
  if (static_cast<std::size_t>(x.rows()) != concepts.sample_count()) {
    throw ValidationError(fmt::format("layer '{}' has {} rows but the col dataset has {}", layer_id, x.rows(),
                                      concepts.sample_count()));
  }
  const int dim = static_cast<int>(x.cols());
  PHat p_hat;
  p_hat.concept_names = concepts.names;
  p_hat.cardinalities = concepts.cardinalities;
  std::vector<std::optional<ConceptPredictor>> fitted(concepts.concept_count());
  parallel_for(concepts.concept_count(), [&](std::size_t c) {
    IndexList rows;
    for (auto r : concepts.labelled_index) {
      if (concepts.values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) != kMissing) rows.push_back(r);
    }
    if (rows.empty()) throw ValidationError(fmt::format("concept '{}' has no labelled rows", concepts.names[c]));
    const Labels values = concept_column(concepts, c, rows);
    Labels distinct = values;
    std::sort(distinct.begin(), distinct.end());
    distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
    if (distinct.size() < static_cast<std::size_t>(concepts.cardinalities[c])) {
      spdlog::warn("concept '{}': {} of {} values absent from the labelled rows and cannot be predicted", concepts.names[c],
                   static_cast<std::size_t>(concepts.cardinalities[c]) - distinct.size(), concepts.cardinalities[c]);
    }
    const MatrixD xs = gather(x, rows);
    if (distinct.size() == 1) {
      fitted[c].emplace(learn::ConstantModel{distinct.front()}, dim);
    } else if (concepts.cardinalities[c] <= 2) {
      fitted[c].emplace(learn::fit_logistic(xs, values, params).model, dim);
    } else {
      learn::OneVsRestModel ovr;
      for (auto v : distinct) {
        Labels binary(values.size());
        for (std::size_t i = 0; i < values.size(); ++i) binary[i] = values[i] == v ? 1 : 0;
        ovr.values.push_back(v);
        ovr.regressors.push_back(learn::fit_logistic(xs, binary, params).model);
      }
      fitted[c].emplace(std::move(ovr), dim);
    }
  });
  for (auto& f : fitted) p_hat.entries.push_back({layer_id, std::move(*f)});
  return p_hat;
}

}  // namespace

PHat extract_net2vec_baseline(const ActivationBundle& bundle, const ConceptDataset& concepts,
                              const std::string& layer_id, const learn::LogisticParams& params) {
  const std::string id = layer_id.empty() ? default_baseline_layer(bundle) : layer_id;
  return net2vec_on_features(id, to_double(bundle.layer(id).activations), concepts, params);
}

PHat extract_net2vec_baseline(const std::string& layer_id, const DenseArray& activations,
                              const ConceptDataset& concepts, const learn::LogisticParams& params) {
  RowMatrixF flat;
  if (activations.shape.size() == 4) {
    flat = spatial_average(activations);
  } else if (activations.shape.size() == 2) {
    if (activations.data.size() != activations.shape[0] * activations.shape[1]) {
      throw ValidationError("activation data does not match its shape");
    }
    flat = Eigen::Map<const RowMatrixF>(activations.data.data(), static_cast<Eigen::Index>(activations.shape[0]),
                                        static_cast<Eigen::Index>(activations.shape[1]));
  } else {
    throw ValidationError(fmt::format("activations must be rank 2 or 4, got rank {}", activations.shape.size()));
  }
  return net2vec_on_features(layer_id, to_double(flat), concepts, params);
}

}  // namespace cme::extract
