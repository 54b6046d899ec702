#include <set>

#include <gtest/gtest.h>

#include "cme/extraction.hpp"
#include "cme/metrics.hpp"
#include "cme/model_io.hpp"
#include "test_util.hpp"

namespace cme::extract {
namespace {

struct Fixture {
  ActivationBundle bundle;
  ConceptDataset concepts;
};

Fixture make_fixture(std::size_t n, const std::vector<int32_t>& cards, std::size_t labelled, uint64_t seed) {
  Fixture f{testing::clustered_bundle(n, cards, seed), {}};
  f.concepts = split_concept_labelled(*f.bundle.concepts, TotalCount{labelled}, seed + 1);
  return f;
}

TEST(Grid, CardinalityAndSeparableConcepts) {
  auto f = make_fixture(300, {3, 2, 4}, 60, 1);
  f.bundle.layers.push_back({"layer_c", f.bundle.layers[0].activations * 0.5f});
  LearnerSpec spec;
  spec.spreading.alpha = 0.9;
  spec.spreading.max_iter = 200;
  spec.spreading.tol = 1e-6;
  const auto grid = train_predictor_grid(f.bundle, f.concepts, spec);
  ASSERT_EQ(grid.layer_count(), 3u);
  ASSERT_EQ(grid.concept_count(), 3u);
  std::size_t fitted = 0;
  for (const auto& row : grid.entries) fitted += row.size();
  EXPECT_EQ(fitted, 9u);
  EXPECT_EQ(grid.entries[0][0].kind(), learn::PredictorKind::kLabelSpreading);
  EXPECT_EQ(grid.entries[0][1].kind(), learn::PredictorKind::kLogistic);
  for (std::size_t c = 0; c < 3; ++c) {
    double best = 1.0;
    for (std::size_t l = 0; l < 3; ++l) best = std::min(best, grid.val_loss[l][c]);
    EXPECT_LE(best, 0.05) << grid.concept_names[c];
  }
}

TEST(Grid, ConstantConceptGivesZeroLoss) {
  auto f = make_fixture(120, {1, 3}, 40, 2);
  const auto grid = train_predictor_grid(f.bundle, f.concepts, LearnerSpec{});
  for (std::size_t l = 0; l < grid.layer_count(); ++l) {
    EXPECT_EQ(grid.entries[l][0].kind(), learn::PredictorKind::kConstant);
    EXPECT_EQ(grid.val_loss[l][0], 0.0);
  }
}

TEST(Grid, FoldsAreStratifiedAndDeterministic) {
  auto f = make_fixture(200, {4}, 100, 3);
  GridOptions opts;
  opts.seed = 5;
  const auto a = train_predictor_grid(f.bundle, f.concepts, LearnerSpec{}, opts);
  const auto b = train_predictor_grid(f.bundle, f.concepts, LearnerSpec{}, opts);
  EXPECT_EQ(a.val_loss, b.val_loss);
  EXPECT_EQ(a.folds, b.folds);
  EXPECT_EQ(validation_folds(0.2), 5);
  EXPECT_EQ(validation_folds(0.0), 0);
  const auto& rows = a.labelled_rows[0];
  const auto& folds = a.folds[0];
  ASSERT_EQ(rows.size(), folds.size());
  // Each value's rows are spread over folds as evenly as possible.
  for (int32_t v = 0; v < 4; ++v) {
    std::vector<int> per_fold(5, 0);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (f.concepts.values(static_cast<Eigen::Index>(rows[i]), 0) == v) ++per_fold[static_cast<std::size_t>(folds[i])];
    }
    EXPECT_LE(*std::max_element(per_fold.begin(), per_fold.end()) - *std::min_element(per_fold.begin(), per_fold.end()), 1);
  }
}

TEST(Grid, LayerSubsetAndMissingLayer) {
  auto f = make_fixture(80, {2}, 30, 4);
  GridOptions opts;
  opts.layers = {"layer_b"};
  const auto grid = train_predictor_grid(f.bundle, f.concepts, LearnerSpec{}, opts);
  EXPECT_EQ(grid.layer_ids, (std::vector<std::string>{"layer_b"}));
  opts.layers = {"nope"};
  EXPECT_THROW(train_predictor_grid(f.bundle, f.concepts, LearnerSpec{}, opts), ValidationError);
}

TEST(SelectLayers, Examples) {
  EXPECT_EQ(select_layers(std::vector<std::vector<double>>{{0.3, 0.1}}), (std::vector<std::size_t>{0, 0}));
  EXPECT_EQ(select_layers(std::vector<std::vector<double>>{{0.5}, {0.1}, {0.3}}), (std::vector<std::size_t>{1}));
  EXPECT_EQ(select_layers(std::vector<std::vector<double>>{{0.2}, {0.2}}), (std::vector<std::size_t>{0}));
  EXPECT_EQ(select_layers(std::vector<std::vector<double>>{{0.2}, {0.2}, {0.4}}, LayerTieBreak::kLatest),
            (std::vector<std::size_t>{1}));
  EXPECT_THROW(select_layers(std::vector<std::vector<double>>{}), ValidationError);
}

TEST(SelectLayers, ArgminAndDuplicateLayerInvariance) {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<std::vector<double>> loss(4, std::vector<double>(3));
    for (auto& row : loss) {
      for (auto& v : row) v = std::round(u(rng) * 5) / 5;
    }
    const auto chosen = select_layers(loss);
    for (std::size_t c = 0; c < 3; ++c) {
      for (std::size_t l = 0; l < 4; ++l) EXPECT_LE(loss[chosen[c]][c], loss[l][c]);
    }
    auto duplicated = loss;
    duplicated.push_back(loss[rng() % 4]);
    EXPECT_EQ(select_layers(duplicated), chosen);
  }
}

TEST(PredictConcepts, ConstantPredictorColumn) {
  ActivationBundle b;
  b.sample_count = 4;
  b.layers.push_back({"l", RowMatrixF::Zero(4, 2)});
  PHat p;
  p.concept_names = {"only"};
  p.cardinalities = {3};
  p.entries.push_back({"l", learn::ConceptPredictor(learn::ConstantModel{2}, 2)});
  const auto codes = predict_concepts(p, b);
  EXPECT_EQ(codes.cols(), 1);
  EXPECT_TRUE((codes.array() == 2).all());
  p.entries[0].layer_id = "missing";
  EXPECT_THROW(predict_concepts(p, b), ValidationError);
}

TEST(PredictConcepts, EqualsPerConceptApplication) {
  auto f = make_fixture(150, {3, 2, 4}, 50, 6);
  const auto grid = train_predictor_grid(f.bundle, f.concepts, LearnerSpec{});
  const std::vector<std::size_t> chosen{1, 0, 1};
  const auto p = compose_phat(grid, chosen);
  const auto codes = predict_concepts(p, f.bundle);
  for (std::size_t c = 0; c < 3; ++c) {
    const auto& layer = f.bundle.layers[chosen[c]];
    EXPECT_EQ(p.entries[c].layer_id, layer.id);
    const auto expected = grid.entries[chosen[c]][c].predict(to_double(layer.activations));
    for (Eigen::Index i = 0; i < codes.rows(); ++i) EXPECT_EQ(codes(i, static_cast<Eigen::Index>(c)), expected[static_cast<std::size_t>(i)]);
  }
  EXPECT_THROW(compose_phat(grid, {0, 0}), ValidationError);
}

TEST(QHat, TargetsEqualToConceptColumn) {
  IntMatrix c(30, 3);
  std::mt19937_64 rng(1);
  for (Eigen::Index i = 0; i < c.size(); ++i) c.data()[i] = static_cast<int32_t>(rng() % 3);
  Labels y(30);
  for (int i = 0; i < 30; ++i) y[static_cast<std::size_t>(i)] = c(i, 1);
  const auto tree_q = extract_qhat(c, y, {3, 3, 3});
  EXPECT_EQ(tree_q.train_accuracy, 1.0);
  EXPECT_EQ(tree_q.tree().features_used(), (std::set<int>{1}));

  QHatSpec spec;
  spec.learner = QHatLearner::kLogistic;
  const auto lr_q = extract_qhat(c, y, {3, 3, 3}, spec);
  EXPECT_EQ(lr_q.train_accuracy, 1.0);
  EXPECT_EQ(lr_q.encode(c).cols(), 9);
  EXPECT_EQ(lr_q.predict(c), y);
}

TEST(QHat, SingleClassTargets) {
  IntMatrix c = IntMatrix::Zero(5, 2);
  QHatSpec spec;
  spec.learner = QHatLearner::kLogistic;
  const auto q = extract_qhat(c, Labels(5, 1), {2, 2}, spec);
  EXPECT_EQ(q.predict(c), Labels(5, 1));
}

TEST(FHat, IsCompositionOfParts) {
  auto f = make_fixture(200, {3, 2}, 60, 7);
  const auto grid = train_predictor_grid(f.bundle, f.concepts, LearnerSpec{});
  ExtractedModel m;
  m.p_hat = compose_phat(grid);
  const auto codes = predict_concepts(m.p_hat, f.bundle);
  m.q_hat = extract_qhat(codes, f.bundle.outputs(), f.concepts.cardinalities);
  const auto fhat = predict_fhat(m, f.bundle);
  EXPECT_EQ(fhat, m.q_hat.predict(codes));
  EXPECT_EQ(predict_fhat(m, f.bundle), fhat);
  EXPECT_GE(metrics::fidelity(fhat, f.bundle.outputs()), 0.95);
}

TEST(Baseline, BinaryConceptMatchesPlainLogistic) {
  auto f = make_fixture(160, {2, 2}, 50, 8);
  const auto p = extract_net2vec_baseline(f.bundle, f.concepts, "layer_a");
  const MatrixD x = to_double(f.bundle.layer("layer_a").activations);
  for (std::size_t c = 0; c < 2; ++c) {
    MatrixD xs(static_cast<Eigen::Index>(f.concepts.labelled_index.size()), x.cols());
    Labels ys;
    for (std::size_t i = 0; i < f.concepts.labelled_index.size(); ++i) {
      const auto r = static_cast<Eigen::Index>(f.concepts.labelled_index[i]);
      xs.row(static_cast<Eigen::Index>(i)) = x.row(r);
      ys.push_back(f.concepts.values(r, static_cast<Eigen::Index>(c)));
    }
    const auto plain = learn::fit_logistic(xs, ys);
    EXPECT_EQ(p.entries[c].predictor.predict(x), plain.model.predict(x));
    EXPECT_EQ(p.entries[c].layer_id, "layer_a");
  }
}

TEST(Baseline, SeparableThreeValuedConcept) {
  auto f = make_fixture(240, {3}, 90, 9);
  const auto p = extract_net2vec_baseline(f.bundle, f.concepts, "layer_a");
  EXPECT_EQ(p.entries[0].predictor.kind(), learn::PredictorKind::kOneVsRest);
  const auto codes = predict_concepts(p, f.bundle);
  const auto acc = metrics::concept_accuracy(codes, f.bundle.concepts->values);
  EXPECT_EQ(acc[0], 1.0);
}

TEST(Baseline, RankFourActivationsAreAveraged) {
  auto f = make_fixture(60, {2}, 30, 10);
  const auto& a = f.bundle.layer("layer_a").activations;
  DenseArray arr{{60, 2, 1, static_cast<std::size_t>(a.cols())}, {}};
  for (Eigen::Index i = 0; i < 60; ++i) {
    for (int rep = 0; rep < 2; ++rep) {
      for (Eigen::Index j = 0; j < a.cols(); ++j) arr.data.push_back(a(i, j) + (rep ? 1.0f : -1.0f));
    }
  }
  const auto from_array = extract_net2vec_baseline("pooled", arr, f.concepts);
  const auto from_bundle = extract_net2vec_baseline(f.bundle, f.concepts, "layer_a");
  const MatrixD x = to_double(a);
  EXPECT_EQ(from_array.entries[0].predictor.predict(x), from_bundle.entries[0].predictor.predict(x));
  EXPECT_THROW(extract_net2vec_baseline("bad", DenseArray{{60}, std::vector<float>(60)}, f.concepts), ValidationError);
}

TEST(Baseline, DefaultLayerIsLastHidden) {
  ActivationBundle b;
  b.sample_count = 1;
  for (const char* id : {"hidden_1", "hidden_2", "logits"}) b.layers.push_back({id, RowMatrixF::Zero(1, 1)});
  EXPECT_EQ(default_baseline_layer(b), "hidden_2");
}

TEST(ModelIo, RoundTripPreservesPredictions) {
  auto f = make_fixture(220, {1, 3, 2, 4}, 80, 11);
  const auto grid = train_predictor_grid(f.bundle, f.concepts, LearnerSpec{});
  ExtractedModel m;
  m.p_hat = compose_phat(grid, {0, 1, 0, 1});
  const auto codes = predict_concepts(m.p_hat, f.bundle);
  m.q_hat = extract_qhat(codes, f.bundle.outputs(), f.concepts.cardinalities);
  testing::TempDir dir;
  save_extracted_model(m, dir.path());
  const auto loaded = load_extracted_model(dir.path());
  EXPECT_EQ(predict_concepts(loaded.p_hat, f.bundle), codes);
  EXPECT_EQ(predict_fhat(loaded, f.bundle), predict_fhat(m, f.bundle));
  EXPECT_EQ(loaded.q_hat.tree().nodes.size(), m.q_hat.tree().nodes.size());

  // Saving the loaded model reproduces every file byte for byte.
  testing::TempDir again;
  save_extracted_model(loaded, again.path());
  for (const auto& entry : std::filesystem::directory_iterator(dir.path())) {
    EXPECT_EQ(testing::read_bytes(entry.path()), testing::read_bytes(again.path() / entry.path().filename()));
  }

  QHatSpec spec;
  spec.learner = QHatLearner::kLogistic;
  m.q_hat = extract_qhat(codes, f.bundle.outputs(), f.concepts.cardinalities, spec);
  m.p_hat = extract_net2vec_baseline(f.bundle, f.concepts, "layer_b");
  testing::TempDir lr_dir;
  save_extracted_model(m, lr_dir.path());
  const auto lr_loaded = load_extracted_model(lr_dir.path());
  EXPECT_EQ(predict_fhat(lr_loaded, f.bundle), predict_fhat(m, f.bundle));
}

TEST(ModelIo, CorruptBlobDetected) {
  auto f = make_fixture(60, {3}, 30, 12);
  ExtractedModel m;
  m.p_hat = compose_phat(train_predictor_grid(f.bundle, f.concepts, LearnerSpec{}));
  m.q_hat = extract_qhat(predict_concepts(m.p_hat, f.bundle), f.bundle.outputs(), f.concepts.cardinalities);
  testing::TempDir dir;
  save_extracted_model(m, dir.path());
  std::filesystem::resize_file(dir / "blob_000.f32", 8);
  EXPECT_THROW(load_extracted_model(dir.path()), FormatError);
}

}  // namespace
}  // namespace cme::extract
