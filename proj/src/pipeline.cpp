#include "cme/pipeline.hpp"

#include <algorithm>
#include <fstream>
#include <iterator>
#include <set>
#include <type_traits>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "cme/bundle_io.hpp"
#include "cme/metrics.hpp"
#include "cme/model_io.hpp"
#include "cme/viz.hpp"

namespace cme::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

const std::vector<std::string>& stage_names() {
  static const std::vector<std::string> names{"generate", "train-ref", "extract", "evaluate", "intervene", "visualize"};
  return names;
}

uint64_t stage_seed(uint64_t root_seed, std::string_view stage) { return derive_seed(root_seed, stage); }

// ---------------------------------------------------------------------------
// Config

namespace {

class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ValidationError(fmt::format("config: '{}' must be an object", path_));
  }

  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    out = convert<T>(j_.at(key), name(key));
  }

  bool has(const char* key) const { return j_.contains(key); }

  Section child(const char* key) {
    seen_.insert(key);
    static const json empty = json::object();
    return Section(j_.contains(key) ? j_.at(key) : empty, name(key));
  }

  void finish() const {
    for (const auto& item : j_.items()) {
      if (!seen_.count(item.key())) throw ValidationError(fmt::format("config: unknown key '{}'", name(item.key())));
    }
  }

  std::string name(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

 private:
  template <class T>
  static T convert(const json& v, const std::string& where) {
    const auto wrong = [&](const char* expected) {
      return ValidationError(fmt::format("config: '{}' must be {}", where, expected));
    };
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw wrong("a boolean");
      return v.get<bool>();
    } else if constexpr (std::is_integral_v<T> && std::is_unsigned_v<T>) {
      if (!v.is_number_integer() || v.get<int64_t>() < 0) throw wrong("a non-negative integer");
      return v.get<T>();
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) throw wrong("an integer");
      return v.get<T>();
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw wrong("a number");
      return v.get<T>();
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw wrong("a string");
      return v.get<std::string>();
    } else {
      if (!v.is_array()) throw wrong("an array");
      T out;
      for (std::size_t i = 0; i < v.size(); ++i) out.push_back(convert<typename T::value_type>(v[i], fmt::format("{}[{}]", where, i)));
      return out;
    }
  }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

void require(bool ok, const std::string& message) {
  if (!ok) throw ValidationError("config: " + message);
}

template <class T>
void one_of(const T& value, std::initializer_list<T> allowed, const std::string& where) {
  if (std::find(allowed.begin(), allowed.end(), value) == allowed.end()) {
    std::string list;
    for (const auto& a : allowed) list += (list.empty() ? "" : ", ") + fmt::format("'{}'", a);
    throw ValidationError(fmt::format("config: '{}' must be one of {}", where, list));
  }
}

extract::LearnerKind parse_learner(const std::string& name) {
  if (name == "auto") return extract::LearnerKind::kAuto;
  if (name == "label_spreading") return extract::LearnerKind::kLabelSpreading;
  if (name == "logistic") return extract::LearnerKind::kLogistic;
  return extract::LearnerKind::kTree;
}

std::string learner_name(extract::LearnerKind kind) {
  switch (kind) {
    case extract::LearnerKind::kAuto: return "auto";
    case extract::LearnerKind::kLabelSpreading: return "label_spreading";
    case extract::LearnerKind::kLogistic: return "logistic";
    case extract::LearnerKind::kTree: return "tree";
  }
  return "auto";
}

void parse_logistic(Section s, learn::LogisticParams& p) {
  s.get("l2", p.l2);
  s.get("max_iter", p.max_iter);
  s.get("tol", p.tol);
  s.finish();
  require(p.l2 >= 0.0, fmt::format("'{}' must be >= 0", s.name("l2")));
  require(p.max_iter >= 1, fmt::format("'{}' must be >= 1", s.name("max_iter")));
  require(p.tol > 0.0, fmt::format("'{}' must be > 0", s.name("tol")));
}

void parse_tree(Section s, learn::TreeParams& p) {
  s.get("max_depth", p.max_depth);
  s.get("min_leaf", p.min_leaf);
  s.finish();
  require(p.min_leaf >= 1, fmt::format("'{}' must be >= 1", s.name("min_leaf")));
}

}  // namespace

Config parse_config(const json& j) {
  Config c;
  Section root(j, "");
  root.get("seed", c.seed);
  std::string out_dir = c.out_dir.string();
  root.get("out_dir", out_dir);
  c.out_dir = out_dir;
  root.get("stages", c.stages);
  for (const auto& stage : c.stages) {
    if (std::find(stage_names().begin(), stage_names().end(), stage) == stage_names().end()) {
      throw ValidationError(fmt::format("config: unknown stage '{}'", stage));
    }
  }

  {
    Section s = root.child("data");
    s.get("task", c.data.task);
    s.get("image_size", c.data.sprites.image_size);
    s.get("rotation_stride", c.data.sprites.rotation_stride);
    s.get("position_stride", c.data.sprites.position_stride);
    s.get("max_radius_fraction", c.data.sprites.max_radius_fraction);
    s.get("max_samples", c.data.max_samples);
    s.finish();
    one_of<std::string>(c.data.task, {"task1", "task2"}, "data.task");
    require(c.data.sprites.rotation_stride >= 1 && c.data.sprites.position_stride >= 1, "strides must be >= 1");
    require(c.data.max_samples >= 10, "'data.max_samples' must be >= 10");
    c.data.sprites.validate();
  }
  {
    Section s = root.child("model");
    s.get("hidden", c.model.hidden);
    s.get("learning_rate", c.model.sgd.learning_rate);
    s.get("momentum", c.model.sgd.momentum);
    s.get("epochs", c.model.sgd.epochs);
    s.get("batch_size", c.model.sgd.batch_size);
    s.get("test_fraction", c.model.test_fraction);
    s.finish();
    require(!c.model.hidden.empty(), "'model.hidden' needs at least one layer");
    for (int h : c.model.hidden) require(h >= 1, "'model.hidden' widths must be >= 1");
    require(c.model.sgd.learning_rate > 0.0, "'model.learning_rate' must be > 0");
    require(c.model.sgd.momentum >= 0.0 && c.model.sgd.momentum < 1.0, "'model.momentum' must lie in [0, 1)");
    require(c.model.sgd.epochs >= 1, "'model.epochs' must be >= 1");
    require(c.model.sgd.batch_size >= 1, "'model.batch_size' must be >= 1");
    require(c.model.test_fraction > 0.0 && c.model.test_fraction < 1.0, "'model.test_fraction' must lie in (0, 1)");
  }
  {
    Section s = root.child("extract");
    {
      Section l = s.child("labelled");
      l.get("mode", c.extract.labelled.mode);
      l.get("count", c.extract.labelled.count);
      l.finish();
      one_of<std::string>(c.extract.labelled.mode, {"total", "per_class"}, "extract.labelled.mode");
      require(c.extract.labelled.count >= 1, "'extract.labelled.count' must be >= 1");
    }
    std::string learner = "auto";
    s.get("learner", learner);
    one_of<std::string>(learner, {"auto", "label_spreading", "logistic", "tree"}, "extract.learner");
    c.extract.learner.kind = parse_learner(learner);
    s.get("val_fraction", c.extract.val_fraction);
    require(c.extract.val_fraction >= 0.0 && c.extract.val_fraction < 1.0, "'extract.val_fraction' must lie in [0, 1)");
    std::string tie_break = "earliest";
    s.get("layer_tie_break", tie_break);
    one_of<std::string>(tie_break, {"earliest", "latest"}, "extract.layer_tie_break");
    c.extract.layer_tie_break = tie_break == "latest" ? extract::LayerTieBreak::kLatest : extract::LayerTieBreak::kEarliest;
    {
      Section sp = s.child("spreading");
      std::string affinity = "knn";
      int k = 7;
      double gamma = 20.0;
      sp.get("affinity", affinity);
      sp.get("k", k);
      sp.get("gamma", gamma);
      sp.get("alpha", c.extract.learner.spreading.alpha);
      sp.get("max_iter", c.extract.learner.spreading.max_iter);
      sp.get("tol", c.extract.learner.spreading.tol);
      sp.finish();
      one_of<std::string>(affinity, {"knn", "rbf"}, "extract.spreading.affinity");
      if (affinity == "knn") {
        c.extract.learner.spreading.affinity = learn::KnnAffinity{k};
      } else {
        c.extract.learner.spreading.affinity = learn::RbfAffinity{gamma};
      }
      try {
        c.extract.learner.spreading.validate();
      } catch (const ValidationError& e) {
        throw ValidationError(fmt::format("config: extract.spreading: {}", e.what()));
      }
    }
    parse_logistic(s.child("logistic"), c.extract.learner.logistic);
    parse_tree(s.child("tree"), c.extract.learner.tree);
    {
      Section q = s.child("q_hat");
      std::string q_learner = "tree", target = "model_outputs";
      q.get("learner", q_learner);
      q.get("target", target);
      q.get("max_depth", c.extract.q_hat.tree.max_depth);
      q.get("min_leaf", c.extract.q_hat.tree.min_leaf);
      q.get("l2", c.extract.q_hat.logistic.l2);
      q.get("max_iter", c.extract.q_hat.logistic.max_iter);
      q.get("tol", c.extract.q_hat.logistic.tol);
      q.finish();
      one_of<std::string>(q_learner, {"tree", "logistic"}, "extract.q_hat.learner");
      one_of<std::string>(target, {"model_outputs", "dataset_labels"}, "extract.q_hat.target");
      c.extract.q_hat.learner = q_learner == "tree" ? extract::QHatLearner::kTree : extract::QHatLearner::kLogistic;
      c.extract.q_hat.target = target == "model_outputs" ? extract::QHatTarget::kModelOutputs : extract::QHatTarget::kDatasetLabels;
      require(c.extract.q_hat.tree.min_leaf >= 1, "'extract.q_hat.min_leaf' must be >= 1");
      require(c.extract.q_hat.logistic.l2 >= 0.0, "'extract.q_hat.l2' must be >= 0");
      require(c.extract.q_hat.logistic.max_iter >= 1, "'extract.q_hat.max_iter' must be >= 1");
      require(c.extract.q_hat.logistic.tol > 0.0, "'extract.q_hat.tol' must be > 0");
    }
    s.get("baseline_layer", c.extract.baseline_layer);
    s.finish();
  }
  {
    Section s = root.child("evaluate");
    s.get("relevant_concepts", c.evaluate.relevant_concepts);
    s.finish();
  }
  {
    Section s = root.child("intervene");
    s.get("max_corrected", c.intervene.max_corrected);
    s.finish();
  }
  {
    Section s = root.child("visualize");
    s.get("layers", c.visualize.layers);
    s.get("concepts", c.visualize.concepts);
    s.get("max_points", c.visualize.max_points);
    s.finish();
    require(c.visualize.max_points >= 3, "'visualize.max_points' must be >= 3");
  }
  root.finish();
  return c;
}

Config load_config(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw Error(fmt::format("cannot open config '{}'", file.string()));
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ValidationError(fmt::format("config '{}' is not valid JSON: {}", file.string(), e.what()));
  }
  return parse_config(j);
}

json config_to_json(const Config& c) {
  json spreading = {{"alpha", c.extract.learner.spreading.alpha},
                    {"max_iter", c.extract.learner.spreading.max_iter},
                    {"tol", c.extract.learner.spreading.tol}};
  if (const auto* knn = std::get_if<learn::KnnAffinity>(&c.extract.learner.spreading.affinity)) {
    spreading["affinity"] = "knn";
    spreading["k"] = knn->k;
  } else {
    spreading["affinity"] = "rbf";
    spreading["gamma"] = std::get<learn::RbfAffinity>(c.extract.learner.spreading.affinity).gamma;
  }
  const auto& q = c.extract.q_hat;
  return {
      {"seed", c.seed},
      {"out_dir", c.out_dir.string()},
      {"stages", c.stages},
      {"data",
       {{"task", c.data.task},
        {"image_size", c.data.sprites.image_size},
        {"rotation_stride", c.data.sprites.rotation_stride},
        {"position_stride", c.data.sprites.position_stride},
        {"max_radius_fraction", c.data.sprites.max_radius_fraction},
        {"max_samples", c.data.max_samples}}},
      {"model",
       {{"hidden", c.model.hidden},
        {"learning_rate", c.model.sgd.learning_rate},
        {"momentum", c.model.sgd.momentum},
        {"epochs", c.model.sgd.epochs},
        {"batch_size", c.model.sgd.batch_size},
        {"test_fraction", c.model.test_fraction}}},
      {"extract",
       {{"labelled", {{"mode", c.extract.labelled.mode}, {"count", c.extract.labelled.count}}},
        {"learner", learner_name(c.extract.learner.kind)},
        {"val_fraction", c.extract.val_fraction},
        {"layer_tie_break", c.extract.layer_tie_break == extract::LayerTieBreak::kLatest ? "latest" : "earliest"},
        {"spreading", spreading},
        {"logistic",
         {{"l2", c.extract.learner.logistic.l2},
          {"max_iter", c.extract.learner.logistic.max_iter},
          {"tol", c.extract.learner.logistic.tol}}},
        {"tree", {{"max_depth", c.extract.learner.tree.max_depth}, {"min_leaf", c.extract.learner.tree.min_leaf}}},
        {"q_hat",
         {{"learner", q.learner == extract::QHatLearner::kTree ? "tree" : "logistic"},
          {"target", q.target == extract::QHatTarget::kModelOutputs ? "model_outputs" : "dataset_labels"},
          {"max_depth", q.tree.max_depth},
          {"min_leaf", q.tree.min_leaf},
          {"l2", q.logistic.l2},
          {"max_iter", q.logistic.max_iter},
          {"tol", q.logistic.tol}}},
        {"baseline_layer", c.extract.baseline_layer}}},
      {"evaluate", {{"relevant_concepts", c.evaluate.relevant_concepts}}},
      {"intervene", {{"max_corrected", c.intervene.max_corrected}}},
      {"visualize",
       {{"layers", c.visualize.layers}, {"concepts", c.visualize.concepts}, {"max_points", c.visualize.max_points}}},
  };
}

// ---------------------------------------------------------------------------
// In-memory stages

namespace {

ConceptTable take_concepts(const ConceptTable& table, const IndexList& rows) {
  ConceptTable out = table;
  out.values = take_rows(table.values, rows);
  return out;
}

const ConceptTable& require_concepts(const ActivationBundle& bundle, const char* what) {
  if (!bundle.concepts) throw ValidationError(fmt::format("{} bundle carries no concept table", what));
  return *bundle.concepts;
}

const Labels& require_labels(const ActivationBundle& bundle, const char* what) {
  if (!bundle.dataset_labels) throw ValidationError(fmt::format("{} bundle carries no dataset labels", what));
  return *bundle.dataset_labels;
}

ActivationBundle record_split(const ref::MlpModel& model, const RowMatrixF& images, const ActivationBundle& data,
                              const IndexList& rows) {
  ActivationBundle b = ref::record_activations(model.net, take_rows(images, rows));
  b.dataset_labels = take(*data.dataset_labels, rows);
  b.concepts = take_concepts(*data.concepts, rows);
  if (data.input_ref) {
    std::vector<std::string> refs;
    for (auto r : rows) refs.push_back((*data.input_ref)[r]);
    b.input_ref = std::move(refs);
  }
  return b;
}

std::vector<bool> relevant_mask(const std::vector<std::string>& names, const std::vector<std::string>& relevant) {
  std::vector<bool> mask(names.size(), false);
  for (const auto& r : relevant) {
    const auto it = std::find(names.begin(), names.end(), r);
    if (it == names.end()) throw ValidationError(fmt::format("unknown relevant concept '{}'", r));
    mask[static_cast<std::size_t>(it - names.begin())] = true;
  }
  return mask;
}

json model_metrics(const extract::ExtractedModel& model, const ActivationBundle& bundle,
                   const std::vector<bool>& mask) {
  const ConceptTable& truth = require_concepts(bundle, "evaluation");
  const IntMatrix pred = extract::predict_concepts(model.p_hat, bundle);
  const Labels fhat = model.q_hat.predict(pred);
  json concepts = json::object();
  const auto acc = metrics::concept_accuracy(pred, truth.values);
  const auto majority = metrics::majority_baseline(truth.values);
  for (std::size_t c = 0; c < truth.names.size(); ++c) {
    Labels p(static_cast<std::size_t>(pred.rows())), t(p.size());
    for (Eigen::Index r = 0; r < pred.rows(); ++r) {
      p[static_cast<std::size_t>(r)] = pred(r, static_cast<Eigen::Index>(c));
      t[static_cast<std::size_t>(r)] = truth.values(r, static_cast<Eigen::Index>(c));
    }
    concepts[truth.names[c]] = {{"layer", model.p_hat.entries[c].layer_id},
                                {"predictor", std::string(learn::predictor_kind_name(model.p_hat.entries[c].predictor.kind()))},
                                {"accuracy", acc[c]},
                                {"majority_baseline", majority[c]},
                                {"macro_f1", metrics::concept_macro_f1(p, t)}};
  }
  // Relevant-only macro-F1 over the masked columns.
  std::vector<Eigen::Index> cols;
  for (std::size_t c = 0; c < mask.size(); ++c) {
    if (mask[c]) cols.push_back(static_cast<Eigen::Index>(c));
  }
  json out = {{"fidelity", metrics::fidelity(fhat, bundle.outputs())},
              {"task_accuracy", metrics::task_accuracy(fhat, require_labels(bundle, "evaluation"))},
              {"macro_f1", metrics::macro_f1_per_concept(pred, truth.values)},
              {"mpo", metrics::mpo_curve(truth.values, pred, mask).values},
              {"concepts", concepts}};
  if (!cols.empty()) {
    out["macro_f1_relevant"] = metrics::macro_f1_per_concept(pred(Eigen::all, cols), truth.values(Eigen::all, cols));
  }
  if (model.q_hat.learner == extract::QHatLearner::kTree) {
    std::vector<std::string> used;
    for (int f : model.q_hat.tree().features_used()) used.push_back(truth.names[static_cast<std::size_t>(f)]);
    out["q_hat_features"] = used;
    out["q_hat_nodes"] = model.q_hat.tree().nodes.size();
  }
  return out;
}

}  // namespace

ActivationBundle generate_data(const DataConfig& config, uint64_t seed) {
  const synth::Task task = synth::parse_task(config.task);
  synth::SpriteDataset sprites = synth::generate_dsprites(config.sprites);
  const IndexList keep = sample_without_replacement(sprites.size(), config.max_samples, derive_seed(seed, "decimate"));
  sprites = sprites.subset(keep);
  ActivationBundle b;
  b.sample_count = keep.size();
  b.layers.push_back({"pixels", sprites.pixel_matrix()});
  b.dataset_labels = synth::make_task_labels(sprites.concepts.values, task, config.sprites.scale_count);
  b.concepts = sprites.concepts;
  std::vector<std::string> refs;
  for (auto k : keep) refs.push_back(std::to_string(k));
  b.input_ref = std::move(refs);
  b.validate();
  return b;
}

TrainedReference train_reference(const ActivationBundle& data, const ref::MlpHyper& hyper, uint64_t seed) {
  require_concepts(data, "input");
  const Labels& labels = require_labels(data, "input");
  const RowMatrixF& images = data.layer("pixels").activations;
  ref::MlpHyper h = hyper;
  h.seed = seed;
  TrainedReference out;
  out.model = ref::train_mlp(images, labels, h);
  out.train = record_split(out.model, images, data, out.model.train_index);
  out.test = record_split(out.model, images, data, out.model.test_index);
  return out;
}

Extraction run_extraction(const ActivationBundle& train, const ExtractConfig& config, uint64_t seed) {
  const ConceptTable& table = require_concepts(train, "train");
  const Labels& labels = require_labels(train, "train");
  Extraction x;
  LabelledSplitMode mode = TotalCount{config.labelled.count};
  if (config.labelled.mode == "per_class") mode = PerClassCount{config.labelled.count, labels};
  x.concepts = split_concept_labelled(table, mode, derive_seed(seed, "labelled"));
  extract::GridOptions options;
  options.val_fraction = config.val_fraction;
  options.seed = derive_seed(seed, "grid");
  x.grid = extract::train_predictor_grid(train, x.concepts, config.learner, options);
  x.selected = extract::select_layers(x.grid, config.layer_tie_break);
  x.model.p_hat = extract::compose_phat(x.grid, x.selected);
  const Labels& targets = config.q_hat.target == extract::QHatTarget::kModelOutputs ? train.outputs() : labels;
  x.model.q_hat = extract::extract_qhat(extract::predict_concepts(x.model.p_hat, train), targets, table.cardinalities, config.q_hat);

  x.baseline_layer = config.baseline_layer.empty() ? extract::default_baseline_layer(train) : config.baseline_layer;
  x.baseline.p_hat = extract::extract_net2vec_baseline(train, x.concepts, x.baseline_layer, config.learner.logistic);
  x.baseline.q_hat =
      extract::extract_qhat(extract::predict_concepts(x.baseline.p_hat, train), targets, table.cardinalities, config.q_hat);
  return x;
}

std::vector<std::string> default_relevant_concepts(synth::Task task) {
  if (task == synth::Task::kTask1) return {"shape"};
  return {"shape", "scale"};
}

json evaluate_models(const extract::ExtractedModel& cme, const extract::ExtractedModel& baseline,
                     const ActivationBundle& bundle, const std::vector<std::string>& relevant_concepts) {
  const ConceptTable& truth = require_concepts(bundle, "evaluation");
  const auto mask = relevant_mask(truth.names, relevant_concepts);
  return {{"sample_count", bundle.sample_count},
          {"relevant_concepts", relevant_concepts},
          {"cme", model_metrics(cme, bundle, mask)},
          {"baseline", model_metrics(baseline, bundle, mask)}};
}

InterventionResult run_intervention(const extract::PHat& p_hat, const ActivationBundle& train,
                                    const ActivationBundle& test, const extract::QHatSpec& learner, int max_corrected) {
  const ConceptTable& truth_train = require_concepts(train, "train");
  const ConceptTable& truth_test = require_concepts(test, "test");
  intervention::InterventionData data;
  data.predicted_train = extract::predict_concepts(p_hat, train);
  data.predicted_test = extract::predict_concepts(p_hat, test);
  data.truth_train = truth_train.values;
  data.truth_test = truth_test.values;
  data.targets_train = require_labels(train, "train");
  data.targets_test = require_labels(test, "test");

  extract::QHatSpec spec = learner;
  spec.learner = extract::QHatLearner::kLogistic;
  const auto& cards = truth_train.cardinalities;
  const extract::QHat ground_truth = extract::extract_qhat(data.truth_train, data.targets_train, cards, spec);
  const std::size_t k = cards.size();
  const std::size_t count = max_corrected < 0 ? k : std::min(k, static_cast<std::size_t>(max_corrected));

  InterventionResult result;
  result.curve = intervention::intervention_curve(data, cards, intervention::rank_concepts(ground_truth), count, spec);
  result.ground_truth_accuracy = metrics::task_accuracy(ground_truth.predict(data.truth_test), data.targets_test);
  return result;
}

// ---------------------------------------------------------------------------
// On-disk stages

namespace {

struct Layout {
  fs::path root;
  fs::path data() const { return root / "data"; }
  fs::path model() const { return root / "model"; }
  fs::path acts_train() const { return root / "acts" / "train"; }
  fs::path acts_test() const { return root / "acts" / "test"; }
  fs::path extract() const { return root / "extract"; }
  fs::path evaluate() const { return root / "evaluate"; }
  fs::path intervene() const { return root / "intervene"; }
  fs::path viz() const { return root / "viz"; }
};

void write_text(const fs::path& file, const std::string& text) {
  fs::create_directories(file.parent_path());
  std::ofstream out(file, std::ios::trunc | std::ios::binary);
  if (!out) throw Error(fmt::format("cannot write '{}'", file.string()));
  out << text;
}

void write_json(const fs::path& file, const json& j) { write_text(file, j.dump(2) + "\n"); }

void require_input(const fs::path& file, std::string_view stage, std::string_view producer) {
  if (!fs::exists(file)) {
    throw Error(fmt::format("stage '{}' needs '{}', which does not exist; run the '{}' stage first", stage, file.string(),
                            producer));
  }
}

std::string sanitize(const std::string& s) {
  std::string out = s;
  for (char& ch : out) {
    if (!(std::isalnum(static_cast<unsigned char>(ch)) || ch == '_' || ch == '-')) ch = '_';
  }
  return out;
}

std::vector<std::string> class_names(synth::Task task, int scale_count) {
  static const char* shapes[] = {"square", "ellipse", "heart"};
  std::vector<std::string> names;
  for (int s = 0; s < 3; ++s) {
    if (task == synth::Task::kTask1) {
      names.emplace_back(shapes[s]);
    } else {
      for (int sc = 0; sc < scale_count; ++sc) names.push_back(fmt::format("{} scale {}", shapes[s], sc));
    }
  }
  return names;
}

void stage_generate(const Config& c, const Layout& at) {
  save_bundle(generate_data(c.data, stage_seed(c.seed, "generate")), at.data());
}

void stage_train_ref(const Config& c, const Layout& at) {
  require_input(at.data() / "manifest.json", "train-ref", "generate");
  const TrainedReference r = train_reference(load_bundle(at.data()), c.model, stage_seed(c.seed, "train-ref"));
  spdlog::info("reference model: train accuracy {:.4f}, test accuracy {:.4f}", r.model.train_accuracy, r.model.test_accuracy);
  ref::save_mlp(r.model, at.model());
  save_bundle(r.train, at.acts_train());
  save_bundle(r.test, at.acts_test());
}

void stage_extract(const Config& c, const Layout& at) {
  require_input(at.acts_train() / "manifest.json", "extract", "train-ref");
  const ActivationBundle train = load_bundle(at.acts_train());
  const Extraction x = run_extraction(train, c.extract, stage_seed(c.seed, "extract"));
  save_extracted_model(x.model, at.extract() / "model");
  save_extracted_model(x.baseline, at.extract() / "baseline");
  json selected = json::object();
  json predictors = json::array();
  for (std::size_t ci = 0; ci < x.grid.concept_count(); ++ci) selected[x.grid.concept_names[ci]] = x.grid.layer_ids[x.selected[ci]];
  for (const auto& row : x.grid.entries) {
    json r = json::array();
    for (const auto& p : row) r.push_back(std::string(learn::predictor_kind_name(p.kind())));
    predictors.push_back(r);
  }
  write_json(at.extract() / "grid.json", {{"layers", x.grid.layer_ids},
                                          {"concepts", x.grid.concept_names},
                                          {"cardinalities", x.grid.cardinalities},
                                          {"val_loss", x.grid.val_loss},
                                          {"predictors", predictors},
                                          {"selected_layers", selected},
                                          {"baseline_layer", x.baseline_layer},
                                          {"labelled_index", x.concepts.labelled_index},
                                          {"folds", x.grid.folds},
                                          {"q_hat_train_accuracy", x.model.q_hat.train_accuracy}});
}

void stage_evaluate(const Config& c, const Layout& at) {
  require_input(at.extract() / "model" / "model.json", "evaluate", "extract");
  require_input(at.extract() / "baseline" / "model.json", "evaluate", "extract");
  require_input(at.acts_test() / "manifest.json", "evaluate", "train-ref");
  require_input(at.model() / "mlp.json", "evaluate", "train-ref");
  const auto cme = load_extracted_model(at.extract() / "model");
  const auto baseline = load_extracted_model(at.extract() / "baseline");
  const ActivationBundle test = load_bundle(at.acts_test());
  const ref::MlpModel mlp = ref::load_mlp(at.model());
  const auto relevant = c.evaluate.relevant_concepts.empty()
                            ? default_relevant_concepts(synth::parse_task(c.data.task))
                            : c.evaluate.relevant_concepts;
  json report = evaluate_models(cme, baseline, test, relevant);
  report["task"] = c.data.task;
  report["seed"] = c.seed;
  report["reference"] = {{"train_accuracy", mlp.train_accuracy}, {"test_accuracy", mlp.test_accuracy}};
  // Flat headline numbers.
  report["fidelity"] = report["cme"]["fidelity"];
  report["task_accuracy"] = report["cme"]["task_accuracy"];
  report["macro_f1"] = report["cme"]["macro_f1"];
  report["mpo"] = report["cme"]["mpo"];
  write_json(at.evaluate() / "report.json", report);
  std::string csv = "m,cme,baseline\n";
  const auto& a = report["cme"]["mpo"];
  const auto& b = report["baseline"]["mpo"];
  for (std::size_t m = 0; m < a.size(); ++m) csv += fmt::format("{},{:.9g},{:.9g}\n", m, a[m].get<double>(), b[m].get<double>());
  write_text(at.evaluate() / "mpo.csv", csv);
  spdlog::info("fidelity {:.4f}, task accuracy {:.4f}, baseline fidelity {:.4f}", report["fidelity"].get<double>(),
               report["task_accuracy"].get<double>(), report["baseline"]["fidelity"].get<double>());
}

void stage_intervene(const Config& c, const Layout& at) {
  require_input(at.extract() / "model" / "model.json", "intervene", "extract");
  require_input(at.acts_train() / "manifest.json", "intervene", "train-ref");
  require_input(at.acts_test() / "manifest.json", "intervene", "train-ref");
  const auto cme = load_extracted_model(at.extract() / "model");
  const ActivationBundle train = load_bundle(at.acts_train());
  const ActivationBundle test = load_bundle(at.acts_test());
  const InterventionResult r = run_intervention(cme.p_hat, train, test, c.extract.q_hat, c.intervene.max_corrected);
  const auto& names = cme.p_hat.concept_names;
  std::vector<std::string> order;
  for (auto i : r.curve.importance_order) order.push_back(names[i]);
  std::string csv = "corrected,accuracy,last_corrected\n";
  for (std::size_t i = 0; i < r.curve.accuracies.size(); ++i) {
    csv += fmt::format("{},{:.9g},{}\n", i, r.curve.accuracies[i], i == 0 ? "" : order[i - 1]);
  }
  write_text(at.intervene() / "intervention.csv", csv);
  write_json(at.intervene() / "intervention.json", {{"importance_order", order},
                                                    {"corrected_counts", r.curve.corrected_counts},
                                                    {"accuracies", r.curve.accuracies},
                                                    {"ground_truth_accuracy", r.ground_truth_accuracy}});
}

void stage_visualize(const Config& c, const Layout& at) {
  require_input(at.acts_test() / "manifest.json", "visualize", "train-ref");
  require_input(at.extract() / "model" / "model.json", "visualize", "extract");
  const ActivationBundle test = load_bundle(at.acts_test());
  const ConceptTable& truth = require_concepts(test, "test");
  const IndexList rows = sample_without_replacement(test.sample_count, c.visualize.max_points, stage_seed(c.seed, "visualize"));
  const auto layers = c.visualize.layers.empty() ? test.layer_ids() : c.visualize.layers;
  std::vector<std::size_t> concepts;
  if (c.visualize.concepts.empty()) {
    for (std::size_t i = 0; i < truth.concept_count(); ++i) concepts.push_back(i);
  } else {
    for (const auto& name : c.visualize.concepts) concepts.push_back(truth.index_of(name));
  }
  std::vector<std::string> files;
  std::vector<std::vector<std::string>> per_layer(layers.size());
  fs::create_directories(at.viz());
  parallel_for(layers.size(), [&](std::size_t l) {
    const RowMatrixF& acts = test.layer(layers[l]).activations;
    if (acts.cols() < 2) {
      spdlog::warn("layer '{}' has fewer than 2 units; no projection written", layers[l]);
      return;
    }
    const MatrixD coords = viz::project_2d(to_double(take_rows(acts, rows)));
    for (auto ci : concepts) {
      Labels values(rows.size());
      for (std::size_t r = 0; r < rows.size(); ++r) values[r] = truth.values(static_cast<Eigen::Index>(rows[r]), static_cast<Eigen::Index>(ci));
      const std::string name = fmt::format("{}__{}.csv", sanitize(layers[l]), sanitize(truth.names[ci]));
      viz::write_projection_csv(at.viz() / name, coords, values);
      per_layer[l].push_back(name);
    }
  });
  for (const auto& names : per_layer) files.insert(files.end(), names.begin(), names.end());
  const auto cme = load_extracted_model(at.extract() / "model");
  if (cme.q_hat.learner == extract::QHatLearner::kTree) {
    const synth::Task task = synth::parse_task(c.data.task);
    write_text(at.viz() / "q_hat.dot",
               viz::export_tree_dot(cme.q_hat.tree(), cme.p_hat.concept_names, class_names(task, c.data.sprites.scale_count)));
    files.push_back("q_hat.dot");
  }
  write_json(at.viz() / "index.json", {{"files", files}, {"sample_count", rows.size()}});
}

struct StageSpec {
  std::string_view name;
  void (*run)(const Config&, const Layout&);
  std::vector<fs::path> (*outputs)(const Layout&);
};

const std::vector<StageSpec>& stage_table() {
  static const std::vector<StageSpec> table{
      {"generate", stage_generate, [](const Layout& at) { return std::vector<fs::path>{at.data()}; }},
      {"train-ref", stage_train_ref,
       [](const Layout& at) { return std::vector<fs::path>{at.model(), at.acts_train(), at.acts_test()}; }},
      {"extract", stage_extract, [](const Layout& at) { return std::vector<fs::path>{at.extract()}; }},
      {"evaluate", stage_evaluate, [](const Layout& at) { return std::vector<fs::path>{at.evaluate()}; }},
      {"intervene", stage_intervene, [](const Layout& at) { return std::vector<fs::path>{at.intervene()}; }},
      {"visualize", stage_visualize, [](const Layout& at) { return std::vector<fs::path>{at.viz()}; }},
  };
  return table;
}

// The file each stage writes last; its presence marks the stage complete.
fs::path completion_marker(std::string_view stage, const Layout& at) {
  if (stage == "generate") return at.data() / "manifest.json";
  if (stage == "train-ref") return at.acts_test() / "manifest.json";
  if (stage == "extract") return at.extract() / "grid.json";
  if (stage == "evaluate") return at.evaluate() / "mpo.csv";
  if (stage == "intervene") return at.intervene() / "intervention.json";
  return at.viz() / "index.json";
}

}  // namespace

bool run_stage(const Config& config, std::string_view stage, bool force) {
  const auto& table = stage_table();
  const auto it = std::find_if(table.begin(), table.end(), [&](const StageSpec& s) { return s.name == stage; });
  if (it == table.end()) throw ValidationError(fmt::format("unknown stage '{}'", stage));
  const Layout at{config.out_dir};
  if (!force && fs::exists(completion_marker(stage, at))) {
    spdlog::info("stage '{}': outputs exist, skipping (use --force to rerun)", stage);
    return false;
  }
  for (const auto& dir : it->outputs(at)) fs::remove_all(dir);
  spdlog::info("stage '{}'", stage);
  it->run(config, at);
  return true;
}

void run_all(const Config& config, bool force) {
  fs::create_directories(config.out_dir);
  write_json(config.out_dir / "config.json", config_to_json(config));
  const auto& stages = config.stages.empty() ? stage_names() : config.stages;
  for (const auto& stage : stages) run_stage(config, stage, force);
  write_run_manifest(config);
}

void write_run_manifest(const Config& config) {
  const fs::path manifest = config.out_dir / "run_manifest.json";
  std::vector<fs::path> files;
  for (const auto& entry : fs::recursive_directory_iterator(config.out_dir)) {
    if (entry.is_regular_file() && entry.path() != manifest) files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  json list = json::array();
  for (const auto& f : files) {
    std::ifstream in(f, std::ios::binary);
    const std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    list.push_back({{"path", fs::relative(f, config.out_dir).generic_string()},
                    {"bytes", bytes.size()},
                    {"crc32", crc32_of(bytes)}});
  }
  write_json(manifest, {{"version", 1}, {"seed", config.seed}, {"task", config.data.task}, {"files", list}});
}

}  // namespace cme::pipeline
