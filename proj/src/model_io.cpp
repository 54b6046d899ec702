#include "cme/model_io.hpp"

#include <fstream>
#include <map>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "cme/bundle_io.hpp"

namespace cme {

namespace fs = std::filesystem;
using nlohmann::json;
using namespace cme::learn;
using namespace cme::extract;

namespace {

class BlobWriter {
 public:
  explicit BlobWriter(fs::path dir) : dir_(std::move(dir)) {}

  json f32(const MatrixD& m) {
    const std::string file = fmt::format("blob_{:03d}.f32", next_++);
    // Row-major order regardless of Eigen storage.
    std::vector<float> flat(static_cast<std::size_t>(m.size()));
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      for (Eigen::Index c = 0; c < m.cols(); ++c) flat[static_cast<std::size_t>(r * m.cols() + c)] = static_cast<float>(m(r, c));
    }
    const uint32_t crc = write_f32_blob(dir_ / file, flat);
    return {{"file", file}, {"shape", {m.rows(), m.cols()}}, {"crc32", crc}};
  }

  json i32(const Labels& v) {
    const std::string file = fmt::format("blob_{:03d}.i32", next_++);
    const uint32_t crc = write_i32_blob(dir_ / file, v);
    return {{"file", file}, {"shape", {v.size()}}, {"crc32", crc}};
  }

  json nodes(const std::shared_ptr<const MatrixD>& nodes) {
    auto it = shared_.find(nodes.get());
    if (it != shared_.end()) return it->second;
    json ref = f32(*nodes);
    shared_.emplace(nodes.get(), ref);
    return ref;
  }

 private:
  fs::path dir_;
  int next_ = 0;
  std::map<const MatrixD*, json> shared_;
};

class BlobReader {
 public:
  explicit BlobReader(fs::path dir) : dir_(std::move(dir)) {}

  MatrixD f32(const json& ref) {
    const auto shape = ref.at("shape").get<std::vector<std::size_t>>();
    if (shape.size() != 2) throw FormatError("f32 blob must be 2-D");
    const auto values = read_f32_blob(dir_ / ref.at("file").get<std::string>(), shape[0] * shape[1], ref.at("crc32").get<uint32_t>());
    MatrixD m(static_cast<Eigen::Index>(shape[0]), static_cast<Eigen::Index>(shape[1]));
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = values[static_cast<std::size_t>(r * m.cols() + c)];
    }
    return m;
  }

  Labels i32(const json& ref) {
    const auto shape = ref.at("shape").get<std::vector<std::size_t>>();
    if (shape.size() != 1) throw FormatError("i32 blob must be 1-D");
    return read_i32_blob(dir_ / ref.at("file").get<std::string>(), shape[0], ref.at("crc32").get<uint32_t>());
  }

  std::shared_ptr<const MatrixD> nodes(const json& ref) {
    const auto key = ref.at("file").get<std::string>();
    auto it = shared_.find(key);
    if (it != shared_.end()) return it->second;
    auto m = std::make_shared<const MatrixD>(f32(ref));
    shared_.emplace(key, m);
    return m;
  }

 private:
  fs::path dir_;
  std::map<std::string, std::shared_ptr<const MatrixD>> shared_;
};

json logistic_to_json(const LogisticModel& m, BlobWriter& blobs) {
  return {{"classes", m.classes}, {"weights", blobs.f32(m.weights)}, {"bias", blobs.f32(m.bias.transpose())}};
}

LogisticModel logistic_from_json(const json& j, BlobReader& blobs) {
  LogisticModel m;
  m.classes = j.at("classes").get<std::vector<int32_t>>();
  m.weights = blobs.f32(j.at("weights"));
  m.bias = blobs.f32(j.at("bias")).row(0).transpose();
  if (m.weights.rows() != static_cast<Eigen::Index>(m.classes.size()) || m.bias.size() != m.weights.rows()) {
    throw FormatError("logistic parameter shapes disagree with its classes");
  }
  return m;
}

json node_to_json(const TreeModel& t, std::size_t at) {
  const TreeNode& n = t.nodes[at];
  json j = {{"label", n.label}, {"samples", n.samples}, {"class_counts", n.class_counts}};
  if (!n.is_leaf()) {
    j["feature"] = n.feature;
    j["threshold"] = n.threshold;
    j["left"] = node_to_json(t, static_cast<std::size_t>(n.left));
    j["right"] = node_to_json(t, static_cast<std::size_t>(n.right));
  }
  return j;
}

json tree_to_json(const TreeModel& t) {
  if (t.nodes.empty()) throw ValidationError("tree has no nodes");
  return {{"classes", t.classes}, {"feature_dim", t.feature_dim}, {"root", node_to_json(t, 0)}};
}

// Rebuilds the pre-order node list.
int node_from_json(const json& j, TreeModel& t) {
  TreeNode node;
  node.label = j.at("label").get<int32_t>();
  node.samples = j.at("samples").get<std::size_t>();
  node.class_counts = j.at("class_counts").get<std::vector<std::size_t>>();
  const int index = static_cast<int>(t.nodes.size());
  t.nodes.push_back(node);
  if (j.contains("feature")) {
    const int feature = j.at("feature").get<int>();
    if (feature < 0 || feature >= t.feature_dim) throw FormatError("tree split feature out of range");
    t.nodes[static_cast<std::size_t>(index)].feature = feature;
    t.nodes[static_cast<std::size_t>(index)].threshold = j.at("threshold").get<double>();
    const int l = node_from_json(j.at("left"), t);
    t.nodes[static_cast<std::size_t>(index)].left = l;
    const int r = node_from_json(j.at("right"), t);
    t.nodes[static_cast<std::size_t>(index)].right = r;
  }
  return index;
}

TreeModel tree_from_json(const json& j) {
  TreeModel t;
  t.classes = j.at("classes").get<std::vector<int32_t>>();
  t.feature_dim = j.at("feature_dim").get<int>();
  node_from_json(j.at("root"), t);
  return t;
}

json predictor_to_json(const ConceptPredictor& p, BlobWriter& blobs) {
  json j = {{"kind", std::string(predictor_kind_name(p.kind()))}, {"feature_dim", p.feature_dim()}};
  const auto& model = p.model();
  if (const auto* m = std::get_if<ConstantModel>(&model)) {
    j["value"] = m->value;
  } else if (const auto* m = std::get_if<SpreadingModel>(&model)) {
    j["classes"] = m->classes;
    j["nodes"] = blobs.nodes(m->nodes);
    j["node_labels"] = blobs.i32(m->node_labels);
  } else if (const auto* m = std::get_if<LogisticModel>(&model)) {
    j.update(logistic_to_json(*m, blobs));
  } else if (const auto* m = std::get_if<TreeModel>(&model)) {
    j["tree"] = tree_to_json(*m);
  } else if (const auto* m = std::get_if<OneVsRestModel>(&model)) {
    j["values"] = m->values;
    j["regressors"] = json::array();
    for (const auto& r : m->regressors) j["regressors"].push_back(logistic_to_json(r, blobs));
  }
  return j;
}

ConceptPredictor predictor_from_json(const json& j, BlobReader& blobs) {
  const auto kind = j.at("kind").get<std::string>();
  const int dim = j.at("feature_dim").get<int>();
  if (kind == "constant") return {ConstantModel{j.at("value").get<int32_t>()}, dim};
  if (kind == "label_spreading") {
    SpreadingModel m;
    m.classes = j.at("classes").get<std::vector<int32_t>>();
    m.nodes = blobs.nodes(j.at("nodes"));
    m.node_labels = blobs.i32(j.at("node_labels"));
    if (m.nodes->cols() != dim || static_cast<std::size_t>(m.nodes->rows()) != m.node_labels.size()) {
      throw FormatError("spreading node set disagrees with its labels or feature_dim");
    }
    return {std::move(m), dim};
  }
  if (kind == "logistic") return {logistic_from_json(j, blobs), dim};
  if (kind == "tree") return {tree_from_json(j.at("tree")), dim};
  if (kind == "one_vs_rest") {
    OneVsRestModel m;
    m.values = j.at("values").get<std::vector<int32_t>>();
    for (const auto& r : j.at("regressors")) m.regressors.push_back(logistic_from_json(r, blobs));
    if (m.values.size() != m.regressors.size()) throw FormatError("one-vs-rest values and regressors differ in count");
    return {std::move(m), dim};
  }
  throw FormatError(fmt::format("unknown predictor kind '{}'", kind));
}

json phat_to_json(const PHat& p, BlobWriter& blobs) {
  json concepts = json::array();
  for (std::size_t c = 0; c < p.concept_count(); ++c) {
    concepts.push_back({{"name", p.concept_names[c]},
                        {"cardinality", p.cardinalities[c]},
                        {"layer", p.entries[c].layer_id},
                        {"predictor", predictor_to_json(p.entries[c].predictor, blobs)}});
  }
  return concepts;
}

PHat phat_from_json(const json& concepts, BlobReader& blobs) {
  PHat p;
  for (const auto& c : concepts) {
    p.concept_names.push_back(c.at("name").get<std::string>());
    p.cardinalities.push_back(c.at("cardinality").get<int32_t>());
    p.entries.push_back({c.at("layer").get<std::string>(), predictor_from_json(c.at("predictor"), blobs)});
  }
  return p;
}

void write_json(const fs::path& file, const json& j) {
  std::ofstream out(file, std::ios::trunc);
  if (!out) throw Error(fmt::format("cannot write '{}'", file.string()));
  out << j.dump(2) << '\n';
}

json read_json(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw FormatError(fmt::format("missing '{}'", file.string()));
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError(fmt::format("malformed '{}': {}", file.string(), e.what()));
  }
}

}  // namespace

void save_extracted_model(const ExtractedModel& model, const fs::path& dir) {
  fs::create_directories(dir);
  BlobWriter blobs(dir);
  const QHat& q = model.q_hat;
  json qj = {{"learner", q.learner == QHatLearner::kTree ? "tree" : "logistic"},
             {"target", q.target == QHatTarget::kModelOutputs ? "model_outputs" : "dataset_labels"},
             {"cardinalities", q.cardinalities},
             {"train_accuracy", q.train_accuracy}};
  if (q.learner == QHatLearner::kTree) {
    qj["tree"] = tree_to_json(q.tree());
  } else {
    qj["logistic"] = logistic_to_json(q.logistic(), blobs);
  }
  write_json(dir / "model.json",
             {{"version", 1}, {"kind", "extracted_model"}, {"concepts", phat_to_json(model.p_hat, blobs)}, {"q_hat", qj}});
}

ExtractedModel load_extracted_model(const fs::path& dir) {
  const json j = read_json(dir / "model.json");
  try {
    if (j.at("kind") != "extracted_model" || j.at("version") != 1) throw FormatError("not an extracted model");
    BlobReader blobs(dir);
    ExtractedModel model;
    model.p_hat = phat_from_json(j.at("concepts"), blobs);
    const json& qj = j.at("q_hat");
    QHat& q = model.q_hat;
    const auto learner = qj.at("learner").get<std::string>();
    const auto target = qj.at("target").get<std::string>();
    if (learner != "tree" && learner != "logistic") throw FormatError(fmt::format("unknown surrogate learner '{}'", learner));
    if (target != "model_outputs" && target != "dataset_labels") throw FormatError(fmt::format("unknown surrogate target '{}'", target));
    q.learner = learner == "tree" ? QHatLearner::kTree : QHatLearner::kLogistic;
    q.target = target == "model_outputs" ? QHatTarget::kModelOutputs : QHatTarget::kDatasetLabels;
    q.cardinalities = qj.at("cardinalities").get<std::vector<int32_t>>();
    q.train_accuracy = qj.at("train_accuracy").get<double>();
    if (q.learner == QHatLearner::kTree) {
      q.model = tree_from_json(qj.at("tree"));
    } else {
      q.model = logistic_from_json(qj.at("logistic"), blobs);
    }
    if (q.cardinalities.size() != model.p_hat.concept_count()) throw FormatError("surrogate and concept map differ in width");
    return model;
  } catch (const json::exception& e) {
    throw FormatError(fmt::format("malformed extracted model: {}", e.what()));
  }
}

void save_phat(const PHat& p_hat, const fs::path& dir) {
  fs::create_directories(dir);
  BlobWriter blobs(dir);
  write_json(dir / "phat.json", {{"version", 1}, {"kind", "concept_map"}, {"concepts", phat_to_json(p_hat, blobs)}});
}

PHat load_phat(const fs::path& dir) {
  const json j = read_json(dir / "phat.json");
  try {
    if (j.at("kind") != "concept_map" || j.at("version") != 1) throw FormatError("not a concept map");
    BlobReader blobs(dir);
    return phat_from_json(j.at("concepts"), blobs);
  } catch (const json::exception& e) {
    throw FormatError(fmt::format("malformed concept map: {}", e.what()));
  }
}

}  // namespace cme
