#include "cme/refmodel.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "cme/bundle_io.hpp"

namespace cme::ref {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr Eigen::Index kRecordChunk = 2048;

double accuracy(const Labels& a, const Labels& b) {
  if (a.empty()) return 0.0;
  std::size_t hit = 0;
  for (std::size_t i = 0; i < a.size(); ++i) hit += a[i] == b[i];
  return static_cast<double>(hit) / static_cast<double>(a.size());
}

IntMatrix as_target_column(const Labels& labels) {
  IntMatrix t(static_cast<Eigen::Index>(labels.size()), 1);
  for (std::size_t i = 0; i < labels.size(); ++i) t(static_cast<Eigen::Index>(i), 0) = labels[i];
  return t;
}

std::vector<int> layer_dims(int input, const std::vector<int>& hidden, int output) {
  std::vector<int> dims{input};
  dims.insert(dims.end(), hidden.begin(), hidden.end());
  dims.push_back(output);
  return dims;
}

json save_net(const Mlp& net, const fs::path& dir, const std::string& prefix) {
  json layers = json::array();
  for (std::size_t l = 0; l < net.layer_count(); ++l) {
    const RowMatrixF w = net.weights[l].cast<float>();
    const Eigen::VectorXf b = net.biases[l].cast<float>();
    const std::string wf = fmt::format("{}w{}.f32", prefix, l), bf = fmt::format("{}b{}.f32", prefix, l);
    const auto wcrc = write_f32_blob(dir / wf, {w.data(), static_cast<std::size_t>(w.size())});
    const auto bcrc = write_f32_blob(dir / bf, {b.data(), static_cast<std::size_t>(b.size())});
    layers.push_back({{"weight", {{"file", wf}, {"shape", {w.rows(), w.cols()}}, {"crc32", wcrc}}},
                      {"bias", {{"file", bf}, {"shape", {b.size()}}, {"crc32", bcrc}}}});
  }
  return {{"dims", net.dims()}, {"head_sizes", net.head_sizes}, {"layers", layers}};
}

Mlp load_net(const json& spec, const fs::path& dir) {
  Mlp net;
  net.head_sizes = spec.at("head_sizes").get<std::vector<int>>();
  for (const auto& layer : spec.at("layers")) {
    const auto& w = layer.at("weight");
    const auto rows = w.at("shape")[0].get<std::size_t>(), cols = w.at("shape")[1].get<std::size_t>();
    auto wv = read_f32_blob(dir / w.at("file").get<std::string>(), rows * cols, w.at("crc32").get<uint32_t>());
    RowMatrixF wm(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    std::copy(wv.begin(), wv.end(), wm.data());
    const auto& b = layer.at("bias");
    auto bv = read_f32_blob(dir / b.at("file").get<std::string>(), rows, b.at("crc32").get<uint32_t>());
    net.weights.push_back(wm.cast<double>());
    net.biases.push_back(Eigen::Map<Eigen::VectorXf>(bv.data(), static_cast<Eigen::Index>(rows)).cast<double>());
  }
  if (net.weights.empty()) throw FormatError("checkpoint has no layers");
  if (net.dims() != spec.at("dims").get<std::vector<int>>()) throw FormatError("checkpoint dims disagree with blobs");
  return net;
}

}  // namespace

MlpModel train_mlp(const RowMatrixF& images, const Labels& labels, const MlpHyper& hyper) {
  if (static_cast<std::size_t>(images.rows()) != labels.size()) throw ValidationError("images and labels differ in count");
  if (labels.empty()) throw ValidationError("no training samples");
  if (*std::min_element(labels.begin(), labels.end()) < 0) throw ValidationError("labels must be non-negative");
  const int classes = *std::max_element(labels.begin(), labels.end()) + 1;
  if (std::set<int32_t>(labels.begin(), labels.end()).size() < 2) throw ValidationError("need at least 2 classes");

  MlpModel model;
  model.num_classes = classes;
  model.seed = hyper.seed;
  const auto split = train_test_split(labels.size(), hyper.test_fraction, derive_seed(hyper.seed, "split"));
  model.train_index = split.train;
  model.test_index = split.test;

  model.net = Mlp::init(layer_dims(static_cast<int>(images.cols()), hyper.hidden, classes), {classes},
                        derive_seed(hyper.seed, "init"));
  const RowMatrixF train_x = take_rows(images, split.train);
  const Labels train_y = take(labels, split.train);
  const MatrixD inputs = train_x.cast<double>().transpose();
  model.epoch_loss = train_network(model.net, inputs, as_target_column(train_y), hyper.sgd,
                                   derive_seed(hyper.seed, "sgd"));
  model.net.quantize_to_f32();

  model.train_accuracy = accuracy(predict_labels(model.net, train_x), train_y);
  if (!split.test.empty()) {
    model.test_accuracy = accuracy(predict_labels(model.net, take_rows(images, split.test)), take(labels, split.test));
  } else {
    model.test_accuracy = model.train_accuracy;
  }
  return model;
}

Labels predict_labels(const Mlp& net, const RowMatrixF& inputs) {
  Labels out;
  out.reserve(static_cast<std::size_t>(inputs.rows()));
  for (Eigen::Index start = 0; start < inputs.rows(); start += kRecordChunk) {
    const Eigen::Index len = std::min(kRecordChunk, inputs.rows() - start);
    const IntMatrix heads = predict_heads(net, inputs.middleRows(start, len).cast<double>().transpose());
    for (Eigen::Index i = 0; i < len; ++i) out.push_back(heads(i, 0));
  }
  return out;
}

std::vector<std::string> recordable_layers(const Mlp& net) {
  std::vector<std::string> ids;
  for (std::size_t l = 1; l < net.layer_count(); ++l) ids.push_back(fmt::format("hidden_{}", l));
  ids.emplace_back("logits");
  return ids;
}

ActivationBundle record_activations(const Mlp& net, const RowMatrixF& inputs,
                                    const std::vector<std::string>& layer_ids) {
  const auto available = recordable_layers(net);
  const auto wanted = layer_ids.empty() ? available : layer_ids;
  std::vector<std::size_t> positions;  // index into ForwardPass::activations
  for (const auto& id : wanted) {
    const auto it = std::find(available.begin(), available.end(), id);
    if (it == available.end()) throw ValidationError(fmt::format("unknown layer id '{}'", id));
    positions.push_back(static_cast<std::size_t>(it - available.begin()) + 1);
  }

  const Eigen::Index n = inputs.rows();
  ActivationBundle bundle;
  bundle.sample_count = static_cast<std::size_t>(n);
  for (std::size_t i = 0; i < wanted.size(); ++i) {
    const auto width = net.weights[positions[i] - 1].rows();
    bundle.layers.push_back({wanted[i], RowMatrixF(n, width)});
  }
  Labels outputs(static_cast<std::size_t>(n));
  const bool single_head = net.head_sizes.size() == 1;
  for (Eigen::Index start = 0; start < n; start += kRecordChunk) {
    const Eigen::Index len = std::min(kRecordChunk, n - start);
    const ForwardPass pass = forward(net, inputs.middleRows(start, len).cast<double>().transpose());
    for (std::size_t i = 0; i < wanted.size(); ++i) {
      bundle.layers[i].activations.middleRows(start, len) = pass.activations[positions[i]].transpose().cast<float>();
    }
    for (Eigen::Index s = 0; s < len; ++s) {
      outputs[static_cast<std::size_t>(start + s)] = static_cast<int32_t>(argmax_lowest(pass.logits().col(s)));
    }
  }
  if (single_head) bundle.model_outputs = std::move(outputs);
  return bundle;
}

void save_mlp(const MlpModel& model, const fs::path& dir) {
  fs::create_directories(dir);
  json header = save_net(model.net, dir, "");
  header["version"] = 1;
  header["kind"] = "mlp";
  header["num_classes"] = model.num_classes;
  header["seed"] = model.seed;
  header["train_accuracy"] = model.train_accuracy;
  header["test_accuracy"] = model.test_accuracy;
  header["epoch_loss"] = model.epoch_loss;
  header["train_index"] = model.train_index;
  header["test_index"] = model.test_index;
  std::ofstream out(dir / "mlp.json", std::ios::trunc);
  if (!out) throw Error(fmt::format("cannot write checkpoint in '{}'", dir.string()));
  out << header.dump(2) << '\n';
}

MlpModel load_mlp(const fs::path& dir) {
  std::ifstream in(dir / "mlp.json");
  if (!in) throw FormatError(fmt::format("missing checkpoint '{}'", (dir / "mlp.json").string()));
  try {
    const json header = json::parse(in);
    if (header.at("kind") != "mlp" || header.at("version") != 1) throw FormatError("not an mlp checkpoint");
    MlpModel model;
    model.net = load_net(header, dir);
    model.num_classes = header.at("num_classes").get<int>();
    model.seed = header.at("seed").get<uint64_t>();
    model.train_accuracy = header.at("train_accuracy").get<double>();
    model.test_accuracy = header.at("test_accuracy").get<double>();
    model.epoch_loss = header.at("epoch_loss").get<std::vector<double>>();
    model.train_index = header.at("train_index").get<IndexList>();
    model.test_index = header.at("test_index").get<IndexList>();
    return model;
  } catch (const json::exception& e) {
    throw FormatError(fmt::format("malformed checkpoint: {}", e.what()));
  }
}

MatrixD encode_concept_codes(const IntMatrix& concepts, const std::vector<int32_t>& cardinalities) {
  if (static_cast<std::size_t>(concepts.cols()) != cardinalities.size()) throw ValidationError("concept width mismatch");
  MatrixD enc(concepts.cols(), concepts.rows());
  for (Eigen::Index c = 0; c < concepts.cols(); ++c) {
    const double denom = std::max(1, cardinalities[static_cast<std::size_t>(c)] - 1);
    for (Eigen::Index s = 0; s < concepts.rows(); ++s) enc(c, s) = concepts(s, c) / denom;
  }
  return enc;
}

IntMatrix CbmModel::predict_concepts(const RowMatrixF& images) const {
  IntMatrix out(images.rows(), static_cast<Eigen::Index>(cardinalities.size()));
  for (Eigen::Index start = 0; start < images.rows(); start += kRecordChunk) {
    const Eigen::Index len = std::min(kRecordChunk, images.rows() - start);
    out.middleRows(start, len) = predict_heads(concept_net, images.middleRows(start, len).cast<double>().transpose());
  }
  return out;
}

Labels CbmModel::predict_from_concepts(const IntMatrix& concepts) const {
  if (static_cast<std::size_t>(concepts.cols()) != bottleneck_width()) {
    throw ValidationError(fmt::format("label network takes {} concepts, got {}", bottleneck_width(), concepts.cols()));
  }
  const IntMatrix heads = predict_heads(label_net, encode_concept_codes(concepts, cardinalities));
  return Labels(heads.data(), heads.data() + heads.size());
}

Labels CbmModel::predict(const RowMatrixF& images) const { return predict_from_concepts(predict_concepts(images)); }

CbmResult train_cbm_sequential(const RowMatrixF& images, const ConceptTable& concepts, const Labels& labels,
                               const CbmHyper& hyper) {
  concepts.validate(static_cast<std::size_t>(images.rows()));
  if (labels.size() != static_cast<std::size_t>(images.rows())) throw ValidationError("labels and images differ in count");
  if ((concepts.values.array() == kMissing).any()) {
    throw ValidationError("sequential bottleneck training needs concept labels for every training sample");
  }
  CbmResult result;
  CbmModel& model = result.model;
  model.cardinalities = concepts.cardinalities;
  const int bottleneck = static_cast<int>(concepts.concept_count());
  std::vector<int> heads(concepts.cardinalities.begin(), concepts.cardinalities.end());
  const int head_total = std::accumulate(heads.begin(), heads.end(), 0);

  // Step 1: inputs -> concepts.
  const MatrixD inputs = images.cast<double>().transpose();
  model.concept_net = Mlp::init(layer_dims(static_cast<int>(images.cols()), hyper.concept_hidden, head_total), heads,
                                derive_seed(hyper.seed, "concept_init"));
  train_network(model.concept_net, inputs, concepts.values, hyper.concept_sgd, derive_seed(hyper.seed, "concept_sgd"));
  model.concept_net.quantize_to_f32();
  const IntMatrix predicted = model.predict_concepts(images);
  for (int c = 0; c < bottleneck; ++c) {
    result.concept_train_accuracy.push_back((predicted.col(c).array() == concepts.values.col(c).array()).cast<double>().mean());
  }

  // Step 2: predicted concepts -> labels.
  const int classes = *std::max_element(labels.begin(), labels.end()) + 1;
  model.label_net = Mlp::init(layer_dims(bottleneck, hyper.label_hidden, classes), {classes},
                              derive_seed(hyper.seed, "label_init"));
  train_network(model.label_net, encode_concept_codes(predicted, model.cardinalities), as_target_column(labels),
                hyper.label_sgd, derive_seed(hyper.seed, "label_sgd"));
  model.label_net.quantize_to_f32();
  result.task_train_accuracy = accuracy(model.predict_from_concepts(predicted), labels);
  return result;
}

}  // namespace cme::ref
