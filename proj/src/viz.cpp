#include "cme/viz.hpp"

#include <fstream>

#include <Eigen/Eigenvalues>
#include <fmt/format.h>
#include <spdlog/spdlog.h>

namespace cme::viz {

MatrixD project_2d(const MatrixD& activations) {
  if (activations.cols() < 2) throw ValidationError(fmt::format("projection needs >= 2 features, got {}", activations.cols()));
  if (activations.rows() < 3) throw ValidationError(fmt::format("projection needs >= 3 samples, got {}", activations.rows()));
  const MatrixD centered = activations.rowwise() - activations.colwise().mean();
  const MatrixD cov = centered.transpose() * centered / static_cast<double>(activations.rows() - 1);
  if (cov.trace() <= 0.0) {
    spdlog::warn("projection input has zero variance; returning zero coordinates");
    return MatrixD::Zero(activations.rows(), 2);
  }
  Eigen::SelfAdjointEigenSolver<MatrixD> eig(cov);
  if (eig.info() != Eigen::Success) throw Error("eigendecomposition failed");
  const Eigen::Index m = cov.rows();
  MatrixD basis(m, 2);
  for (Eigen::Index j = 0; j < 2; ++j) {
    VectorD v = eig.eigenvectors().col(m - 1 - j);
    Eigen::Index at = 0;
    v.cwiseAbs().maxCoeff(&at);
    if (v(at) < 0) v = -v;
    basis.col(j) = v;
  }
  return centered * basis;
}

void write_projection_csv(const std::filesystem::path& file, const MatrixD& coords, const Labels& concept_values) {
  if (coords.cols() != 2 || static_cast<std::size_t>(coords.rows()) != concept_values.size()) {
    throw ValidationError("coordinates and concept values disagree in shape");
  }
  std::ofstream out(file, std::ios::trunc);
  if (!out) throw Error(fmt::format("cannot write '{}'", file.string()));
  out << "x,y,concept_value\n";
  for (Eigen::Index r = 0; r < coords.rows(); ++r) {
    out << fmt::format("{:.9g},{:.9g},{}\n", coords(r, 0), coords(r, 1), concept_values[static_cast<std::size_t>(r)]);
  }
}

namespace {

std::string escape(const std::string& s) {
  std::string out;
  for (char ch : s) {
    if (ch == '"' || ch == '\\') out.push_back('\\');
    out.push_back(ch);
  }
  return out;
}

}  // namespace

std::string export_tree_dot(const learn::TreeModel& tree, const std::vector<std::string>& concept_names,
                            const std::vector<std::string>& class_names) {
  if (tree.nodes.empty()) throw ValidationError("tree has no nodes");
  std::string dot = "digraph qhat {\n  node [shape=box];\n";
  for (std::size_t i = 0; i < tree.nodes.size(); ++i) {
    const auto& n = tree.nodes[i];
    std::string label;
    if (n.is_leaf()) {
      const auto cls = static_cast<std::size_t>(n.label);
      label = cls < class_names.size() ? class_names[cls] : fmt::format("class {}", n.label);
      dot += fmt::format("  n{} [label=\"{}\", style=rounded];\n", i, escape(label));
    } else {
      const auto f = static_cast<std::size_t>(n.feature);
      const std::string name = f < concept_names.size() ? concept_names[f] : fmt::format("x{}", n.feature);
      dot += fmt::format("  n{} [label=\"{} ≤ {:g}\"];\n", i, escape(name), n.threshold);
    }
  }
  for (std::size_t i = 0; i < tree.nodes.size(); ++i) {
    const auto& n = tree.nodes[i];
    if (n.is_leaf()) continue;
    dot += fmt::format("  n{} -> n{} [label=\"yes\"];\n  n{} -> n{} [label=\"no\"];\n", i, n.left, i, n.right);
  }
  dot += "}\n";
  return dot;
}

}  // namespace cme::viz
