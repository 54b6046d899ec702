#pragma once

#include <memory>
#include <variant>
#include <vector>

#include <Eigen/Sparse>

#include "cme/common.hpp"

namespace cme::learn {

struct KnnAffinity {
  int k = 7;
};

struct RbfAffinity {
  double gamma = 20.0;
};

struct SpreadingParams {
  std::variant<KnnAffinity, RbfAffinity> affinity = KnnAffinity{};
  double alpha = 0.2;  // weight on the propagated term; 1 - alpha clamps to the seeds
  int max_iter = 30;
  double tol = 1e-3;

  void validate() const;
};

using SparseRowMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;

/// Graph over a fixed node set: S = D^-1/2 W D^-1/2 with W symmetric and zero-diagonal.
/// One graph serves every concept fitted on the same layer.
struct SpreadingGraph {
  std::shared_ptr<const MatrixD> nodes;  // [n x m]
  SparseRowMatrix normalized;
  std::size_t isolated_nodes = 0;
};

/// Dense RBF graphs are capped at this many nodes.
inline constexpr std::size_t kMaxRbfNodes = 8192;

SpreadingGraph build_spreading_graph(const MatrixD& features, const SpreadingParams& params);

/// Transductive labels on the graph nodes; unseen points take the label of their
/// nearest node (ties toward the lower node index).
struct SpreadingModel {
  std::shared_ptr<const MatrixD> nodes;
  Labels node_labels;
  std::vector<int32_t> classes;

  Labels predict(const MatrixD& features) const;
};

struct SpreadingFit {
  SpreadingModel model;
  int iterations = 0;
  bool converged = false;
  bool fallback_used = false;      // some nodes were unreachable from every seed
  std::vector<double> max_deltas;  // ||F_t - F_{t-1}||_inf per iteration
};

/// labels uses kMissing for unlabelled nodes; at least one node must be labelled.
SpreadingFit fit_label_spreading(const SpreadingGraph& graph, const Labels& labels, const SpreadingParams& params);
SpreadingFit fit_label_spreading(const MatrixD& features, const Labels& labels, const SpreadingParams& params);

/// k nearest reference rows per query row by Euclidean distance; ties toward the
/// lower reference index. exclude_self drops reference i for query i.
std::vector<std::vector<std::size_t>> nearest_neighbors(const MatrixD& queries, const MatrixD& refs, int k,
                                                        bool exclude_self);

}  // namespace cme::learn
