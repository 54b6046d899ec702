#include "cme/label_spreading.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

namespace cme::learn {

namespace {

constexpr Eigen::Index kQueryBlock = 256;

}  // namespace

void SpreadingParams::validate() const {
  if (!(alpha > 0.0 && alpha < 1.0)) throw ValidationError(fmt::format("alpha must lie in (0, 1), got {}", alpha));
  if (const auto* knn = std::get_if<KnnAffinity>(&affinity); knn && knn->k < 1) {
    throw ValidationError("knn affinity needs k ≥ 1");
  }
  if (const auto* rbf = std::get_if<RbfAffinity>(&affinity); rbf && rbf->gamma <= 0.0) {
    throw ValidationError("rbf gamma must be positive");
  }
  if (max_iter < 1) throw ValidationError("max_iter must be ≥ 1");
  if (tol <= 0.0) throw ValidationError("tol must be positive");
}

std::vector<std::vector<std::size_t>> nearest_neighbors(const MatrixD& queries, const MatrixD& refs, int k,
                                                        bool exclude_self) {
  if (queries.cols() != refs.cols()) {
    throw ValidationError(fmt::format("feature width {} differs from reference width {}", queries.cols(), refs.cols()));
  }
  const Eigen::Index n_ref = refs.rows();
  const auto available = static_cast<std::size_t>(n_ref) - (exclude_self ? 1 : 0);
  const std::size_t keep = std::min<std::size_t>(static_cast<std::size_t>(std::max(k, 0)), available);
  const VectorD ref_norms = refs.rowwise().squaredNorm();

  std::vector<std::vector<std::size_t>> out(static_cast<std::size_t>(queries.rows()));
  std::vector<std::size_t> order(static_cast<std::size_t>(n_ref));
  for (Eigen::Index start = 0; start < queries.rows(); start += kQueryBlock) {
    const Eigen::Index len = std::min(kQueryBlock, queries.rows() - start);
    const auto block = queries.middleRows(start, len);
    MatrixD dist = (-2.0 * block * refs.transpose());
    dist.colwise() += block.rowwise().squaredNorm();
    dist.rowwise() += ref_norms.transpose();
    for (Eigen::Index i = 0; i < len; ++i) {
      const Eigen::Index q = start + i;
      std::iota(order.begin(), order.end(), std::size_t{0});
      if (exclude_self) order.erase(order.begin() + q);
      auto less = [&](std::size_t a, std::size_t b) {
        const double da = std::max(0.0, dist(i, static_cast<Eigen::Index>(a)));
        const double db = std::max(0.0, dist(i, static_cast<Eigen::Index>(b)));
        return da < db || (da == db && a < b);
      };
      std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(keep),
                        order.begin() + static_cast<std::ptrdiff_t>(available), less);
      out[static_cast<std::size_t>(q)].assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(keep));
      if (exclude_self) order.resize(static_cast<std::size_t>(n_ref));
    }
  }
  return out;
}

SpreadingGraph build_spreading_graph(const MatrixD& features, const SpreadingParams& params) {
  params.validate();
  const Eigen::Index n = features.rows();
  if (n == 0) throw ValidationError("cannot build a graph over zero nodes");

  SpreadingGraph graph;
  graph.nodes = std::make_shared<const MatrixD>(features);
  std::vector<Eigen::Triplet<double>> triplets;

  if (const auto* knn = std::get_if<KnnAffinity>(&params.affinity)) {
    // Directed k-NN connectivity, symmetrised as (A + A^T) / 2.
    const auto neighbours = nearest_neighbors(features, features, knn->k, /*exclude_self=*/true);
    triplets.reserve(neighbours.size() * static_cast<std::size_t>(knn->k) * 2);
    for (std::size_t i = 0; i < neighbours.size(); ++i) {
      for (auto j : neighbours[i]) {
        triplets.emplace_back(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j), 0.5);
        triplets.emplace_back(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i), 0.5);
      }
    }
  } else {
    const double gamma = std::get<RbfAffinity>(params.affinity).gamma;
    if (static_cast<std::size_t>(n) > kMaxRbfNodes) {
      throw ValidationError(fmt::format("rbf affinity is dense; {} nodes exceeds the limit of {}", n, kMaxRbfNodes));
    }
    const VectorD norms = features.rowwise().squaredNorm();
    MatrixD d2 = -2.0 * features * features.transpose();
    d2.colwise() += norms;
    d2.rowwise() += norms.transpose();
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = 0; j < n; ++j) {
        if (i == j) continue;
        const double w = std::exp(-gamma * std::max(0.0, d2(i, j)));
        if (w > 0.0) triplets.emplace_back(i, j, w);
      }
    }
  }

  SparseRowMatrix w(n, n);
  w.setFromTriplets(triplets.begin(), triplets.end());  // duplicates are summed
  VectorD inv_sqrt_degree(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double d = w.row(i).sum();
    if (d > 0.0) {
      inv_sqrt_degree(i) = 1.0 / std::sqrt(d);
    } else {
      inv_sqrt_degree(i) = 0.0;
      ++graph.isolated_nodes;
    }
  }
  graph.normalized = inv_sqrt_degree.asDiagonal() * w * inv_sqrt_degree.asDiagonal();
  return graph;
}

SpreadingFit fit_label_spreading(const SpreadingGraph& graph, const Labels& labels, const SpreadingParams& params) {
  params.validate();
  const auto n = static_cast<std::size_t>(graph.nodes->rows());
  if (labels.size() != n) throw ValidationError(fmt::format("{} labels for {} graph nodes", labels.size(), n));

  std::set<int32_t> class_set;
  for (auto v : labels) {
    if (v != kMissing) class_set.insert(v);
  }
  if (class_set.empty()) throw ValidationError("label spreading needs at least one labelled sample");
  SpreadingFit fit;
  fit.model.nodes = graph.nodes;
  fit.model.classes.assign(class_set.begin(), class_set.end());
  const auto n_classes = static_cast<Eigen::Index>(fit.model.classes.size());

  MatrixD seeds = MatrixD::Zero(static_cast<Eigen::Index>(n), n_classes);
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] == kMissing) continue;
    const auto c = std::lower_bound(fit.model.classes.begin(), fit.model.classes.end(), labels[i]) - fit.model.classes.begin();
    seeds(static_cast<Eigen::Index>(i), c) = 1.0;
  }

  MatrixD f = seeds;
  const MatrixD clamp = (1.0 - params.alpha) * seeds;
  for (int it = 0; it < params.max_iter; ++it) {
    MatrixD next = params.alpha * (graph.normalized * f) + clamp;
    const double delta = (next - f).cwiseAbs().maxCoeff();
    f = std::move(next);
    fit.iterations = it + 1;
    fit.max_deltas.push_back(delta);
    if (delta < params.tol) {
      fit.converged = true;
      break;
    }
  }

  fit.model.node_labels.resize(n);
  std::vector<std::size_t> unreached;
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = f.row(static_cast<Eigen::Index>(i));
    if (row.maxCoeff() <= 0.0) {
      unreached.push_back(i);
      continue;
    }
    fit.model.node_labels[i] = fit.model.classes[argmax_lowest(row)];
  }
  if (!unreached.empty()) {
    // Nodes the propagation never reached take the label of the nearest reached node.
    fit.fallback_used = true;
    spdlog::warn("label spreading: {} of {} nodes unreached from labelled seeds; using nearest reached node",
                 unreached.size(), n);
    std::vector<std::size_t> reached;
    reached.reserve(n - unreached.size());
    for (std::size_t i = 0, u = 0; i < n; ++i) {
      if (u < unreached.size() && unreached[u] == i) {
        ++u;
      } else {
        reached.push_back(i);
      }
    }
    const MatrixD reached_features = (*graph.nodes)(reached, Eigen::all);
    const MatrixD query = (*graph.nodes)(unreached, Eigen::all);
    const auto nearest = nearest_neighbors(query, reached_features, 1, false);
    for (std::size_t q = 0; q < unreached.size(); ++q) {
      fit.model.node_labels[unreached[q]] = fit.model.node_labels[reached[nearest[q].front()]];
    }
  }
  return fit;
}

SpreadingFit fit_label_spreading(const MatrixD& features, const Labels& labels, const SpreadingParams& params) {
  return fit_label_spreading(build_spreading_graph(features, params), labels, params);
}

Labels SpreadingModel::predict(const MatrixD& features) const {
  const auto nearest = nearest_neighbors(features, *nodes, 1, false);
  Labels out;
  out.reserve(nearest.size());
  for (const auto& nn : nearest) out.push_back(node_labels[nn.front()]);
  return out;
}

}  // namespace cme::learn
