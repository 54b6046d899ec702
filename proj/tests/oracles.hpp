#pragma once

// Independent reference computations shared by the unit tests and the acceptance run.

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <vector>

#include "cme/logistic.hpp"
#include "cme/metrics.hpp"
#include "cme/mlp.hpp"
#include "cme/tree.hpp"

namespace cme::oracle {

inline double relative_error(double analytic, double numeric) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / scale;
}

struct GradientProbe {
  int probes = 0;
  double max_relative_error = 0.0;
};

/// Central differences on random parameter coordinates of a small random MLP.
inline GradientProbe mlp_gradient_probe(uint64_t seed, int probes = 25) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto net = ref::Mlp::init({6, 5, 4, 3}, {3}, seed);
  MatrixD x(6, 5);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = normal(rng);
  IntMatrix y(5, 1);
  for (int i = 0; i < 5; ++i) y(i, 0) = static_cast<int32_t>(rng() % 3);

  ref::Gradients grad;
  ref::loss_and_gradient(net, x, y, &grad);
  const VectorD analytic = ref::flatten_gradients(grad);
  const VectorD theta = ref::flatten_parameters(net);
  GradientProbe out;
  const double h = 1e-6;
  for (int p = 0; p < probes; ++p) {
    const auto j = static_cast<Eigen::Index>(rng() % static_cast<uint64_t>(theta.size()));
    VectorD plus = theta, minus = theta;
    plus(j) += h;
    minus(j) -= h;
    ref::assign_parameters(net, plus);
    const double lp = ref::loss_and_gradient(net, x, y, nullptr);
    ref::assign_parameters(net, minus);
    const double lm = ref::loss_and_gradient(net, x, y, nullptr);
    ref::assign_parameters(net, theta);
    const double numeric = (lp - lm) / (2 * h);
    // Coordinates with a vanishing gradient (dead units) give a 0/0 ratio; the absolute
    // difference is what matters there.
    const double err = std::max(std::abs(analytic(j)), std::abs(numeric)) < 1e-7
                           ? std::abs(analytic(j) - numeric)
                           : relative_error(analytic(j), numeric);
    out.max_relative_error = std::max(out.max_relative_error, err);
    ++out.probes;
  }
  return out;
}

inline GradientProbe logistic_gradient_probe(uint64_t seed, int probes = 25) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const int n = 12, m = 4, k = 3;
  MatrixD x(n, m), w(k, m);
  VectorD b(k);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = normal(rng);
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = normal(rng);
  for (Eigen::Index i = 0; i < b.size(); ++i) b(i) = normal(rng);
  std::vector<int> t(n);
  for (auto& v : t) v = static_cast<int>(rng() % k);
  const double l2 = 0.1;
  MatrixD gw;
  VectorD gb;
  learn::logistic_objective(w, b, x, t, l2, &gw, &gb);
  GradientProbe out;
  const double h = 1e-6;
  for (int p = 0; p < probes; ++p) {
    const auto j = static_cast<Eigen::Index>(rng() % static_cast<uint64_t>(w.size() + b.size()));
    MatrixD wp = w, wm = w;
    VectorD bp = b, bm = b;
    double analytic;
    if (j < w.size()) {
      wp.data()[j] += h;
      wm.data()[j] -= h;
      analytic = gw.data()[j];
    } else {
      bp(j - w.size()) += h;
      bm(j - w.size()) -= h;
      analytic = gb(j - w.size());
    }
    const double numeric = (learn::logistic_objective(wp, bp, x, t, l2, nullptr, nullptr) -
                            learn::logistic_objective(wm, bm, x, t, l2, nullptr, nullptr)) /
                           (2 * h);
    out.max_relative_error = std::max(out.max_relative_error, relative_error(analytic, numeric));
    ++out.probes;
  }
  return out;
}

/// CART grown by scoring every (feature, candidate value) pair from scratch. Same
/// objective and tie order as the library; leaves hold class positions.
class BruteForceTree {
 public:
  BruteForceTree(const MatrixD& x, const Labels& y, int min_leaf = 1) : x_(x), min_leaf_(min_leaf) {
    classes_ = y;
    std::sort(classes_.begin(), classes_.end());
    classes_.erase(std::unique(classes_.begin(), classes_.end()), classes_.end());
    for (auto v : y) t_.push_back(static_cast<int>(std::lower_bound(classes_.begin(), classes_.end(), v) - classes_.begin()));
    std::vector<std::size_t> rows(y.size());
    for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
    root_ = grow(rows);
  }

  int32_t predict(const Eigen::RowVectorXd& row) const {
    int at = root_;
    while (nodes_[static_cast<std::size_t>(at)].feature >= 0) {
      const auto& n = nodes_[static_cast<std::size_t>(at)];
      at = row(n.feature) <= n.threshold ? n.left : n.right;
    }
    return classes_[static_cast<std::size_t>(nodes_[static_cast<std::size_t>(at)].label)];
  }

 private:
  struct Node {
    int feature = -1;
    double threshold = 0.0;
    int left = -1, right = -1, label = 0;
  };

  double impurity(const std::vector<std::size_t>& rows) const {
    if (rows.empty()) return 0.0;
    std::vector<double> counts(classes_.size(), 0.0);
    for (auto r : rows) counts[static_cast<std::size_t>(t_[r])] += 1.0;
    double sq = 0.0;
    for (double c : counts) sq += c * c;
    return static_cast<double>(rows.size()) - sq / static_cast<double>(rows.size());
  }

  int grow(const std::vector<std::size_t>& rows) {
    std::vector<std::size_t> counts(classes_.size(), 0);
    for (auto r : rows) ++counts[static_cast<std::size_t>(t_[r])];
    Node node;
    node.label = static_cast<int>(std::max_element(counts.begin(), counts.end()) - counts.begin());
    const int index = static_cast<int>(nodes_.size());
    nodes_.push_back(node);
    if (counts[static_cast<std::size_t>(node.label)] == rows.size()) return index;

    double best = std::numeric_limits<double>::infinity();
    int best_f = -1;
    double best_t = 0.0;
    for (Eigen::Index f = 0; f < x_.cols(); ++f) {
      std::vector<double> values;
      for (auto r : rows) values.push_back(x_(static_cast<Eigen::Index>(r), f));
      std::sort(values.begin(), values.end());
      values.erase(std::unique(values.begin(), values.end()), values.end());
      for (std::size_t v = 0; v + 1 < values.size(); ++v) {
        std::vector<std::size_t> l, r;
        for (auto row : rows) (x_(static_cast<Eigen::Index>(row), f) <= values[v] ? l : r).push_back(row);
        if (static_cast<int>(l.size()) < min_leaf_ || static_cast<int>(r.size()) < min_leaf_) continue;
        const double score = impurity(l) + impurity(r);
        if (score < best) {
          best = score;
          best_f = static_cast<int>(f);
          best_t = values[v];
        }
      }
    }
    if (best_f < 0) return index;
    std::vector<std::size_t> l, r;
    for (auto row : rows) (x_(static_cast<Eigen::Index>(row), best_f) <= best_t ? l : r).push_back(row);
    nodes_[static_cast<std::size_t>(index)].feature = best_f;
    nodes_[static_cast<std::size_t>(index)].threshold = best_t;
    const int li = grow(l);
    nodes_[static_cast<std::size_t>(index)].left = li;
    const int ri = grow(r);
    nodes_[static_cast<std::size_t>(index)].right = ri;
    return index;
  }

  const MatrixD& x_;
  int min_leaf_;
  Labels classes_;
  std::vector<int> t_;
  std::vector<Node> nodes_;
  int root_ = 0;
};

/// Random instance with small integer features (ties and duplicates are common).
struct TreeInstance {
  MatrixD x;
  Labels y;
  MatrixD queries;
};

inline TreeInstance random_tree_instance(std::mt19937_64& rng) {
  const int n = 5 + static_cast<int>(rng() % 46);
  const int f = 3;
  const int levels = 2 + static_cast<int>(rng() % 5);
  const int classes = 2 + static_cast<int>(rng() % 3);
  TreeInstance inst{MatrixD(n, f), Labels(static_cast<std::size_t>(n)), MatrixD(40, f)};
  for (Eigen::Index i = 0; i < inst.x.size(); ++i) inst.x.data()[i] = static_cast<double>(rng() % levels);
  for (auto& v : inst.y) v = static_cast<int32_t>(rng() % classes);
  for (Eigen::Index i = 0; i < inst.queries.size(); ++i) {
    inst.queries.data()[i] = static_cast<double>(rng() % (levels + 2)) - 1.0;
  }
  return inst;
}

/// True when the library tree and the brute-force tree agree on training rows and queries.
inline bool tree_matches_oracle(const TreeInstance& inst, int min_leaf = 1) {
  const auto tree = learn::fit_tree(inst.x, inst.y, {.max_depth = -1, .min_leaf = min_leaf});
  const BruteForceTree oracle(inst.x, inst.y, min_leaf);
  const auto on_train = tree.predict(inst.x);
  const auto on_queries = tree.predict(inst.queries);
  for (Eigen::Index i = 0; i < inst.x.rows(); ++i) {
    if (on_train[static_cast<std::size_t>(i)] != oracle.predict(inst.x.row(i))) return false;
  }
  for (Eigen::Index i = 0; i < inst.queries.rows(); ++i) {
    if (on_queries[static_cast<std::size_t>(i)] != oracle.predict(inst.queries.row(i))) return false;
  }
  return true;
}

/// values[m] by counting, for every m separately, the rows with at least m relevant mismatches.
inline std::vector<double> mpo_direct(const IntMatrix& truth, const IntMatrix& pred, const std::vector<bool>& mask) {
  const auto n = truth.rows();
  const auto k = truth.cols();
  std::vector<double> out;
  for (Eigen::Index m = 0; m <= k; ++m) {
    Eigen::Index hits = 0;
    for (Eigen::Index s = 0; s < n; ++s) {
      Eigen::Index err = 0;
      for (Eigen::Index c = 0; c < k; ++c) err += mask[static_cast<std::size_t>(c)] && truth(s, c) != pred(s, c);
      hits += err >= m;
    }
    out.push_back(static_cast<double>(hits) / static_cast<double>(n));
  }
  return out;
}

struct MpoInstance {
  IntMatrix truth, pred;
  std::vector<bool> mask;
};

inline MpoInstance random_mpo_instance(std::mt19937_64& rng) {
  const auto n = static_cast<Eigen::Index>(1 + rng() % 50);
  const auto k = static_cast<Eigen::Index>(1 + rng() % 10);
  MpoInstance inst{IntMatrix(n, k), IntMatrix(n, k), std::vector<bool>(static_cast<std::size_t>(k))};
  const double flip = static_cast<double>(rng() % 100) / 100.0;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (Eigen::Index i = 0; i < inst.truth.size(); ++i) {
    inst.truth.data()[i] = static_cast<int32_t>(rng() % 4);
    inst.pred.data()[i] = u(rng) < flip ? static_cast<int32_t>(rng() % 4) : inst.truth.data()[i];
  }
  for (std::size_t c = 0; c < inst.mask.size(); ++c) inst.mask[c] = (rng() % 3) != 0;
  return inst;
}

struct MpoCheck {
  bool equal = true;
  bool monotone = true;
  bool starts_at_one = true;
};

inline MpoCheck check_mpo(const MpoInstance& inst) {
  const auto curve = metrics::mpo_curve(inst.truth, inst.pred, inst.mask);
  const auto expected = mpo_direct(inst.truth, inst.pred, inst.mask);
  MpoCheck out;
  out.equal = curve.values == expected;
  out.starts_at_one = !curve.values.empty() && curve.values.front() == 1.0;
  for (std::size_t m = 1; m < curve.values.size(); ++m) out.monotone &= curve.values[m] <= curve.values[m - 1];
  return out;
}

}  // namespace cme::oracle

#include "cme/extraction.hpp"
#include "cme/intervention.hpp"

namespace cme::oracle {

/// Labels depend on concepts 0 and 1; p̂ gets concept 0 wrong on a share of rows.
struct PlantedIntervention {
  intervention::InterventionData data;
  std::vector<int32_t> cardinalities;
};

inline PlantedIntervention planted_intervention(uint64_t seed, std::size_t n_train = 600, std::size_t n_test = 400,
                                                double noise = 0.35) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  PlantedIntervention out;
  out.cardinalities = {3, 2, 4, 2};
  auto make = [&](std::size_t n, IntMatrix& truth, IntMatrix& pred, Labels& y) {
    truth.resize(static_cast<Eigen::Index>(n), 4);
    for (Eigen::Index i = 0; i < truth.rows(); ++i) {
      for (Eigen::Index c = 0; c < 4; ++c) {
        truth(i, c) = static_cast<int32_t>(rng() % static_cast<uint64_t>(out.cardinalities[static_cast<std::size_t>(c)]));
      }
    }
    pred = truth;
    for (Eigen::Index i = 0; i < pred.rows(); ++i) {
      if (u(rng) < noise) pred(i, 0) = (truth(i, 0) + 1 + static_cast<int32_t>(rng() % 2)) % 3;
    }
    y.resize(n);
    for (Eigen::Index i = 0; i < truth.rows(); ++i) y[static_cast<std::size_t>(i)] = truth(i, 0) * 2 + truth(i, 1);
  };
  make(n_train, out.data.truth_train, out.data.predicted_train, out.data.targets_train);
  make(n_test, out.data.truth_test, out.data.predicted_test, out.data.targets_test);
  return out;
}

inline double accuracy(const Labels& a, const Labels& b) {
  std::size_t hit = 0;
  for (std::size_t i = 0; i < a.size(); ++i) hit += a[i] == b[i];
  return a.empty() ? 0.0 : static_cast<double>(hit) / static_cast<double>(a.size());
}

/// Accuracy of a q̂ fitted and scored on ground-truth concepts.
inline double ground_truth_qhat_accuracy(const PlantedIntervention& p, const extract::QHatSpec& spec) {
  const auto q = extract::extract_qhat(p.data.truth_train, p.data.targets_train, p.cardinalities, spec);
  return accuracy(q.predict(p.data.truth_test), p.data.targets_test);
}

}  // namespace cme::oracle
