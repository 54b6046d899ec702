#pragma once

#include <set>
#include <vector>

#include "cme/common.hpp"

namespace cme::learn {

struct TreeParams {
  int max_depth = -1;  // negative: unlimited
  int min_leaf = 1;
};

struct TreeNode {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0.0;  // go left when x[feature] <= threshold
  int left = -1;
  int right = -1;
  int32_t label = 0;  // majority class code
  std::size_t samples = 0;
  std::vector<std::size_t> class_counts;  // indexed like TreeModel::classes

  bool is_leaf() const { return feature < 0; }
};

/// CART classification tree, nodes in pre-order with the root at index 0.
struct TreeModel {
  std::vector<TreeNode> nodes;
  std::vector<int32_t> classes;
  int feature_dim = 0;

  Labels predict(const MatrixD& features) const;
  std::set<int> features_used() const;
  int depth() const;
  std::size_t leaf_count() const;
};

/// Gini impurity scaled by node size: n - sum_c count_c^2 / n.
double weighted_gini(const std::vector<std::size_t>& counts, std::size_t n);

/// Greedy CART. Each split minimises the summed weighted Gini of the children over
/// all (feature, threshold) pairs, threshold being a value present in the node; ties
/// go to the lower feature, then the lower threshold. Impure nodes split whenever
/// some split satisfies min_leaf and max_depth. Splits whose leaves all predict the
/// same class are then collapsed into one leaf, which leaves predictions unchanged.
TreeModel fit_tree(const MatrixD& features, const Labels& labels, const TreeParams& params = {});

}  // namespace cme::learn
