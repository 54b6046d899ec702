#include "cme/tree.hpp"

#include <algorithm>
#include <limits>
#include <numeric>

#include <fmt/format.h>

namespace cme::learn {

namespace {

struct Split {
  int feature = -1;
  double threshold = 0.0;
  double score = std::numeric_limits<double>::infinity();
};

class TreeBuilder {
 public:
  TreeBuilder(const MatrixD& x, std::vector<int> targets, std::size_t n_classes, const TreeParams& params)
      : x_(x), targets_(std::move(targets)), n_classes_(n_classes), params_(params) {}

  int grow(std::vector<std::size_t>& rows, int depth, TreeModel& tree) {
    TreeNode node;
    node.samples = rows.size();
    node.class_counts.assign(n_classes_, 0);
    for (auto r : rows) ++node.class_counts[static_cast<std::size_t>(targets_[r])];
    node.label = static_cast<int32_t>(std::max_element(node.class_counts.begin(), node.class_counts.end()) -
                                      node.class_counts.begin());
    const int index = static_cast<int>(tree.nodes.size());
    tree.nodes.push_back(node);

    const bool pure = node.class_counts[static_cast<std::size_t>(node.label)] == rows.size();
    const bool depth_left = params_.max_depth < 0 || depth < params_.max_depth;
    if (pure || !depth_left) return index;
    const Split best = find_split(rows);
    if (best.feature < 0) return index;

    std::vector<std::size_t> left, right;
    for (auto r : rows) {
      (x_(static_cast<Eigen::Index>(r), best.feature) <= best.threshold ? left : right).push_back(r);
    }
    rows.clear();
    rows.shrink_to_fit();
    tree.nodes[static_cast<std::size_t>(index)].feature = best.feature;
    tree.nodes[static_cast<std::size_t>(index)].threshold = best.threshold;
    const int l = grow(left, depth + 1, tree);
    tree.nodes[static_cast<std::size_t>(index)].left = l;
    const int r = grow(right, depth + 1, tree);
    tree.nodes[static_cast<std::size_t>(index)].right = r;
    return index;
  }

 private:
  Split find_split(const std::vector<std::size_t>& rows) const {
    Split best;
    const std::size_t n = rows.size();
    const auto min_leaf = static_cast<std::size_t>(std::max(1, params_.min_leaf));
    if (n < 2 * min_leaf) return best;
    std::vector<std::size_t> sorted = rows;
    std::vector<std::size_t> left_counts(n_classes_), right_counts(n_classes_);
    for (Eigen::Index f = 0; f < x_.cols(); ++f) {
      std::stable_sort(sorted.begin(), sorted.end(), [&](std::size_t a, std::size_t b) {
        return x_(static_cast<Eigen::Index>(a), f) < x_(static_cast<Eigen::Index>(b), f);
      });
      std::fill(left_counts.begin(), left_counts.end(), 0);
      std::fill(right_counts.begin(), right_counts.end(), 0);
      for (auto r : sorted) ++right_counts[static_cast<std::size_t>(targets_[r])];
      for (std::size_t i = 0; i + 1 < n; ++i) {
        const auto cls = static_cast<std::size_t>(targets_[sorted[i]]);
        ++left_counts[cls];
        --right_counts[cls];
        const double here = x_(static_cast<Eigen::Index>(sorted[i]), f);
        const double next = x_(static_cast<Eigen::Index>(sorted[i + 1]), f);
        if (!(here < next)) continue;
        const std::size_t n_left = i + 1, n_right = n - n_left;
        if (n_left < min_leaf || n_right < min_leaf) continue;
        const double score = weighted_gini(left_counts, n_left) + weighted_gini(right_counts, n_right);
        if (score < best.score) best = {static_cast<int>(f), here, score};
      }
    }
    return best;
  }

  const MatrixD& x_;
  std::vector<int> targets_;
  std::size_t n_classes_;
  TreeParams params_;
};

// Copies the subtree at `index` in pre-order, replacing every split whose leaves all
// predict one class by a single leaf.
int collapse(const std::vector<TreeNode>& in, int index, std::vector<TreeNode>& out) {
  const int at = static_cast<int>(out.size());
  out.push_back(in[static_cast<std::size_t>(index)]);
  const TreeNode& src = in[static_cast<std::size_t>(index)];
  if (src.is_leaf()) return at;
  const int l = collapse(in, src.left, out);
  const int r = collapse(in, src.right, out);
  const TreeNode& left = out[static_cast<std::size_t>(l)];
  const TreeNode& right = out[static_cast<std::size_t>(r)];
  if (left.is_leaf() && right.is_leaf() && left.label == right.label) {
    const int32_t label = left.label;
    out.resize(static_cast<std::size_t>(at) + 1);
    TreeNode& node = out.back();
    node.feature = -1;
    node.threshold = 0.0;
    node.left = node.right = -1;
    node.label = label;
    return at;
  }
  out[static_cast<std::size_t>(at)].left = l;
  out[static_cast<std::size_t>(at)].right = r;
  return at;
}

}  // namespace

double weighted_gini(const std::vector<std::size_t>& counts, std::size_t n) {
  if (n == 0) return 0.0;
  double sum_sq = 0.0;
  for (auto c : counts) sum_sq += static_cast<double>(c) * static_cast<double>(c);
  return static_cast<double>(n) - sum_sq / static_cast<double>(n);
}

TreeModel fit_tree(const MatrixD& features, const Labels& labels, const TreeParams& params) {
  if (labels.empty()) throw ValidationError("tree needs at least one sample");
  if (static_cast<std::size_t>(features.rows()) != labels.size()) throw ValidationError("features and labels differ in count");
  TreeModel tree;
  tree.feature_dim = static_cast<int>(features.cols());
  tree.classes = labels;
  std::sort(tree.classes.begin(), tree.classes.end());
  tree.classes.erase(std::unique(tree.classes.begin(), tree.classes.end()), tree.classes.end());
  std::vector<int> targets(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    targets[i] = static_cast<int>(std::lower_bound(tree.classes.begin(), tree.classes.end(), labels[i]) - tree.classes.begin());
  }
  std::vector<std::size_t> rows(labels.size());
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  TreeBuilder builder(features, std::move(targets), tree.classes.size(), params);
  builder.grow(rows, 0, tree);
  std::vector<TreeNode> collapsed;
  collapse(tree.nodes, 0, collapsed);
  tree.nodes = std::move(collapsed);
  for (auto& node : tree.nodes) node.label = tree.classes[static_cast<std::size_t>(node.label)];
  return tree;
}

Labels TreeModel::predict(const MatrixD& features) const {
  if (features.cols() != feature_dim) {
    throw ValidationError(fmt::format("tree expects {} features, got {}", feature_dim, features.cols()));
  }
  Labels out(static_cast<std::size_t>(features.rows()));
  for (Eigen::Index r = 0; r < features.rows(); ++r) {
    std::size_t at = 0;
    while (!nodes[at].is_leaf()) {
      at = static_cast<std::size_t>(features(r, nodes[at].feature) <= nodes[at].threshold ? nodes[at].left : nodes[at].right);
    }
    out[static_cast<std::size_t>(r)] = nodes[at].label;
  }
  return out;
}

std::set<int> TreeModel::features_used() const {
  std::set<int> used;
  for (const auto& n : nodes) {
    if (!n.is_leaf()) used.insert(n.feature);
  }
  return used;
}

int TreeModel::depth() const {
  std::vector<int> d(nodes.size(), 0);
  int deepest = 0;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    deepest = std::max(deepest, d[i]);
    if (!nodes[i].is_leaf()) {
      d[static_cast<std::size_t>(nodes[i].left)] = d[i] + 1;
      d[static_cast<std::size_t>(nodes[i].right)] = d[i] + 1;
    }
  }
  return deepest;
}

std::size_t TreeModel::leaf_count() const {
  return static_cast<std::size_t>(std::count_if(nodes.begin(), nodes.end(), [](const TreeNode& n) { return n.is_leaf(); }));
}

}  // namespace cme::learn
