#include "oqr/decision_tree.hpp"

#include <algorithm>
#include <cmath>

#include "oqr/error.hpp"

namespace oqr {

namespace {

double gini(double positives, double total) {
  if (total <= 0) return 0;
  const double p = positives / total;
  return 2 * p * (1 - p);
}

struct SplitChoice {
  int feature = -1;
  double threshold = 0;
  double gain = 0;
};

SplitChoice best_split(const Eigen::Ref<const Eigen::MatrixXd>& x, const std::vector<bool>& labels,
                       const std::vector<Eigen::Index>& rows, Eigen::Index positives, Eigen::Index min_size) {
  const auto n = static_cast<Eigen::Index>(rows.size());
  const double parent = gini(static_cast<double>(positives), static_cast<double>(n));
  SplitChoice best;
  std::vector<std::pair<double, bool>> column(rows.size());
  for (int f = 0; f < x.cols(); ++f) {
    for (std::size_t k = 0; k < rows.size(); ++k) column[k] = {x(rows[k], f), labels[rows[k]]};
    std::sort(column.begin(), column.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    Eigen::Index left_pos = 0;
    for (Eigen::Index k = 0; k + 1 < n; ++k) {
      left_pos += column[k].second ? 1 : 0;
      if (column[k].first == column[k + 1].first) continue;
      const Eigen::Index left_n = k + 1;
      const Eigen::Index right_n = n - left_n;
      if (left_n < min_size || right_n < min_size) continue;
      const double child = (left_n * gini(left_pos, left_n) + right_n * gini(positives - left_pos, right_n)) /
                           static_cast<double>(n);
      const double gain = parent - child;
      if (gain > best.gain + 1e-12) {
        best.feature = f;
        best.threshold = 0.5 * (column[k].first + column[k + 1].first);
        best.gain = gain;
      }
    }
  }
  return best;
}

}  // namespace

DecisionTree DecisionTree::fit(const Eigen::Ref<const Eigen::MatrixXd>& x, const std::vector<bool>& labels,
                               const TreeOptions& options) {
  if (static_cast<std::size_t>(x.rows()) != labels.size())
    throw DimensionError("decision tree: labels do not match feature rows");
  if (x.rows() == 0) throw DataError("decision tree: no samples");
  if (options.max_depth < 0) throw ConfigError("decision tree: negative max_depth");
  const auto min_size = std::max<Eigen::Index>(
      1, static_cast<Eigen::Index>(std::ceil(options.min_node_fraction * static_cast<double>(x.rows()) - 1e-9)));

  DecisionTree tree;
  Node root;
  root.rows.resize(static_cast<std::size_t>(x.rows()));
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    root.rows[static_cast<std::size_t>(i)] = i;
    root.positives += labels[static_cast<std::size_t>(i)] ? 1 : 0;
  }

  // Depth-first construction in preorder.
  std::vector<std::pair<Node, int>> stack;  // node, parent slot to patch (-1 root)
  std::vector<bool> is_left;
  stack.emplace_back(std::move(root), -1);
  is_left.push_back(false);
  while (!stack.empty()) {
    auto [node, parent] = std::move(stack.back());
    const bool left_child = is_left.back();
    stack.pop_back();
    is_left.pop_back();
    const int index = static_cast<int>(tree.nodes_.size());
    if (parent >= 0) (left_child ? tree.nodes_[parent].left : tree.nodes_[parent].right) = index;

    SplitChoice choice;
    if (node.depth < options.max_depth && node.positives > 0 && node.positives < node.size())
      choice = best_split(x, labels, node.rows, node.positives, min_size);
    Node left;
    Node right;
    if (choice.feature >= 0) {
      node.feature = choice.feature;
      node.threshold = choice.threshold;
      left.depth = right.depth = node.depth + 1;
      for (Eigen::Index r : node.rows) {
        Node& side = x(r, choice.feature) <= choice.threshold ? left : right;
        side.rows.push_back(r);
        side.positives += labels[static_cast<std::size_t>(r)] ? 1 : 0;
      }
    }
    tree.nodes_.push_back(std::move(node));
    if (choice.feature >= 0) {
      stack.emplace_back(std::move(right), index);
      is_left.push_back(false);
      stack.emplace_back(std::move(left), index);
      is_left.push_back(true);
    }
  }
  return tree;
}

int DecisionTree::depth() const {
  int d = 0;
  for (const auto& node : nodes_) d = std::max(d, node.depth);
  return d;
}

bool DecisionTree::predict(const Eigen::Ref<const Eigen::VectorXd>& x) const {
  if (nodes_.empty()) throw DataError("decision tree: not fitted");
  int at = 0;
  while (!nodes_[at].leaf()) at = x(nodes_[at].feature) <= nodes_[at].threshold ? nodes_[at].left : nodes_[at].right;
  return nodes_[at].label();
}

}  // namespace oqr
