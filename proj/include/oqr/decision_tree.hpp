#pragma once

#include <vector>

#include <Eigen/Dense>

namespace oqr {

struct TreeOptions {
  int max_depth = 3;
  /// Every node (children included) holds at least this fraction of the samples.
  double min_node_fraction = 0.05;
};

/// Binary CART classifier with gini impurity. Nodes are stored in preorder;
/// node 0 is the root.
class DecisionTree {
 public:
  struct Node {
    int depth = 0;
    int feature = -1;  // -1 for leaves
    double threshold = 0;  // rows with x[feature] <= threshold go left
    int left = -1;
    int right = -1;
    std::vector<Eigen::Index> rows;  // training rows reaching the node, ascending
    Eigen::Index positives = 0;

    bool leaf() const { return feature < 0; }
    Eigen::Index size() const { return static_cast<Eigen::Index>(rows.size()); }
    /// Majority label; ties go to the negative class.
    bool label() const { return 2 * positives > size(); }
  };

  static DecisionTree fit(const Eigen::Ref<const Eigen::MatrixXd>& x, const std::vector<bool>& labels,
                          const TreeOptions& options = {});

  const std::vector<Node>& nodes() const { return nodes_; }
  Eigen::Index sample_count() const { return nodes_.empty() ? 0 : nodes_.front().size(); }
  int depth() const;
  bool predict(const Eigen::Ref<const Eigen::VectorXd>& x) const;

 private:
  std::vector<Node> nodes_;
};

}  // namespace oqr
