#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cloak/clf/model.hpp"

namespace cloak::clf {

struct TreeConfig {
  std::size_t max_splits = 100;

  void validate() const;
  /// fine = 100, medium = 20, coarse = 5 splits.
  static TreeConfig preset(std::string_view name);
};

struct TreeNode {
  int feature = -1;  // -1 for a leaf
  double threshold = 0.0;  // x[feature] <= threshold goes left
  int left = -1;
  int right = -1;
  std::vector<double> class_fraction;
  std::size_t n = 0;
};

/// CART with Gini impurity, grown best-first: the open leaf with the largest
/// weighted impurity decrease is split next, until max_splits internal nodes
/// exist or no split helps.
class DecisionTree {
 public:
  const std::vector<TreeNode>& nodes() const noexcept { return nodes_; }
  std::size_t n_classes() const noexcept { return n_classes_; }
  std::size_t input_size() const noexcept { return dim_; }
  std::size_t n_splits() const;
  std::size_t n_leaves() const { return nodes_.size() - n_splits(); }
  std::size_t depth() const;

  const TreeNode& leaf_for(std::span<const double> x) const;

  nlohmann::json to_json() const;
  static DecisionTree from_json(const nlohmann::json& j);

 private:
  friend DecisionTree tree_fit(std::span<const Example>, std::size_t, const TreeConfig&);
  std::vector<TreeNode> nodes_;
  std::size_t n_classes_ = 0;
  std::size_t dim_ = 0;
};

DecisionTree tree_fit(std::span<const Example> train, std::size_t n_classes, const TreeConfig& config);
/// Majority class of the leaf; ties go to the smallest label.
int tree_classify(const DecisionTree& tree, std::span<const double> x);

class TreeClassifier final : public Classifier {
 public:
  TreeClassifier(DecisionTree tree, std::string family) : tree_(std::move(tree)), family_(std::move(family)) {}

  std::string family() const override { return family_; }
  std::size_t n_classes() const override { return tree_.n_classes(); }
  std::size_t input_size() const override { return tree_.input_size(); }
  std::vector<double> predict_proba(std::span<const double> x) const override;
  nlohmann::json to_json() const override;

  const DecisionTree& tree() const noexcept { return tree_; }

 private:
  DecisionTree tree_;
  std::string family_;
};

}  // namespace cloak::clf
