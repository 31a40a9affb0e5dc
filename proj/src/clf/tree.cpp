#include "cloak/clf/tree.hpp"

#include <algorithm>
#include <queue>

#include "cloak/error.hpp"
#include "cloak/parallel.hpp"

namespace cloak::clf {
namespace {

struct SplitChoice {
  double gain = 0.0;
  int feature = -1;
  double threshold = 0.0;
};

// n * gini = n - sum(c^2) / n
double weighted_gini(double n, double sum_sq) { return n > 0.0 ? n - sum_sq / n : 0.0; }

SplitChoice best_split(std::span<const Example> train, const std::vector<std::size_t>& idx, std::size_t n_classes,
                 std::size_t dim) {
  std::vector<double> total(n_classes, 0.0);
  for (auto i : idx) total[static_cast<std::size_t>(train[i].label)] += 1.0;
  double total_sq = 0.0;
  for (double c : total) total_sq += c * c;
  const double n = static_cast<double>(idx.size());
  const double parent = weighted_gini(n, total_sq);
  if (parent <= 0.0) return {};

  std::vector<SplitChoice> per_feature(dim);
  parallel_for(dim, [&](std::size_t f) {
    std::vector<std::pair<double, int>> col(idx.size());
    for (std::size_t r = 0; r < idx.size(); ++r) col[r] = {train[idx[r]].x[f], train[idx[r]].label};
    std::sort(col.begin(), col.end());
    std::vector<double> left(n_classes, 0.0);
    double left_sq = 0.0, right_sq = total_sq;
    SplitChoice best;
    for (std::size_t r = 0; r + 1 < col.size(); ++r) {
      const auto y = static_cast<std::size_t>(col[r].second);
      const double right_y = total[y] - left[y];
      right_sq += (right_y - 1.0) * (right_y - 1.0) - right_y * right_y;
      left_sq += (left[y] + 1.0) * (left[y] + 1.0) - left[y] * left[y];
      left[y] += 1.0;
      if (col[r].first == col[r + 1].first) continue;
      const double nl = static_cast<double>(r + 1);
      const double gain = parent - weighted_gini(nl, left_sq) - weighted_gini(n - nl, right_sq);
      if (gain > best.gain) {
        double t = col[r].first + (col[r + 1].first - col[r].first) / 2.0;
        if (t >= col[r + 1].first) t = col[r].first;
        best = {gain, static_cast<int>(f), t};
      }
    }
    per_feature[f] = best;
  });
  SplitChoice best;
  for (const auto& s : per_feature) {
    if (s.feature >= 0 && s.gain > best.gain + 1e-12) best = s;
  }
  return best;
}

TreeNode make_leaf(std::span<const Example> train, const std::vector<std::size_t>& idx, std::size_t n_classes) {
  TreeNode node;
  node.n = idx.size();
  node.class_fraction.assign(n_classes, 0.0);
  for (auto i : idx) node.class_fraction[static_cast<std::size_t>(train[i].label)] += 1.0;
  for (double& c : node.class_fraction) c /= static_cast<double>(idx.size());
  return node;
}

}  // namespace

void TreeConfig::validate() const {
  if (max_splits < 1) throw ConfigError("max_splits must be at least 1");
}

TreeConfig TreeConfig::preset(std::string_view name) {
  if (name == "fine") return {100};
  if (name == "medium") return {20};
  if (name == "coarse") return {5};
  throw ConfigError("unknown tree preset: " + std::string(name));
}

std::size_t DecisionTree::n_splits() const {
  return static_cast<std::size_t>(std::count_if(nodes_.begin(), nodes_.end(), [](const TreeNode& n) { return n.feature >= 0; }));
}

std::size_t DecisionTree::depth() const {
  std::vector<std::size_t> d(nodes_.size(), 0);
  std::size_t deepest = 0;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {  // children always follow parents
    deepest = std::max(deepest, d[i]);
    if (nodes_[i].feature >= 0) {
      d[static_cast<std::size_t>(nodes_[i].left)] = d[i] + 1;
      d[static_cast<std::size_t>(nodes_[i].right)] = d[i] + 1;
    }
  }
  return deepest;
}

const TreeNode& DecisionTree::leaf_for(std::span<const double> x) const {
  if (x.size() != dim_) throw ShapeError("input length does not match the tree");
  const TreeNode* node = &nodes_.at(0);
  while (node->feature >= 0) {
    const int next = x[static_cast<std::size_t>(node->feature)] <= node->threshold ? node->left : node->right;
    node = &nodes_[static_cast<std::size_t>(next)];
  }
  return *node;
}

DecisionTree tree_fit(std::span<const Example> train, std::size_t n_classes, const TreeConfig& config) {
  config.validate();
  if (train.empty()) throw Error("tree needs a nonempty training set");
  const std::size_t dim = train[0].x.size();
  std::vector<bool> present(n_classes, false);
  for (const auto& ex : train) {
    if (ex.x.size() != dim) throw ShapeError("tree training points differ in length");
    if (ex.label < 0 || static_cast<std::size_t>(ex.label) >= n_classes) throw Error("training label out of range");
    present[static_cast<std::size_t>(ex.label)] = true;
  }
  if (std::count(present.begin(), present.end(), true) < 2) throw Error("tree needs at least two classes in train");

  DecisionTree tree;
  tree.n_classes_ = n_classes;
  tree.dim_ = dim;

  struct Open {
    SplitChoice split;
    int node;
    std::vector<std::size_t> idx;
  };
  auto worse = [](const Open& a, const Open& b) {
    if (a.split.gain != b.split.gain) return a.split.gain < b.split.gain;
    return a.node > b.node;
  };
  std::priority_queue<Open, std::vector<Open>, decltype(worse)> open(worse);

  std::vector<std::size_t> all(train.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  tree.nodes_.push_back(make_leaf(train, all, n_classes));
  open.push({best_split(train, all, n_classes, dim), 0, std::move(all)});

  std::size_t splits = 0;
  while (splits < config.max_splits && !open.empty()) {
    Open top = open.top();
    open.pop();
    if (top.split.feature < 0) continue;
    std::vector<std::size_t> l, r;
    for (auto i : top.idx) {
      (train[i].x[static_cast<std::size_t>(top.split.feature)] <= top.split.threshold ? l : r).push_back(i);
    }
    const int li = static_cast<int>(tree.nodes_.size());
    tree.nodes_.push_back(make_leaf(train, l, n_classes));
    tree.nodes_.push_back(make_leaf(train, r, n_classes));
    auto& parent = tree.nodes_[static_cast<std::size_t>(top.node)];
    parent.feature = top.split.feature;
    parent.threshold = top.split.threshold;
    parent.left = li;
    parent.right = li + 1;
    ++splits;
    if (splits < config.max_splits) {
      auto sl = best_split(train, l, n_classes, dim);
      auto sr = best_split(train, r, n_classes, dim);
      open.push({sl, li, std::move(l)});
      open.push({sr, li + 1, std::move(r)});
    }
  }
  return tree;
}

int tree_classify(const DecisionTree& tree, std::span<const double> x) { return argmax(tree.leaf_for(x).class_fraction); }

nlohmann::json DecisionTree::to_json() const {
  nlohmann::json nodes = nlohmann::json::array();
  for (const auto& n : nodes_) {
    nodes.push_back({{"feature", n.feature},
                     {"threshold", n.threshold},
                     {"left", n.left},
                     {"right", n.right},
                     {"n", n.n},
                     {"class_fraction", n.class_fraction}});
  }
  return {{"n_classes", n_classes_}, {"dim", dim_}, {"nodes", nodes}};
}

DecisionTree DecisionTree::from_json(const nlohmann::json& j) {
  DecisionTree t;
  t.n_classes_ = j.at("n_classes").get<std::size_t>();
  t.dim_ = j.at("dim").get<std::size_t>();
  for (const auto& n : j.at("nodes")) {
    TreeNode node;
    node.feature = n.at("feature").get<int>();
    node.threshold = n.at("threshold").get<double>();
    node.left = n.at("left").get<int>();
    node.right = n.at("right").get<int>();
    node.n = n.at("n").get<std::size_t>();
    node.class_fraction = n.at("class_fraction").get<std::vector<double>>();
    t.nodes_.push_back(std::move(node));
  }
  const auto count = static_cast<int>(t.nodes_.size());
  if (count == 0) throw Error("tree model has no nodes");
  for (const auto& n : t.nodes_) {
    if (n.class_fraction.size() != t.n_classes_) throw Error("tree model: leaf distribution has the wrong length");
    if (n.feature >= 0 && (n.left <= 0 || n.right <= 0 || n.left >= count || n.right >= count ||
                           static_cast<std::size_t>(n.feature) >= t.dim_)) {
      throw Error("tree model: dangling node reference");
    }
  }
  return t;
}

std::vector<double> TreeClassifier::predict_proba(std::span<const double> x) const {
  return tree_.leaf_for(x).class_fraction;
}

nlohmann::json TreeClassifier::to_json() const {
  auto j = tree_.to_json();
  j["model"] = "tree";
  j["family"] = family_;
  return j;
}

}  // namespace cloak::clf
