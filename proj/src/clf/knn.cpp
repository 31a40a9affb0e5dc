#include "cloak/clf/knn.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cloak/error.hpp"

namespace cloak::clf {

std::string_view to_string(Metric m) {
  switch (m) {
    case Metric::Euclidean: return "euclidean";
    case Metric::Cosine: return "cosine";
    case Metric::Minkowski3: return "minkowski3";
  }
  return "?";
}

Metric parse_metric(std::string_view name) {
  if (name == "euclidean") return Metric::Euclidean;
  if (name == "cosine") return Metric::Cosine;
  if (name == "minkowski3") return Metric::Minkowski3;
  throw ConfigError("unknown metric: " + std::string(name));
}

void KnnConfig::validate() const {
  if (k < 1) throw ConfigError("k must be at least 1");
}

KnnConfig KnnConfig::preset(std::string_view name) {
  if (name == "fine") return {1, Metric::Euclidean, false};
  if (name == "medium") return {10, Metric::Euclidean, false};
  if (name == "coarse") return {100, Metric::Euclidean, false};
  if (name == "cosine") return {10, Metric::Cosine, false};
  if (name == "cubic") return {10, Metric::Minkowski3, false};
  if (name == "weighted") return {10, Metric::Euclidean, true};
  throw ConfigError("unknown kNN preset: " + std::string(name));
}

double knn_distance(std::span<const double> a, std::span<const double> b, Metric metric) {
  if (a.size() != b.size()) throw ShapeError("kNN distance between vectors of different length");
  switch (metric) {
    case Metric::Euclidean: {
      double s = 0.0;
      for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
      return std::sqrt(s);
    }
    case Metric::Cosine: {
      double ab = 0.0, aa = 0.0, bb = 0.0;
      for (std::size_t i = 0; i < a.size(); ++i) {
        ab += a[i] * b[i];
        aa += a[i] * a[i];
        bb += b[i] * b[i];
      }
      if (aa == 0.0 || bb == 0.0) return 1.0;
      return std::max(0.0, 1.0 - ab / std::sqrt(aa * bb));
    }
    case Metric::Minkowski3: {
      double s = 0.0;
      for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = std::abs(a[i] - b[i]);
        s += d * d * d;
      }
      return std::cbrt(s);
    }
  }
  return 0.0;
}

std::vector<double> knn_votes(std::span<const Example> train, std::span<const double> x, const KnnConfig& config,
                              std::size_t n_classes) {
  config.validate();
  if (train.empty()) throw Error("kNN needs a nonempty training set");
  if (config.k > train.size()) {
    throw Error("k = " + std::to_string(config.k) + " exceeds training size " + std::to_string(train.size()));
  }
  std::vector<std::pair<double, std::size_t>> d(train.size());
  for (std::size_t i = 0; i < train.size(); ++i) d[i] = {knn_distance(train[i].x, x, config.metric), i};
  std::partial_sort(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(config.k), d.end());

  std::vector<double> votes(n_classes, 0.0);
  auto label_of = [&](std::size_t i) {
    const int y = train[i].label;
    if (y < 0 || static_cast<std::size_t>(y) >= n_classes) throw Error("training label out of range");
    return static_cast<std::size_t>(y);
  };
  if (config.weighted) {
    for (std::size_t r = 0; r < config.k; ++r) {
      if (d[r].first == 0.0) {
        std::fill(votes.begin(), votes.end(), 0.0);
        votes[label_of(d[r].second)] = 1.0;
        return votes;
      }
      votes[label_of(d[r].second)] += 1.0 / d[r].first;
    }
  } else {
    for (std::size_t r = 0; r < config.k; ++r) votes[label_of(d[r].second)] += 1.0;
  }
  const double total = std::accumulate(votes.begin(), votes.end(), 0.0);
  for (double& v : votes) v /= total;
  return votes;
}

int knn_classify(std::span<const Example> train, std::span<const double> x, const KnnConfig& config,
                 std::size_t n_classes) {
  return argmax(knn_votes(train, x, config, n_classes));
}

KnnClassifier::KnnClassifier(std::span<const Example> train, std::size_t n_classes, KnnConfig config,
                             std::string family)
    : n_classes_(n_classes), config_(config), family_(std::move(family)) {
  config_.validate();
  if (train.empty()) throw Error("kNN needs a nonempty training set");
  if (config_.k > train.size()) {
    throw Error("k = " + std::to_string(config_.k) + " exceeds training size " + std::to_string(train.size()));
  }
  dim_ = train[0].x.size();
  for (const auto& ex : train) {
    if (ex.x.size() != dim_) throw ShapeError("kNN training points differ in length");
    if (ex.label < 0 || static_cast<std::size_t>(ex.label) >= n_classes) throw Error("training label out of range");
    points_.insert(points_.end(), ex.x.begin(), ex.x.end());
    labels_.push_back(ex.label);
  }
}

std::vector<double> KnnClassifier::predict_proba(std::span<const double> x) const {
  if (x.size() != dim_) throw ShapeError("input length does not match the kNN training points");
  std::vector<Example> train(labels_.size());
  for (std::size_t i = 0; i < labels_.size(); ++i) train[i] = {{points_.data() + i * dim_, dim_}, labels_[i]};
  return knn_votes(train, x, config_, n_classes_);
}

nlohmann::json KnnClassifier::to_json() const {
  return {{"model", "knn"},
          {"family", family_},
          {"k", config_.k},
          {"metric", std::string(to_string(config_.metric))},
          {"weighted", config_.weighted},
          {"n_classes", n_classes_},
          {"dim", dim_},
          {"labels", labels_},
          {"points", points_}};
}

KnnClassifier KnnClassifier::from_json(const nlohmann::json& j) {
  KnnConfig c{j.at("k").get<std::size_t>(), parse_metric(j.at("metric").get<std::string>()),
              j.at("weighted").get<bool>()};
  const auto dim = j.at("dim").get<std::size_t>();
  const auto labels = j.at("labels").get<std::vector<int>>();
  const auto points = j.at("points").get<std::vector<double>>();
  if (points.size() != labels.size() * dim) throw Error("kNN model: point table does not match labels");
  std::vector<Example> train(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) train[i] = {{points.data() + i * dim, dim}, labels[i]};
  return KnnClassifier(train, j.at("n_classes").get<std::size_t>(), c, j.at("family").get<std::string>());
}

}  // namespace cloak::clf
