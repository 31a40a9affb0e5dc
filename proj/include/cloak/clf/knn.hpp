#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cloak/clf/model.hpp"

namespace cloak::clf {

enum class Metric { Euclidean, Cosine, Minkowski3 };

std::string_view to_string(Metric m);
Metric parse_metric(std::string_view name);

struct KnnConfig {
  std::size_t k = 1;
  Metric metric = Metric::Euclidean;
  bool weighted = false;

  void validate() const;
  /// fine, medium, coarse, cosine, cubic, weighted.
  static KnnConfig preset(std::string_view name);
};

/// Euclidean, 1 - cosine similarity (1 when either vector is zero), or the
/// Minkowski p=3 distance.
double knn_distance(std::span<const double> a, std::span<const double> b, Metric metric);

/// Per-class vote shares among the k nearest training points (ties in
/// distance go to the earlier training point). Weighted votes count 1/d; a
/// neighbor at distance 0 takes the whole vote.
std::vector<double> knn_votes(std::span<const Example> train, std::span<const double> x, const KnnConfig& config,
                              std::size_t n_classes);

/// Majority label among the k nearest; ties go to the smallest label.
int knn_classify(std::span<const Example> train, std::span<const double> x, const KnnConfig& config,
                 std::size_t n_classes);

/// Owns a copy of its training points.
class KnnClassifier final : public Classifier {
 public:
  KnnClassifier(std::span<const Example> train, std::size_t n_classes, KnnConfig config, std::string family);

  std::string family() const override { return family_; }
  std::size_t n_classes() const override { return n_classes_; }
  std::size_t input_size() const override { return dim_; }
  std::vector<double> predict_proba(std::span<const double> x) const override;
  nlohmann::json to_json() const override;
  static KnnClassifier from_json(const nlohmann::json& j);

  const KnnConfig& config() const noexcept { return config_; }

 private:
  std::vector<double> points_;  // row-major, one row per training point
  std::vector<int> labels_;
  std::size_t dim_ = 0;
  std::size_t n_classes_ = 0;
  KnnConfig config_;
  std::string family_;
};

}  // namespace cloak::clf
