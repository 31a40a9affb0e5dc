#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "cloak/clf/model.hpp"

namespace cloak::clf {

struct PcaModel {
  std::vector<double> mean;
  /// Row-major [n_components, dim]; rows orthonormal.
  std::vector<double> components;
  /// Variance along each retained component, nonincreasing.
  std::vector<double> explained_variance;
  double total_variance = 0.0;
  double target = 0.995;

  std::size_t dim() const noexcept { return mean.size(); }
  std::size_t n_components() const noexcept { return explained_variance.size(); }
  double retained_fraction() const;

  nlohmann::json to_json() const;
  static PcaModel from_json(const nlohmann::json& j);
};

/// Smallest set of leading covariance eigenvectors whose explained variance
/// reaches `variance` of the total (at least one component).
PcaModel pca_fit(std::span<const Example> train, double variance = 0.995);
std::vector<double> pca_transform(const PcaModel& model, std::span<const double> x);
/// Maps reduced coordinates back to the input space.
std::vector<double> pca_reconstruct(const PcaModel& model, std::span<const double> z);

/// A classical classifier fitted on PCA-reduced inputs.
class PcaClassifier final : public Classifier {
 public:
  PcaClassifier(PcaModel pca, std::unique_ptr<Classifier> inner);

  std::string family() const override { return "pca-" + inner_->family(); }
  std::size_t n_classes() const override { return inner_->n_classes(); }
  std::size_t input_size() const override { return pca_.dim(); }
  std::vector<double> predict_proba(std::span<const double> x) const override;
  nlohmann::json to_json() const override;

  const PcaModel& pca() const noexcept { return pca_; }
  const Classifier& inner() const noexcept { return *inner_; }

 private:
  PcaModel pca_;
  std::shared_ptr<const Classifier> inner_;
};

}  // namespace cloak::clf
