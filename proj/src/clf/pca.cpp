#include "cloak/clf/pca.hpp"

#include <Eigen/Dense>
#include <cmath>

#include "cloak/error.hpp"

namespace cloak::clf {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

double PcaModel::retained_fraction() const {
  if (total_variance <= 0.0) return 1.0;
  double s = 0.0;
  for (double v : explained_variance) s += v;
  return s / total_variance;
}

PcaModel pca_fit(std::span<const Example> train, double variance) {
  if (!(variance > 0.0 && variance <= 1.0)) throw ConfigError("PCA variance target must lie in (0, 1]");
  if (train.size() < 2) throw Error("PCA needs at least two training points");
  const std::size_t n = train.size();
  const std::size_t d = train[0].x.size();

  Mat x(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  for (std::size_t i = 0; i < n; ++i) {
    if (train[i].x.size() != d) throw ShapeError("PCA training points differ in length");
    for (std::size_t j = 0; j < d; ++j) x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = train[i].x[j];
  }
  const Eigen::RowVectorXd mu = x.colwise().mean();
  x.rowwise() -= mu;
  const double denom = static_cast<double>(n - 1);

  // Eigenpairs of the covariance, either directly (d x d) or through the
  // n x n Gram matrix when there are fewer points than dimensions.
  Eigen::VectorXd values;
  Mat vectors;  // columns are unit eigenvectors in input space
  if (n < d) {
    const Mat gram = x * x.transpose() / denom;
    Eigen::SelfAdjointEigenSolver<Mat> eig(gram);
    values = eig.eigenvalues();
    vectors = x.transpose() * eig.eigenvectors();
    for (Eigen::Index c = 0; c < vectors.cols(); ++c) {
      const double norm = vectors.col(c).norm();
      if (norm > 0.0) vectors.col(c) /= norm;
    }
  } else {
    const Mat cov = x.transpose() * x / denom;
    Eigen::SelfAdjointEigenSolver<Mat> eig(cov);
    values = eig.eigenvalues();
    vectors = eig.eigenvectors();
  }

  PcaModel m;
  m.target = variance;
  m.mean.assign(mu.data(), mu.data() + d);
  m.total_variance = x.squaredNorm() / denom;

  // Eigen returns ascending order; walk from the top.
  double cumulative = 0.0;
  for (Eigen::Index c = values.size() - 1; c >= 0; --c) {
    const double lambda = std::max(0.0, values(c));
    Eigen::VectorXd v = vectors.col(c);
    if (v.norm() == 0.0) break;
    Eigen::Index pivot = 0;
    v.cwiseAbs().maxCoeff(&pivot);
    if (v(pivot) < 0.0) v = -v;  // deterministic sign
    m.components.insert(m.components.end(), v.data(), v.data() + d);
    m.explained_variance.push_back(lambda);
    cumulative += lambda;
    if (m.total_variance <= 0.0 || cumulative >= variance * m.total_variance * (1.0 - 1e-12)) break;
  }
  return m;
}

std::vector<double> pca_transform(const PcaModel& model, std::span<const double> x) {
  const std::size_t d = model.dim();
  if (x.size() != d) throw ShapeError("input length does not match the PCA model");
  std::vector<double> z(model.n_components(), 0.0);
  for (std::size_t c = 0; c < z.size(); ++c) {
    const double* row = model.components.data() + c * d;
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) s += row[j] * (x[j] - model.mean[j]);
    z[c] = s;
  }
  return z;
}

std::vector<double> pca_reconstruct(const PcaModel& model, std::span<const double> z) {
  const std::size_t d = model.dim();
  if (z.size() != model.n_components()) throw ShapeError("reduced vector length does not match the PCA model");
  std::vector<double> x = model.mean;
  for (std::size_t c = 0; c < z.size(); ++c) {
    const double* row = model.components.data() + c * d;
    for (std::size_t j = 0; j < d; ++j) x[j] += z[c] * row[j];
  }
  return x;
}

nlohmann::json PcaModel::to_json() const {
  return {{"mean", mean},
          {"components", components},
          {"explained_variance", explained_variance},
          {"total_variance", total_variance},
          {"target", target}};
}

PcaModel PcaModel::from_json(const nlohmann::json& j) {
  PcaModel m;
  m.mean = j.at("mean").get<std::vector<double>>();
  m.components = j.at("components").get<std::vector<double>>();
  m.explained_variance = j.at("explained_variance").get<std::vector<double>>();
  m.total_variance = j.at("total_variance").get<double>();
  m.target = j.at("target").get<double>();
  if (m.components.size() != m.mean.size() * m.explained_variance.size()) {
    throw Error("PCA model: component table does not match its dimensions");
  }
  return m;
}

PcaClassifier::PcaClassifier(PcaModel pca, std::unique_ptr<Classifier> inner)
    : pca_(std::move(pca)), inner_(std::move(inner)) {
  if (!inner_) throw Error("PCA classifier needs an inner model");
  if (inner_->input_size() != pca_.n_components()) throw ShapeError("inner model does not take the reduced inputs");
}

std::vector<double> PcaClassifier::predict_proba(std::span<const double> x) const {
  return inner_->predict_proba(pca_transform(pca_, x));
}

nlohmann::json PcaClassifier::to_json() const {
  return {{"model", "pca"}, {"family", family()}, {"pca", pca_.to_json()}, {"inner", inner_->to_json()}};
}

}  // namespace cloak::clf
