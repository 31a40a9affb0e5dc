#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "cloak/nn/net.hpp"
#include "cloak/trace.hpp"

namespace cloak::clf {

/// A flattened sample and its class. `x` views storage owned elsewhere
/// (usually a Dataset), so an Example must not outlive it.
struct Example {
  std::span<const double> x;
  int label = -1;
};

std::vector<Example> examples(const Dataset& ds, Split split);

/// Index of the largest entry; ties go to the smallest index.
int argmax(std::span<const double> v);

/// Common face of every fitted classifier. Fitted classifiers are immutable;
/// all members are safe to call concurrently.
class Classifier {
 public:
  virtual ~Classifier() = default;

  /// Family name as accepted by train_classifier(), e.g. "cnn" or "knn-fine".
  virtual std::string family() const = 0;
  virtual std::size_t n_classes() const = 0;
  virtual std::size_t input_size() const = 0;

  /// Class probabilities (vote or leaf fractions for non-neural models).
  virtual std::vector<double> predict_proba(std::span<const double> x) const = 0;
  /// Probabilities for many inputs. Deterministic regardless of thread count.
  virtual std::vector<std::vector<double>> predict_proba_batch(std::span<const Example> xs) const;
  /// Log probabilities; networks compute them from the logits so that tiny
  /// probabilities do not underflow to -inf.
  virtual std::vector<double> predict_log_proba(std::span<const double> x) const;

  virtual bool has_gradients() const { return false; }
  /// d(cross-entropy)/dx. Throws "attack requires gradients" unless
  /// has_gradients().
  virtual std::vector<double> loss_gradient(std::span<const double> x, int label) const;
  /// sum_j cotangent[j] * dZ_j/dx over the pre-softmax scores Z.
  virtual std::vector<double> logit_vjp(std::span<const double> x, std::span<const double> cotangent) const;

  virtual nlohmann::json to_json() const = 0;

  int predict(std::span<const double> x) const { return argmax(predict_proba(x)); }
};

/// A trained network behind the Classifier interface.
class NetClassifier final : public Classifier {
 public:
  NetClassifier(nn::Net net, std::string family);

  std::string family() const override { return family_; }
  std::size_t n_classes() const override { return net_.n_classes(); }
  std::size_t input_size() const override { return net_.input_size(); }
  std::vector<double> predict_proba(std::span<const double> x) const override;
  std::vector<std::vector<double>> predict_proba_batch(std::span<const Example> xs) const override;
  std::vector<double> predict_log_proba(std::span<const double> x) const override;
  bool has_gradients() const override { return true; }
  std::vector<double> loss_gradient(std::span<const double> x, int label) const override;
  std::vector<double> logit_vjp(std::span<const double> x, std::span<const double> cotangent) const override;
  nlohmann::json to_json() const override;

  const nn::Net& net() const noexcept { return net_; }

 private:
  nn::Net net_;
  std::string family_;
};

struct Evaluation {
  double accuracy = 0.0;
  std::size_t n = 0;
};

Evaluation evaluate(const Classifier& clf, std::span<const Example> xs);

}  // namespace cloak::clf
