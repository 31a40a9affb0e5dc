#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "cloak/nn/layers.hpp"
#include "cloak/nn/tensor.hpp"
#include "cloak/trace.hpp"

namespace cloak::nn {

/// Activations recorded by a forward pass, consumed by backward().
struct Tape {
  std::vector<LayerCache> caches;
};

/// A feed-forward stack ending in Dense + SoftmaxOutput. forward() yields
/// logits; probabilities are softmax_t(logits, temperature()).
///
/// A Net is a value: copies are deep. All const members are safe to call
/// concurrently.
class Net {
 public:
  Net() = default;

  /// Validates the shape chain and initializes weights uniformly in
  /// +-sqrt(1/fan_in) from Rng(seed). Throws ShapeError naming the first
  /// inconsistent layer.
  Net(Shape input_shape, const std::vector<LayerSpec>& specs, std::uint64_t seed);

  const Shape& input_shape() const noexcept { return input_shape_; }
  std::size_t input_size() const noexcept { return shape_size(input_shape_); }
  std::size_t n_classes() const;
  double temperature() const;
  void set_temperature(double t);
  std::uint64_t seed() const noexcept { return seed_; }

  const std::vector<Layer>& layers() const noexcept { return layers_; }
  std::vector<Layer>& layers() noexcept { return layers_; }
  std::vector<LayerSpec> specs() const;

  /// Per-sample output shape of every layer, in order.
  std::vector<Shape> shape_chain() const;

  /// `batch` is [B, input_shape...]. Returns logits [B, n_classes]. In Train
  /// mode `rng` drives dropout. `tape` may be null when no backward follows.
  Tensor forward(const Tensor& batch, Mode mode, Rng* rng, Tape* tape) const;

  /// Backpropagates `grad_logits` through the recorded tape. Accumulates
  /// parameter gradients into `grads` when non-null (see zero_gradients()).
  /// Returns the gradient with respect to the input batch.
  Tensor backward(const Tape& tape, const Tensor& grad_logits, std::vector<Tensor>* grads) const;

  std::vector<Tensor> zero_gradients() const;
  std::vector<Tensor*> parameters();
  std::vector<const Tensor*> parameters() const;
  std::size_t parameter_count() const;

  /// Applies the batch statistics of a Train-mode tape to batch-norm layers.
  void commit_batch_stats(const Tape& tape);

  /// Wraps a single flattened sample into a batch of one.
  Tensor as_batch(std::span<const double> x) const;

  std::optional<NormStats> norm_stats;

  friend bool operator==(const Net& a, const Net& b);

 private:
  Shape input_shape_;
  std::vector<Layer> layers_;
  std::uint64_t seed_ = 0;
};

/// Probabilities for one flattened sample in inference mode.
std::vector<double> predict_proba(const Net& net, std::span<const double> x);

/// Logits for one flattened sample in inference mode.
std::vector<double> predict_logits(const Net& net, std::span<const double> x);

/// Cross-entropy of the temperature softmax against `label`, via log-softmax.
double loss_value(const Net& net, std::span<const double> x, int label);

/// Exact d(loss)/d(x) by backpropagation, inference mode.
std::vector<double> loss_input_gradient(const Net& net, std::span<const double> x, int label);

/// Vector-Jacobian product of the logits: sum_j cotangent[j] * dZ_j/dx.
std::vector<double> logit_vjp(const Net& net, std::span<const double> x, std::span<const double> cotangent);

/// Central-difference gradient of loss_value; h must be nonzero.
std::vector<double> finite_diff_gradient(const Net& net, std::span<const double> x, int label, double h = 1e-4);

}  // namespace cloak::nn
