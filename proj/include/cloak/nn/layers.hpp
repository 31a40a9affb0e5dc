#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "cloak/nn/tensor.hpp"
#include "cloak/rng.hpp"

namespace cloak::nn {

enum class Mode { Train, Infer };

// Layer specifications. A per-sample activation is either {channels, length}
// (sequence) or {features} (flat). Batched tensors prepend the batch axis.

struct Conv1DSpec {
  std::size_t filters = 1;
  std::size_t kernel = 1;
  std::size_t stride = 1;
};
struct MaxPool1DSpec {
  std::size_t window = 1;
};
struct BatchNormSpec {
  double eps = 1e-5;
  double momentum = 0.99;
};
struct DropoutSpec {
  double rate = 0.0;
};
struct FlattenSpec {};
struct DenseSpec {
  std::size_t units = 1;
};
/// Marks the logits as class scores read through a temperature softmax.
struct SoftmaxOutputSpec {
  std::size_t classes = 1;
  double temperature = 1.0;
};

using LayerSpec =
    std::variant<Conv1DSpec, MaxPool1DSpec, BatchNormSpec, DropoutSpec, FlattenSpec, DenseSpec, SoftmaxOutputSpec>;

std::string layer_name(const LayerSpec& spec);

/// Per-call scratch a layer needs for its backward pass.
struct LayerCache {
  Tensor input;
  Shape in_shape;
  Tensor aux;  // dropout mask or batch-norm normalized activations
  std::vector<std::size_t> argmax;
  std::vector<double> mean;
  std::vector<double> inv_std;
  Mode mode = Mode::Infer;
};

/// Parameter gradients, one slot per trainable tensor of a layer.
using ParamGrads = std::span<Tensor>;

class Conv1D {
 public:
  Conv1D(Conv1DSpec spec, const Shape& in_shape);

  Conv1DSpec spec() const { return spec_; }
  const Shape& out_shape() const { return out_shape_; }
  std::size_t fan_in() const { return in_channels_ * spec_.kernel; }

  Tensor forward(const Tensor& in, Mode mode, Rng* rng, LayerCache& cache) const;
  Tensor backward(const Tensor& grad_out, const LayerCache& cache, ParamGrads grads) const;

  Tensor weight;  // [filters, in_channels, kernel]
  Tensor bias;    // [filters]

 private:
  Conv1DSpec spec_;
  std::size_t in_channels_;
  std::size_t in_len_;
  Shape out_shape_;
};

class MaxPool1D {
 public:
  MaxPool1D(MaxPool1DSpec spec, const Shape& in_shape);

  MaxPool1DSpec spec() const { return spec_; }
  const Shape& out_shape() const { return out_shape_; }

  Tensor forward(const Tensor& in, Mode mode, Rng* rng, LayerCache& cache) const;
  Tensor backward(const Tensor& grad_out, const LayerCache& cache, ParamGrads grads) const;

 private:
  MaxPool1DSpec spec_;
  std::size_t channels_;
  std::size_t in_len_;
  Shape out_shape_;
};

/// Normalizes per channel (sequences) or per feature (flat inputs).
class BatchNorm {
 public:
  BatchNorm(BatchNormSpec spec, const Shape& in_shape);

  BatchNormSpec spec() const { return spec_; }
  const Shape& out_shape() const { return out_shape_; }
  std::size_t channels() const { return channels_; }

  Tensor forward(const Tensor& in, Mode mode, Rng* rng, LayerCache& cache) const;
  Tensor backward(const Tensor& grad_out, const LayerCache& cache, ParamGrads grads) const;

  /// Folds the batch statistics recorded in `cache` into the running stats.
  /// The first call copies them instead of blending with the initial (0, 1).
  void update_running(const LayerCache& cache);

  Tensor gamma;  // [channels]
  Tensor beta;   // [channels]
  Tensor running_mean;
  Tensor running_var;
  bool running_seeded = false;

 private:
  BatchNormSpec spec_;
  std::size_t channels_;
  std::size_t length_;
  Shape out_shape_;
};

/// Inverted dropout: kept activations are scaled by 1/(1-rate) at train time.
class Dropout {
 public:
  Dropout(DropoutSpec spec, const Shape& in_shape);

  DropoutSpec spec() const { return spec_; }
  const Shape& out_shape() const { return out_shape_; }

  Tensor forward(const Tensor& in, Mode mode, Rng* rng, LayerCache& cache) const;
  Tensor backward(const Tensor& grad_out, const LayerCache& cache, ParamGrads grads) const;

 private:
  DropoutSpec spec_;
  Shape out_shape_;
};

class Flatten {
 public:
  Flatten(FlattenSpec spec, const Shape& in_shape);

  FlattenSpec spec() const { return {}; }
  const Shape& out_shape() const { return out_shape_; }

  Tensor forward(const Tensor& in, Mode mode, Rng* rng, LayerCache& cache) const;
  Tensor backward(const Tensor& grad_out, const LayerCache& cache, ParamGrads grads) const;

 private:
  Shape out_shape_;
};

class Dense {
 public:
  Dense(DenseSpec spec, const Shape& in_shape);

  DenseSpec spec() const { return spec_; }
  const Shape& out_shape() const { return out_shape_; }
  std::size_t fan_in() const { return in_features_; }

  Tensor forward(const Tensor& in, Mode mode, Rng* rng, LayerCache& cache) const;
  Tensor backward(const Tensor& grad_out, const LayerCache& cache, ParamGrads grads) const;

  Tensor weight;  // [units, in_features]
  Tensor bias;    // [units]

 private:
  DenseSpec spec_;
  std::size_t in_features_;
  Shape out_shape_;
};

/// Identity on the logits; carries class count and softmax temperature.
class SoftmaxOutput {
 public:
  SoftmaxOutput(SoftmaxOutputSpec spec, const Shape& in_shape);

  SoftmaxOutputSpec spec() const { return spec_; }
  const Shape& out_shape() const { return out_shape_; }
  void set_temperature(double t);

  Tensor forward(const Tensor& in, Mode mode, Rng* rng, LayerCache& cache) const;
  Tensor backward(const Tensor& grad_out, const LayerCache& cache, ParamGrads grads) const;

 private:
  SoftmaxOutputSpec spec_;
  Shape out_shape_;
};

using Layer = std::variant<Conv1D, MaxPool1D, BatchNorm, Dropout, Flatten, Dense, SoftmaxOutput>;

/// Builds the layer for `spec` given the per-sample input shape.
Layer make_layer(const LayerSpec& spec, const Shape& in_shape);

LayerSpec spec_of(const Layer& layer);
const Shape& out_shape_of(const Layer& layer);

/// Trainable tensors of a layer, in a fixed order.
std::vector<Tensor*> trainable(Layer& layer);
std::vector<const Tensor*> trainable(const Layer& layer);

}  // namespace cloak::nn
