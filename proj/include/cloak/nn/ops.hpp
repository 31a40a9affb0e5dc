#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "cloak/nn/tensor.hpp"

namespace cloak::nn {

/// Temperature softmax, max-shifted.
std::vector<double> softmax_t(std::span<const double> logits, double temperature = 1.0);

/// log softmax_t, computed without forming probabilities.
std::vector<double> log_softmax_t(std::span<const double> logits, double temperature = 1.0);

/// -log(p[label]) with p clamped to >= 1e-12.
double cross_entropy(std::span<const double> probabilities, int label);

/// Shannon entropy in nats.
double entropy(std::span<const double> probabilities);

struct AdamConfig {
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  AdamConfig config;
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::int64_t t = 0;
};

/// One bias-corrected Adam update. Lazily sizes the moments on first use.
/// Throws "gradient explosion" on a non-finite gradient before touching
/// anything.
void adam_step(std::span<Tensor* const> params, std::span<const Tensor> grads, AdamState& state);

}  // namespace cloak::nn
