#include "cloak/nn/ops.hpp"

#include <algorithm>
#include <cmath>

#include "cloak/error.hpp"

namespace cloak::nn {

std::vector<double> softmax_t(std::span<const double> logits, double temperature) {
  if (!(temperature > 0.0)) throw Error("softmax temperature must be positive");
  if (logits.empty()) return {};
  const double top = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp((logits[i] - top) / temperature);
    sum += p[i];
  }
  for (double& v : p) v /= sum;
  return p;
}

std::vector<double> log_softmax_t(std::span<const double> logits, double temperature) {
  if (!(temperature > 0.0)) throw Error("softmax temperature must be positive");
  if (logits.empty()) return {};
  const double top = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (double z : logits) sum += std::exp((z - top) / temperature);
  const double log_sum = std::log(sum);
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = (logits[i] - top) / temperature - log_sum;
  return out;
}

double cross_entropy(std::span<const double> probabilities, int label) {
  if (label < 0 || static_cast<std::size_t>(label) >= probabilities.size()) {
    throw Error("label " + std::to_string(label) + " out of range");
  }
  return -std::log(std::max(probabilities[static_cast<std::size_t>(label)], 1e-12));
}

double entropy(std::span<const double> probabilities) {
  double h = 0.0;
  for (double p : probabilities) {
    if (p > 0.0) h -= p * std::log(p);
  }
  return h;
}

void adam_step(std::span<Tensor* const> params, std::span<const Tensor> grads, AdamState& state) {
  if (params.size() != grads.size()) throw ShapeError("adam: parameter and gradient counts differ");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i]->shape() != grads[i].shape()) throw ShapeError("adam: gradient shape mismatch");
    for (double g : grads[i].values()) {
      if (!std::isfinite(g)) throw Error("gradient explosion");
    }
  }
  if (state.m.empty()) {
    for (auto* p : params) {
      state.m.emplace_back(p->shape(), 0.0);
      state.v.emplace_back(p->shape(), 0.0);
    }
  }
  if (state.m.size() != params.size()) throw ShapeError("adam: state does not match parameters");

  const auto& c = state.config;
  ++state.t;
  const double correction1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.t));
  const double correction2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    double* w = params[i]->data();
    const double* g = grads[i].data();
    double* m = state.m[i].data();
    double* v = state.v[i].data();
    for (std::size_t k = 0; k < params[i]->size(); ++k) {
      m[k] = c.beta1 * m[k] + (1.0 - c.beta1) * g[k];
      v[k] = c.beta2 * v[k] + (1.0 - c.beta2) * g[k] * g[k];
      const double m_hat = m[k] / correction1;
      const double v_hat = v[k] / correction2;
      w[k] -= c.lr * m_hat / (std::sqrt(v_hat) + c.eps);
    }
  }
}

}  // namespace cloak::nn
