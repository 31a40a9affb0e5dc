#include "cloak/nn/net.hpp"

#include <cmath>

#include "cloak/error.hpp"
#include "cloak/nn/ops.hpp"

namespace cloak::nn {
namespace {

void init_uniform(Tensor& t, double bound, Rng& rng) {
  for (double& w : t.values()) w = rng.uniform(-bound, bound);
}

}  // namespace

Net::Net(Shape input_shape, const std::vector<LayerSpec>& specs, std::uint64_t seed)
    : input_shape_(std::move(input_shape)), seed_(seed) {
  if (input_shape_.empty() || shape_size(input_shape_) == 0) throw ShapeError("network input shape is empty");
  if (specs.empty() || !std::holds_alternative<SoftmaxOutputSpec>(specs.back())) {
    throw ShapeError("network must end with a SoftmaxOutput layer");
  }
  Shape shape = input_shape_;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    if (i + 1 < specs.size() && std::holds_alternative<SoftmaxOutputSpec>(specs[i])) {
      throw ShapeError("layer " + std::to_string(i) + " (SoftmaxOutput) must be last");
    }
    try {
      layers_.push_back(make_layer(specs[i], shape));
    } catch (const ShapeError& e) {
      throw ShapeError("layer " + std::to_string(i) + " (" + layer_name(specs[i]) + "): " + e.what());
    }
    shape = out_shape_of(layers_.back());
  }

  Rng rng(seed);
  for (auto& layer : layers_) {
    if (auto* conv = std::get_if<Conv1D>(&layer)) {
      init_uniform(conv->weight, std::sqrt(1.0 / static_cast<double>(conv->fan_in())), rng);
    } else if (auto* dense = std::get_if<Dense>(&layer)) {
      init_uniform(dense->weight, std::sqrt(1.0 / static_cast<double>(dense->fan_in())), rng);
    }
  }
}

std::size_t Net::n_classes() const { return std::get<SoftmaxOutput>(layers_.back()).spec().classes; }

double Net::temperature() const { return std::get<SoftmaxOutput>(layers_.back()).spec().temperature; }

void Net::set_temperature(double t) { std::get<SoftmaxOutput>(layers_.back()).set_temperature(t); }

std::vector<LayerSpec> Net::specs() const {
  std::vector<LayerSpec> out;
  for (const auto& l : layers_) out.push_back(spec_of(l));
  return out;
}

std::vector<Shape> Net::shape_chain() const {
  std::vector<Shape> out;
  for (const auto& l : layers_) out.push_back(out_shape_of(l));
  return out;
}

Tensor Net::forward(const Tensor& batch, Mode mode, Rng* rng, Tape* tape) const {
  if (tape) tape->caches.assign(layers_.size(), {});
  LayerCache scratch;
  Tensor act = batch;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    LayerCache& cache = tape ? tape->caches[i] : scratch;
    act = std::visit([&](const auto& l) { return l.forward(act, mode, rng, cache); }, layers_[i]);
  }
  return act;
}

Tensor Net::backward(const Tape& tape, const Tensor& grad_logits, std::vector<Tensor>* grads) const {
  if (tape.caches.size() != layers_.size()) throw Error("tape does not belong to this network");
  Tensor grad = grad_logits;
  std::size_t slot = grads ? grads->size() : 0;
  for (std::size_t i = layers_.size(); i-- > 0;) {
    const std::size_t n_params = trainable(layers_[i]).size();
    ParamGrads pg;
    if (grads && n_params > 0) {
      slot -= n_params;
      pg = ParamGrads(grads->data() + slot, n_params);
    }
    grad = std::visit([&](const auto& l) { return l.backward(grad, tape.caches[i], pg); }, layers_[i]);
  }
  return grad;
}

std::vector<Tensor> Net::zero_gradients() const {
  std::vector<Tensor> out;
  for (const auto* p : parameters()) out.emplace_back(p->shape(), 0.0);
  return out;
}

std::vector<Tensor*> Net::parameters() {
  std::vector<Tensor*> out;
  for (auto& l : layers_) {
    for (auto* p : trainable(l)) out.push_back(p);
  }
  return out;
}

std::vector<const Tensor*> Net::parameters() const {
  std::vector<const Tensor*> out;
  for (const auto& l : layers_) {
    for (const auto* p : trainable(l)) out.push_back(p);
  }
  return out;
}

std::size_t Net::parameter_count() const {
  std::size_t n = 0;
  for (const auto* p : parameters()) n += p->size();
  return n;
}

void Net::commit_batch_stats(const Tape& tape) {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (auto* bn = std::get_if<BatchNorm>(&layers_[i])) bn->update_running(tape.caches.at(i));
  }
}

Tensor Net::as_batch(std::span<const double> x) const {
  if (x.size() != input_size()) {
    throw ShapeError("input has " + std::to_string(x.size()) + " values, network expects " +
                     std::to_string(input_size()));
  }
  Shape shape{1};
  shape.insert(shape.end(), input_shape_.begin(), input_shape_.end());
  return Tensor(std::move(shape), std::vector<double>(x.begin(), x.end()));
}

bool operator==(const Net& a, const Net& b) {
  if (a.input_shape_ != b.input_shape_ || a.layers_.size() != b.layers_.size() || a.norm_stats != b.norm_stats) {
    return false;
  }
  for (std::size_t i = 0; i < a.layers_.size(); ++i) {
    if (a.layers_[i].index() != b.layers_[i].index()) return false;
    const auto pa = trainable(a.layers_[i]);
    const auto pb = trainable(b.layers_[i]);
    for (std::size_t k = 0; k < pa.size(); ++k) {
      if (*pa[k] != *pb[k]) return false;
    }
    const auto* ba = std::get_if<BatchNorm>(&a.layers_[i]);
    const auto* bb = std::get_if<BatchNorm>(&b.layers_[i]);
    if (ba && (ba->running_mean != bb->running_mean || ba->running_var != bb->running_var ||
               ba->running_seeded != bb->running_seeded)) {
      return false;
    }
  }
  return a.temperature() == b.temperature();
}

// ---------------------------------------------------------------------------

std::vector<double> predict_logits(const Net& net, std::span<const double> x) {
  return net.forward(net.as_batch(x), Mode::Infer, nullptr, nullptr).to_vector();
}

std::vector<double> predict_proba(const Net& net, std::span<const double> x) {
  return softmax_t(predict_logits(net, x), net.temperature());
}

double loss_value(const Net& net, std::span<const double> x, int label) {
  const auto logits = predict_logits(net, x);
  if (label < 0 || static_cast<std::size_t>(label) >= logits.size()) throw Error("label out of range");
  return -log_softmax_t(logits, net.temperature())[static_cast<std::size_t>(label)];
}

std::vector<double> logit_vjp(const Net& net, std::span<const double> x, std::span<const double> cotangent) {
  if (cotangent.size() != net.n_classes()) throw ShapeError("cotangent length must equal class count");
  Tape tape;
  net.forward(net.as_batch(x), Mode::Infer, nullptr, &tape);
  const Tensor seed({1, net.n_classes()}, std::vector<double>(cotangent.begin(), cotangent.end()));
  return net.backward(tape, seed, nullptr).to_vector();
}

std::vector<double> loss_input_gradient(const Net& net, std::span<const double> x, int label) {
  Tape tape;
  const Tensor logits = net.forward(net.as_batch(x), Mode::Infer, nullptr, &tape);
  if (label < 0 || static_cast<std::size_t>(label) >= logits.size()) throw Error("label out of range");
  const double t = net.temperature();
  auto p = softmax_t(logits.values(), t);
  p[static_cast<std::size_t>(label)] -= 1.0;
  for (double& g : p) g /= t;
  const std::size_t n = p.size();
  const Tensor seed({1, n}, std::move(p));
  return net.backward(tape, seed, nullptr).to_vector();
}

std::vector<double> finite_diff_gradient(const Net& net, std::span<const double> x, int label, double h) {
  if (h == 0.0) throw Error("degenerate step");
  std::vector<double> probe(x.begin(), x.end());
  std::vector<double> grad(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + h;
    const double up = loss_value(net, probe, label);
    probe[i] = orig - h;
    const double down = loss_value(net, probe, label);
    probe[i] = orig;
    grad[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

}  // namespace cloak::nn
