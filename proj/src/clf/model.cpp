#include "cloak/clf/model.hpp"

#include <algorithm>
#include <cmath>

#include "cloak/error.hpp"
#include "cloak/nn/ops.hpp"
#include "cloak/nn/serialize.hpp"
#include "cloak/parallel.hpp"
#include "logits.hpp"

namespace cloak::clf {

std::vector<Example> examples(const Dataset& ds, Split split) {
  std::vector<Example> out;
  for (std::size_t i : ds.indices(split)) out.push_back({ds.traces[i].trace.flat(), ds.traces[i].label});
  return out;
}

int argmax(std::span<const double> v) {
  if (v.empty()) throw Error("argmax of an empty vector");
  return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
}

std::vector<std::vector<double>> Classifier::predict_proba_batch(std::span<const Example> xs) const {
  std::vector<std::vector<double>> out(xs.size());
  parallel_for(xs.size(), [&](std::size_t i) { out[i] = predict_proba(xs[i].x); });
  return out;
}

std::vector<double> Classifier::predict_log_proba(std::span<const double> x) const {
  auto p = predict_proba(x);
  for (double& v : p) v = std::log(v);
  return p;
}

std::vector<double> Classifier::loss_gradient(std::span<const double>, int) const {
  throw Error("attack requires gradients");
}

std::vector<double> Classifier::logit_vjp(std::span<const double>, std::span<const double>) const {
  throw Error("attack requires gradients");
}

NetClassifier::NetClassifier(nn::Net net, std::string family) : net_(std::move(net)), family_(std::move(family)) {}

std::vector<double> NetClassifier::predict_proba(std::span<const double> x) const {
  return nn::predict_proba(net_, x);
}

std::vector<std::vector<double>> NetClassifier::predict_proba_batch(std::span<const Example> xs) const {
  auto logits = batch_logits(net_, xs);
  for (auto& row : logits) row = nn::softmax_t(row, net_.temperature());
  return logits;
}

std::vector<double> NetClassifier::predict_log_proba(std::span<const double> x) const {
  return nn::log_softmax_t(nn::predict_logits(net_, x), net_.temperature());
}

std::vector<double> NetClassifier::loss_gradient(std::span<const double> x, int label) const {
  return nn::loss_input_gradient(net_, x, label);
}

std::vector<double> NetClassifier::logit_vjp(std::span<const double> x, std::span<const double> cotangent) const {
  return nn::logit_vjp(net_, x, cotangent);
}

nlohmann::json NetClassifier::to_json() const {
  auto j = nn::net_to_json(net_);
  j["family"] = family_;
  return j;
}

Evaluation evaluate(const Classifier& clf, std::span<const Example> xs) {
  Evaluation e;
  e.n = xs.size();
  if (xs.empty()) return e;
  const auto probs = clf.predict_proba_batch(xs);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) correct += argmax(probs[i]) == xs[i].label;
  e.accuracy = static_cast<double>(correct) / static_cast<double>(xs.size());
  return e;
}

}  // namespace cloak::clf
