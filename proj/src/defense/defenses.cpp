#include "cloak/defenses.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cloak/error.hpp"
#include "cloak/nn/ops.hpp"

namespace cloak::defense {
namespace {

constexpr std::size_t kEntropySamples = 100;

}  // namespace

std::vector<AdvSample> successful_samples(const attack::AttackRun& run) {
  std::vector<AdvSample> out;
  for (const auto& r : run.results) {
    if (r.success) out.push_back({r.x_adv, r.orig_label});
  }
  return out;
}

std::vector<clf::Example> as_examples(std::span<const AdvSample> samples) {
  std::vector<clf::Example> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back({s.x, s.label});
  return out;
}

std::vector<AdvSample> craft_adversarial_set(const clf::Classifier& model, std::span<const clf::Example> split,
                                             std::size_t row_len, attack::AttackKind kind,
                                             const attack::AttackParams& params, std::size_t n) {
  // Sample i of a run does not depend on the run length, so a longer run
  // extends a shorter one.
  std::size_t attempts = n;
  while (true) {
    const auto run = attack::evaluate_attack(model, split, row_len, kind, params, attempts);
    auto adv = successful_samples(run);
    if (adv.size() >= n || run.summary.short_of_samples || attempts >= split.size()) {
      if (adv.size() > n) adv.resize(n);
      return adv;
    }
    const double rate = std::max(static_cast<double>(adv.size()), 1.0) / static_cast<double>(attempts);
    const auto wanted = static_cast<std::size_t>(std::ceil(1.1 * static_cast<double>(n) / rate));
    attempts = std::min(split.size(), std::max(wanted, attempts + 1));
  }
}

void RetrainConfig::validate() const {
  if (n_adversarial < 1) throw ConfigError("n_adversarial must be at least 1");
  train.validate();
}

std::pair<nn::Net, clf::History> adversarial_retrain(const nn::Net& model, const Dataset& ds,
                                                     std::span<const AdvSample> adv, const RetrainConfig& config) {
  config.train.validate();
  if (model.norm_stats != ds.norm_stats) throw Error("model and dataset normalization differ");
  for (const auto& s : adv) {
    if (s.x.size() != model.input_size()) throw ShapeError("adversarial sample length does not match the model");
  }
  nn::Net out = model;
  clf::FitData data{clf::examples(ds, Split::Train), {}, as_examples(adv)};
  auto h = clf::fit(out, data, clf::examples(ds, Split::Val), config.train);
  return {std::move(out), std::move(h)};
}

void DistillConfig::validate() const {
  if (!(temperature > 0.0) || !std::isfinite(temperature)) throw ConfigError("temperature must be positive");
  teacher.validate();
  student.validate();
}

double mean_prediction_entropy(const nn::Net& net, std::span<const clf::Example> xs) {
  if (xs.empty()) throw Error("entropy of an empty set");
  const auto probs = clf::NetClassifier(net, "cnn").predict_proba_batch(xs);
  double total = 0.0;
  for (const auto& p : probs) total += nn::entropy(p);
  return total / static_cast<double>(xs.size());
}

DistillResult distill(const Dataset& ds, const clf::CnnConfig& arch, const DistillConfig& config) {
  config.validate();
  DistillResult r;

  auto teacher = clf::build_cnn(arch, config.teacher.seed);
  teacher.set_temperature(config.temperature);
  std::tie(r.teacher, r.teacher_history) = clf::train_cnn(teacher, ds, config.teacher);

  const auto train = clf::examples(ds, Split::Train);
  const auto val = clf::examples(ds, Split::Val);
  clf::FitData data{train, clf::NetClassifier(r.teacher, "cnn").predict_proba_batch(train), {}};

  const std::span<const clf::Example> probe = val.empty() ? std::span<const clf::Example>(train) : val;
  r.teacher_entropy = mean_prediction_entropy(r.teacher, probe.first(std::min(kEntropySamples, probe.size())));

  r.student = clf::build_cnn(arch, config.student.seed);
  r.student.set_temperature(config.temperature);
  r.student.norm_stats = ds.norm_stats;
  r.student_history = clf::fit(r.student, data, val, config.student);
  r.student.set_temperature(1.0);
  return r;
}

double invalidation_rate(const clf::Classifier& hardened, std::span<const AdvSample> adv) {
  if (adv.empty()) throw Error("invalidation rate of an empty adversarial set");
  const auto xs = as_examples(adv);
  return clf::evaluate(hardened, xs).accuracy;
}

}  // namespace cloak::defense
