#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "cloak/attacks.hpp"
#include "cloak/clf/cnn.hpp"
#include "cloak/clf/model.hpp"
#include "cloak/nn/net.hpp"
#include "cloak/trace.hpp"

namespace cloak::defense {

/// An adversarial trace labeled with the class it was crafted away from.
struct AdvSample {
  std::vector<double> x;
  int label = -1;
};

/// The successful results of an attack run, with their true labels.
std::vector<AdvSample> successful_samples(const attack::AttackRun& run);

std::vector<clf::Example> as_examples(std::span<const AdvSample> samples);

/// Crafts `kind` against correctly classified traces of `split` until `n`
/// attacks have succeeded or the split runs out; returns at most n samples.
std::vector<AdvSample> craft_adversarial_set(const clf::Classifier& model, std::span<const clf::Example> split,
                                             std::size_t row_len, attack::AttackKind kind,
                                             const attack::AttackParams& params, std::size_t n);

struct RetrainConfig {
  attack::AttackKind kind = attack::AttackKind::GSA;
  std::size_t n_adversarial = 1000;
  clf::TrainConfig train{5, 64, 1, {}};  // epochs, batch, seed, adam

  void validate() const;
};

/// Continues training a copy of `model` on the train split, each batch half
/// clean and half adversarial (clean only when `adv` is empty).
std::pair<nn::Net, clf::History> adversarial_retrain(const nn::Net& model, const Dataset& ds,
                                                     std::span<const AdvSample> adv, const RetrainConfig& config);

inline constexpr std::array<double, 9> kDistillTemperatures = {1, 2, 5, 10, 20, 30, 40, 50, 100};

struct DistillConfig {
  double temperature = 10.0;
  clf::TrainConfig teacher;
  clf::TrainConfig student;

  void validate() const;
};

struct DistillResult {
  nn::Net teacher;  // temperature T
  nn::Net student;  // deployed at temperature 1
  clf::History teacher_history;
  clf::History student_history;
  double teacher_entropy = 0.0;  // mean soft-label entropy on up to 100 val traces
};

/// Teacher at temperature T on hard labels, soft labels from the teacher at
/// T on the train split, student of the same architecture at T against
/// them. The student is returned at temperature 1.
DistillResult distill(const Dataset& ds, const clf::CnnConfig& arch, const DistillConfig& config);

/// Mean Shannon entropy (nats) of softmax(z / net.temperature()).
double mean_prediction_entropy(const nn::Net& net, std::span<const clf::Example> xs);

/// Fraction of `adv` the hardened model assigns its true label.
double invalidation_rate(const clf::Classifier& hardened, std::span<const AdvSample> adv);

}  // namespace cloak::defense
