#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <utility>
#include <vector>

#include "cloak/clf/model.hpp"
#include "cloak/nn/net.hpp"
#include "cloak/nn/ops.hpp"

namespace cloak::clf {

/// The 12-layer stack: Conv-Pool-BN-Drop, Conv-Pool-BN-Drop, Flatten,
/// Dense-Drop, Dense + softmax. Input is one channel of input_len values.
struct CnnConfig {
  std::size_t input_len = 5000;
  std::size_t conv1_filters = 50;
  std::size_t conv1_k = 10;
  std::size_t pool = 10;
  std::size_t conv2_filters = 100;
  std::size_t conv2_k = 10;
  std::size_t dense = 400;
  double dropout = 0.25;
  std::size_t n_classes = 20;

  std::vector<nn::LayerSpec> layers() const;
};

nn::Net build_cnn(const CnnConfig& config, std::uint64_t seed);

/// Multinomial softmax regression: one Dense layer on the flat input.
nn::Net build_linear(std::size_t input_len, std::size_t n_classes, std::uint64_t seed);

struct TrainConfig {
  std::size_t epochs = 20;
  std::size_t batch_size = 64;
  std::uint64_t seed = 1;
  nn::AdamConfig adam;

  void validate() const;
};

/// Per-epoch metrics. Train metrics are running averages over the epoch's
/// batches (train mode); val metrics are computed in inference mode after
/// the epoch. Val entries are NaN when there is no val data.
struct History {
  std::vector<double> train_accuracy;
  std::vector<double> val_accuracy;
  std::vector<double> train_loss;
  std::vector<double> val_loss;

  std::size_t epochs() const noexcept { return train_loss.size(); }
  void write_csv(std::ostream& out) const;
  friend bool operator==(const History&, const History&) = default;
};

/// What fit() trains on. `soft`, when nonempty, holds one target
/// distribution per primary example and replaces the one-hot labels.
/// When `mixin` is nonempty every batch is half primary, half mixin; the
/// mixin stream cycles with its own shuffle.
struct FitData {
  std::vector<Example> primary;
  std::vector<std::vector<double>> soft;
  std::vector<Example> mixin;
};

/// Mini-batch Adam on cross-entropy of softmax(z / T) against the targets,
/// T = net.temperature(). An epoch is one shuffled pass over `primary`; a
/// trailing batch of one is skipped (batch norm needs two). Throws Error
/// naming the epoch and batch on a non-finite loss.
History fit(nn::Net& net, const FitData& data, std::span<const Example> val, const TrainConfig& config);

/// Trains a copy of `net` on the train split, validating on val. The result
/// carries the dataset's NormStats.
std::pair<nn::Net, History> train_cnn(const nn::Net& net, const Dataset& ds, const TrainConfig& config);

/// Class probabilities of a normalized trace.
std::vector<double> predict(const nn::Net& net, const Trace& trace);

struct NetEvaluation {
  double accuracy = 0.0;
  double loss = 0.0;
};

/// Accuracy and mean cross-entropy in inference mode, batched in fixed
/// chunks so results do not depend on thread count.
NetEvaluation evaluate_net(const nn::Net& net, std::span<const Example> xs);

}  // namespace cloak::clf
