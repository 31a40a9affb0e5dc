#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace cloak {

/// The five interval counters a trace is built from. Order is part of the
/// on-disk format.
enum class CounterKind : std::uint8_t {
  TotalInstructions = 0,
  BranchInstructions = 1,
  TotalCacheReferences = 2,
  L1InstructionCacheMiss = 3,
  L1DataCacheMiss = 4,
};

inline constexpr std::array<CounterKind, 5> kAllCounters = {
    CounterKind::TotalInstructions, CounterKind::BranchInstructions, CounterKind::TotalCacheReferences,
    CounterKind::L1InstructionCacheMiss, CounterKind::L1DataCacheMiss};

std::string_view to_string(CounterKind kind);
std::optional<CounterKind> parse_counter(std::string_view name);

/// First `n` counters in canonical order.
std::vector<CounterKind> default_counters(std::size_t n);

/// Interval HPC counts, one row per counter. Values are stored counter-major
/// so `flat()` is the sequence a classifier consumes.
class Trace {
 public:
  Trace() = default;
  Trace(std::vector<CounterKind> counters, std::size_t n_samples, std::vector<double> values, bool normalized,
        std::uint32_t interval_us = 10);

  /// All-zero trace of the given geometry.
  static Trace zeros(std::size_t n_counters, std::size_t n_samples, bool normalized, std::uint32_t interval_us = 10);

  std::size_t n_counters() const noexcept { return counters_.size(); }
  std::size_t n_samples() const noexcept { return n_samples_; }
  std::size_t size() const noexcept { return values_.size(); }
  bool normalized() const noexcept { return normalized_; }
  std::uint32_t interval_us() const noexcept { return interval_us_; }
  const std::vector<CounterKind>& counters() const noexcept { return counters_; }

  double at(std::size_t counter, std::size_t sample) const { return values_[counter * n_samples_ + sample]; }
  std::span<const double> row(std::size_t counter) const {
    return {values_.data() + counter * n_samples_, n_samples_};
  }
  std::span<const double> flat() const noexcept { return values_; }

  /// Same geometry and flags, new values. Re-validates invariants.
  Trace with_values(std::vector<double> values) const;

  bool same_shape(const Trace& other) const noexcept {
    return n_samples_ == other.n_samples_ && counters_ == other.counters_;
  }

  friend bool operator==(const Trace&, const Trace&) = default;

 private:
  void validate() const;

  std::vector<CounterKind> counters_;
  std::size_t n_samples_ = 0;
  std::vector<double> values_;
  bool normalized_ = false;
  std::uint32_t interval_us_ = 10;
};

struct LabeledTrace {
  Trace trace;
  int label = -1;  // -1 marks an unlabeled trace (fresh collection)

  friend bool operator==(const LabeledTrace&, const LabeledTrace&) = default;
};

/// Per-counter (min, max) over the training split.
struct NormStats {
  std::vector<std::pair<double, double>> range;

  /// [0, 1] for each counter; used for traces that are generated normalized.
  static NormStats identity(std::size_t n_counters);

  Trace normalize(const Trace& raw) const;
  Trace denormalize(const Trace& normalized) const;

  friend bool operator==(const NormStats&, const NormStats&) = default;
};

enum class Split : std::uint8_t { Train, Val, Test };

std::string_view to_string(Split split);

struct SplitRatios {
  double train = 0.8;
  double val = 0.1;
  double test = 0.1;
};

struct Dataset {
  std::vector<LabeledTrace> traces;
  std::vector<Split> splits;  // parallel to traces
  int n_classes = 0;
  std::optional<NormStats> norm_stats;
  std::vector<std::string> class_names;  // optional display labels

  std::size_t size() const noexcept { return traces.size(); }
  std::vector<std::size_t> indices(Split split) const;
  std::size_t count(Split split) const;

  /// Checks label ranges, split arity and that val/test classes appear in train.
  void validate() const;
};

/// Fits NormStats on the train split and maps every trace into [0, 1].
std::pair<Dataset, NormStats> normalize_dataset(const Dataset& raw);

/// Per-class stratified shuffle into train/val/test.
Dataset split_dataset(const Dataset& dataset, SplitRatios ratios, std::uint64_t seed);

struct Distances {
  double mad = 0.0;
  double msd = 0.0;
};

Distances distance(const Trace& a, const Trace& b);
Distances distance(std::span<const double> a, std::span<const double> b);

}  // namespace cloak
