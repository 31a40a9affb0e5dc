#include "cloak/trace.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include "cloak/error.hpp"
#include "cloak/rng.hpp"

namespace cloak {

std::string_view to_string(CounterKind kind) {
  switch (kind) {
    case CounterKind::TotalInstructions: return "total_instructions";
    case CounterKind::BranchInstructions: return "branch_instructions";
    case CounterKind::TotalCacheReferences: return "total_cache_references";
    case CounterKind::L1InstructionCacheMiss: return "l1_instruction_cache_miss";
    case CounterKind::L1DataCacheMiss: return "l1_data_cache_miss";
  }
  return "unknown";
}

std::optional<CounterKind> parse_counter(std::string_view name) {
  for (auto kind : kAllCounters) {
    if (to_string(kind) == name) return kind;
  }
  return std::nullopt;
}

std::vector<CounterKind> default_counters(std::size_t n) {
  if (n == 0 || n > kAllCounters.size()) {
    throw ConfigError("counter count must be in [1, 5], got " + std::to_string(n));
  }
  return {kAllCounters.begin(), kAllCounters.begin() + static_cast<std::ptrdiff_t>(n)};
}

std::string_view to_string(Split split) {
  switch (split) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "unknown";
}

// ---------------------------------------------------------------------------
// Trace

Trace::Trace(std::vector<CounterKind> counters, std::size_t n_samples, std::vector<double> values, bool normalized,
             std::uint32_t interval_us)
    : counters_(std::move(counters)),
      n_samples_(n_samples),
      values_(std::move(values)),
      normalized_(normalized),
      interval_us_(interval_us) {
  validate();
}

Trace Trace::zeros(std::size_t n_counters, std::size_t n_samples, bool normalized, std::uint32_t interval_us) {
  return Trace(default_counters(n_counters), n_samples, std::vector<double>(n_counters * n_samples, 0.0), normalized,
               interval_us);
}

Trace Trace::with_values(std::vector<double> values) const {
  return Trace(counters_, n_samples_, std::move(values), normalized_, interval_us_);
}

void Trace::validate() const {
  if (counters_.empty()) throw ShapeError("trace needs at least one counter");
  if (n_samples_ == 0) throw ShapeError("trace needs at least one sample");
  if (values_.size() != counters_.size() * n_samples_) {
    throw ShapeError("trace has " + std::to_string(values_.size()) + " values, expected " +
                     std::to_string(counters_.size()) + "x" + std::to_string(n_samples_));
  }
  for (double v : values_) {
    if (!std::isfinite(v)) throw Error("trace contains a non-finite value");
    if (normalized_ ? (v < 0.0 || v > 1.0) : v < 0.0) {
      throw Error(normalized_ ? "normalized trace value outside [0, 1]" : "raw trace value is negative");
    }
  }
}

// ---------------------------------------------------------------------------
// NormStats

NormStats NormStats::identity(std::size_t n_counters) {
  return NormStats{std::vector<std::pair<double, double>>(n_counters, {0.0, 1.0})};
}

Trace NormStats::normalize(const Trace& raw) const {
  if (raw.normalized()) throw Error("trace is already normalized");
  if (raw.n_counters() != range.size()) throw ShapeError("NormStats counter count does not match trace");
  std::vector<double> out(raw.size());
  for (std::size_t c = 0; c < raw.n_counters(); ++c) {
    const auto [lo, hi] = range[c];
    const auto row = raw.row(c);
    for (std::size_t s = 0; s < row.size(); ++s) {
      double v = 0.5;
      if (hi > lo) v = std::clamp((row[s] - lo) / (hi - lo), 0.0, 1.0);
      out[c * raw.n_samples() + s] = v;
    }
  }
  return Trace(raw.counters(), raw.n_samples(), std::move(out), true, raw.interval_us());
}

Trace NormStats::denormalize(const Trace& normalized) const {
  if (!normalized.normalized()) throw Error("trace is not normalized");
  if (normalized.n_counters() != range.size()) throw ShapeError("NormStats counter count does not match trace");
  std::vector<double> out(normalized.size());
  for (std::size_t c = 0; c < normalized.n_counters(); ++c) {
    const auto [lo, hi] = range[c];
    const auto row = normalized.row(c);
    for (std::size_t s = 0; s < row.size(); ++s) {
      out[c * normalized.n_samples() + s] = hi > lo ? lo + row[s] * (hi - lo) : lo;
    }
  }
  return Trace(normalized.counters(), normalized.n_samples(), std::move(out), false, normalized.interval_us());
}

// ---------------------------------------------------------------------------
// Dataset

std::vector<std::size_t> Dataset::indices(Split split) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < splits.size(); ++i) {
    if (splits[i] == split) out.push_back(i);
  }
  return out;
}

std::size_t Dataset::count(Split split) const {
  return static_cast<std::size_t>(std::count(splits.begin(), splits.end(), split));
}

void Dataset::validate() const {
  if (splits.size() != traces.size()) throw Error("dataset split tags do not cover every trace");
  std::vector<bool> in_train(static_cast<std::size_t>(std::max(n_classes, 0)), false);
  for (std::size_t i = 0; i < traces.size(); ++i) {
    const int label = traces[i].label;
    if (label < 0 || label >= n_classes) {
      throw Error("trace " + std::to_string(i) + " has label " + std::to_string(label) + " outside [0, " +
                  std::to_string(n_classes) + ")");
    }
    if (splits[i] == Split::Train) in_train[static_cast<std::size_t>(label)] = true;
  }
  for (std::size_t i = 0; i < traces.size(); ++i) {
    if (splits[i] != Split::Train && !in_train[static_cast<std::size_t>(traces[i].label)]) {
      throw Error("class " + std::to_string(traces[i].label) + " appears in " + std::string(to_string(splits[i])) +
                  " but not in train");
    }
  }
}

std::pair<Dataset, NormStats> normalize_dataset(const Dataset& raw) {
  const auto train = raw.indices(Split::Train);
  if (train.empty()) throw Error("no training data");
  const std::size_t n_counters = raw.traces[train.front()].trace.n_counters();

  NormStats stats;
  stats.range.assign(n_counters, {std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()});
  for (auto i : train) {
    const Trace& t = raw.traces[i].trace;
    if (t.normalized()) throw Error("normalize_dataset expects raw traces");
    if (t.n_counters() != n_counters) throw ShapeError("traces disagree on counter count");
    for (std::size_t c = 0; c < n_counters; ++c) {
      const auto [mn, mx] = std::minmax_element(t.row(c).begin(), t.row(c).end());
      stats.range[c].first = std::min(stats.range[c].first, *mn);
      stats.range[c].second = std::max(stats.range[c].second, *mx);
    }
  }

  Dataset out = raw;
  for (auto& lt : out.traces) lt.trace = stats.normalize(lt.trace);
  out.norm_stats = stats;
  return {std::move(out), std::move(stats)};
}

Dataset split_dataset(const Dataset& dataset, SplitRatios ratios, std::uint64_t seed) {
  if (ratios.train <= 0 || ratios.val <= 0 || ratios.test <= 0 ||
      std::abs(ratios.train + ratios.val + ratios.test - 1.0) > 1e-9) {
    throw ConfigError("split ratios must be positive and sum to 1");
  }
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < dataset.traces.size(); ++i) by_class[dataset.traces[i].label].push_back(i);

  Dataset out = dataset;
  out.splits.assign(dataset.traces.size(), Split::Train);
  for (auto& [label, members] : by_class) {
    if (members.size() < 3) {
      throw Error("class too small to stratify: class " + std::to_string(label) + " has " +
                  std::to_string(members.size()) + " traces");
    }
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(label)));
    rng.shuffle(members.begin(), members.end());
    const auto n = static_cast<double>(members.size());
    const auto n_val = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(n * ratios.val)));
    const auto n_test = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(n * ratios.test)));
    const auto n_train = members.size() - std::min(members.size() - 1, n_val + n_test);
    for (std::size_t k = 0; k < members.size(); ++k) {
      Split s = Split::Test;
      if (k < n_train) {
        s = Split::Train;
      } else if (k < n_train + n_val) {
        s = Split::Val;
      }
      out.splits[members[k]] = s;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Distances

Distances distance(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("distance: traces differ in size");
  if (a.empty()) return {};
  double abs_sum = 0.0;
  double sq_sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    abs_sum += std::abs(d);
    sq_sum += d * d;
  }
  const auto n = static_cast<double>(a.size());
  return {abs_sum / n, sq_sum / n};
}

Distances distance(const Trace& a, const Trace& b) {
  if (!a.same_shape(b)) throw ShapeError("distance: trace shapes differ");
  if (a.normalized() != b.normalized()) throw Error("distance: mixing raw and normalized traces");
  return distance(a.flat(), b.flat());
}

}  // namespace cloak
