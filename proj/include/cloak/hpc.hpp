#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "cloak/error.hpp"
#include "cloak/trace.hpp"

namespace cloak::hpc {

/// The sampler could not keep its tick schedule.
class TimingError : public Error {
 public:
  using Error::Error;
};

/// The target exited before the trace was complete.
class PartialTraceError : public Error {
 public:
  using Error::Error;
};

struct SampleConfig {
  std::optional<int> pid;            // attach to a running process
  std::vector<std::string> command;  // or launch this one
  std::uint32_t interval_us = 10;
  std::uint32_t duration_ms = 10;
  std::vector<CounterKind> counters{kAllCounters.begin(), kAllCounters.end()};

  /// Checks interval >= 1, duration covers one interval and divides evenly.
  void validate() const;
  std::size_t n_samples() const;
};

struct CounterStatus {
  CounterKind kind;
  bool available = false;
};

/// Cumulative event counts for one target.
class CounterSource {
 public:
  virtual ~CounterSource() = default;
  virtual bool available(CounterKind kind) = 0;
  /// Opens and starts the counters; reads follow in the same order.
  virtual void attach(int pid, const std::vector<CounterKind>& counters) = 0;
  virtual std::vector<std::uint64_t> read() = 0;
  virtual bool target_alive() = 0;
};

/// Microsecond clock the sampler paces itself with.
class TickClock {
 public:
  virtual ~TickClock() = default;
  virtual std::int64_t now_us() = 0;
  virtual void wait_until(std::int64_t t_us) = 0;
};

/// Linux perf_event_open. On other platforms every counter is unavailable
/// and attach() throws.
std::unique_ptr<CounterSource> make_perf_source();

/// Steady clock with a spin wait (sleeps are far coarser than 10 us).
std::unique_ptr<TickClock> make_steady_clock();

/// All five counters in canonical order.
std::vector<CounterStatus> list_counters(CounterSource& source);
std::vector<CounterStatus> list_counters();

/// Reads `config.counters` once per tick and stores the per-interval deltas
/// as a raw Trace. Throws when a counter is unavailable, the target exits
/// early, or the mean tick length exceeds 1.5 intervals.
Trace sample(CounterSource& source, TickClock& clock, int pid, const SampleConfig& config);

/// sample() with the perf source; launches `config.command` when no pid is
/// given and kills it once the trace is complete.
Trace sample_process(const SampleConfig& config);

}  // namespace cloak::hpc
