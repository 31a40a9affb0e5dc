#include "cloak/hpc.hpp"

#include <chrono>
#include <csignal>
#include <cstring>

#if defined(__linux__)
#include <linux/perf_event.h>
#include <sys/ioctl.h>
#include <sys/syscall.h>
#include <sys/wait.h>
#include <unistd.h>
#endif

namespace cloak::hpc {

void SampleConfig::validate() const {
  if (interval_us < 1) throw ConfigError("interval_us must be at least 1");
  const std::uint64_t span_us = std::uint64_t{duration_ms} * 1000;
  if (span_us < interval_us) throw ConfigError("duration is shorter than one interval");
  if (span_us % interval_us != 0) throw ConfigError("duration is not a whole number of intervals");
  if (counters.empty()) throw ConfigError("no counters requested");
  if (pid && !command.empty()) throw ConfigError("give either a pid or a command, not both");
}

std::size_t SampleConfig::n_samples() const { return std::uint64_t{duration_ms} * 1000 / interval_us; }

std::vector<CounterStatus> list_counters(CounterSource& source) {
  std::vector<CounterStatus> out;
  for (auto k : kAllCounters) out.push_back({k, source.available(k)});
  return out;
}

std::vector<CounterStatus> list_counters() {
  auto source = make_perf_source();
  return list_counters(*source);
}

Trace sample(CounterSource& source, TickClock& clock, int pid, const SampleConfig& config) {
  config.validate();
  for (auto k : config.counters) {
    if (!source.available(k)) throw Error("counter unavailable: " + std::string(to_string(k)));
  }
  const std::size_t n = config.n_samples();
  const std::size_t c = config.counters.size();
  source.attach(pid, config.counters);

  std::vector<double> values(c * n);
  auto prev = source.read();
  const std::int64_t start = clock.now_us();
  for (std::size_t s = 0; s < n; ++s) {
    clock.wait_until(start + static_cast<std::int64_t>((s + 1) * config.interval_us));
    const auto cur = source.read();
    if (!source.target_alive()) {
      throw PartialTraceError("target exited after " + std::to_string(s) + " of " + std::to_string(n) + " samples");
    }
    for (std::size_t k = 0; k < c; ++k) {
      // Counters only grow; a reset reads as zero activity.
      values[k * n + s] = cur[k] >= prev[k] ? static_cast<double>(cur[k] - prev[k]) : 0.0;
    }
    prev = cur;
  }
  const double elapsed = static_cast<double>(clock.now_us() - start);
  if (elapsed > 1.5 * static_cast<double>(n) * config.interval_us) {
    throw TimingError("mean tick took " + std::to_string(elapsed / static_cast<double>(n)) + " us, asked for " +
                      std::to_string(config.interval_us));
  }
  return Trace(config.counters, n, std::move(values), false, config.interval_us);
}

namespace {

class SteadyClock final : public TickClock {
 public:
  std::int64_t now_us() override {
    return std::chrono::duration_cast<std::chrono::microseconds>(std::chrono::steady_clock::now().time_since_epoch())
        .count();
  }
  void wait_until(std::int64_t t_us) override {
    while (now_us() < t_us) {
    }
  }
};

#if defined(__linux__)

struct EventCode {
  std::uint32_t type;
  std::uint64_t config;
};

EventCode event_code(CounterKind kind) {
  auto cache = [](std::uint64_t id) {
    return EventCode{PERF_TYPE_HW_CACHE,
                     id | (PERF_COUNT_HW_CACHE_OP_READ << 8) | (PERF_COUNT_HW_CACHE_RESULT_MISS << 16)};
  };
  switch (kind) {
    case CounterKind::TotalInstructions: return {PERF_TYPE_HARDWARE, PERF_COUNT_HW_INSTRUCTIONS};
    case CounterKind::BranchInstructions: return {PERF_TYPE_HARDWARE, PERF_COUNT_HW_BRANCH_INSTRUCTIONS};
    case CounterKind::TotalCacheReferences: return {PERF_TYPE_HARDWARE, PERF_COUNT_HW_CACHE_REFERENCES};
    case CounterKind::L1InstructionCacheMiss: return cache(PERF_COUNT_HW_CACHE_L1I);
    case CounterKind::L1DataCacheMiss: return cache(PERF_COUNT_HW_CACHE_L1D);
  }
  throw Error("unknown counter");
}

int open_event(CounterKind kind, int pid) {
  perf_event_attr attr;
  std::memset(&attr, 0, sizeof attr);
  attr.size = sizeof attr;
  const auto code = event_code(kind);
  attr.type = code.type;
  attr.config = code.config;
  attr.disabled = 1;
  attr.exclude_kernel = 1;
  attr.exclude_hv = 1;
  attr.inherit = 1;
  return static_cast<int>(syscall(SYS_perf_event_open, &attr, pid, -1, -1, 0));
}

class PerfSource final : public CounterSource {
 public:
  ~PerfSource() override { close_all(); }

  bool available(CounterKind kind) override {
    const int fd = open_event(kind, 0);
    if (fd < 0) return false;
    close(fd);
    return true;
  }

  void attach(int pid, const std::vector<CounterKind>& counters) override {
    close_all();
    pid_ = pid;
    for (auto k : counters) {
      const int fd = open_event(k, pid);
      if (fd < 0) {
        close_all();
        throw Error("cannot open counter " + std::string(to_string(k)) + ": " + std::strerror(errno));
      }
      fds_.push_back(fd);
    }
    for (int fd : fds_) ioctl(fd, PERF_EVENT_IOC_ENABLE, 0);
  }

  std::vector<std::uint64_t> read() override {
    std::vector<std::uint64_t> out(fds_.size());
    for (std::size_t i = 0; i < fds_.size(); ++i) {
      if (::read(fds_[i], &out[i], sizeof out[i]) != static_cast<ssize_t>(sizeof out[i])) {
        throw Error("counter read failed");
      }
    }
    return out;
  }

  bool target_alive() override {
    int status = 0;
    // Reaps our own child if it exited; harmless for foreign processes.
    if (waitpid(pid_, &status, WNOHANG) == pid_) return false;
    return kill(pid_, 0) == 0 || errno != ESRCH;
  }

 private:
  void close_all() {
    for (int fd : fds_) close(fd);
    fds_.clear();
  }

  std::vector<int> fds_;
  int pid_ = -1;
};

#else

class PerfSource final : public CounterSource {
 public:
  bool available(CounterKind) override { return false; }
  void attach(int, const std::vector<CounterKind>&) override {
    throw Error("hardware counters are not supported on this platform");
  }
  std::vector<std::uint64_t> read() override { return {}; }
  bool target_alive() override { return false; }
};

#endif

}  // namespace

std::unique_ptr<CounterSource> make_perf_source() { return std::make_unique<PerfSource>(); }
std::unique_ptr<TickClock> make_steady_clock() { return std::make_unique<SteadyClock>(); }

Trace sample_process(const SampleConfig& config) {
  config.validate();
  auto source = make_perf_source();
  auto clock = make_steady_clock();
  if (config.pid) return sample(*source, *clock, *config.pid, config);
  if (config.command.empty()) throw ConfigError("need a pid or a command");
#if defined(__linux__)
  for (auto k : config.counters) {
    if (!source->available(k)) throw Error("counter unavailable: " + std::string(to_string(k)));
  }
  // The child waits on a pipe until the counters are attached.
  int gate[2];
  if (pipe(gate) != 0) throw Error("pipe failed");
  const pid_t child = fork();
  if (child < 0) throw Error("fork failed");
  if (child == 0) {
    close(gate[1]);
    char byte;
    if (::read(gate[0], &byte, 1) != 1) _exit(127);
    std::vector<char*> argv;
    for (const auto& a : config.command) argv.push_back(const_cast<char*>(a.c_str()));
    argv.push_back(nullptr);
    execvp(argv[0], argv.data());
    _exit(127);
  }
  close(gate[0]);
  struct Reaper {
    pid_t pid;
    ~Reaper() {
      kill(pid, SIGKILL);
      waitpid(pid, nullptr, 0);
    }
  } reaper{child};

  class GatedSource final : public CounterSource {
   public:
    GatedSource(CounterSource& inner, int fd) : inner_(inner), fd_(fd) {}
    bool available(CounterKind k) override { return inner_.available(k); }
    void attach(int pid, const std::vector<CounterKind>& counters) override {
      inner_.attach(pid, counters);
      const char go = 1;
      if (write(fd_, &go, 1) != 1) throw Error("could not start the target");
      close(fd_);
    }
    std::vector<std::uint64_t> read() override { return inner_.read(); }
    bool target_alive() override { return inner_.target_alive(); }

   private:
    CounterSource& inner_;
    int fd_;
  } gated(*source, gate[1]);
  return sample(gated, *clock, child, config);
#else
  throw Error("launching a target is not supported on this platform");
#endif
}

}  // namespace cloak::hpc
