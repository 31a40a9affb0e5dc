#include <doctest.h>

#include <sstream>

#include "cloak/hpc.hpp"
#include "cloak/trace_csv.hpp"

using namespace cloak;
using namespace cloak::hpc;

namespace {

// Counter k grows by (k + 1) * tick per read; the target dies after `life` reads.
class FakeSource final : public CounterSource {
 public:
  std::vector<bool> present = std::vector<bool>(5, true);
  std::size_t life = 1u << 30;
  std::size_t reads = 0;

  bool available(CounterKind k) override { return present[static_cast<std::size_t>(k)]; }
  void attach(int, const std::vector<CounterKind>& counters) override { counters_ = counters; }
  std::vector<std::uint64_t> read() override {
    std::vector<std::uint64_t> out;
    for (auto k : counters_) out.push_back(reads * reads * (static_cast<std::uint64_t>(k) + 1));
    ++reads;
    return out;
  }
  bool target_alive() override { return reads <= life; }

 private:
  std::vector<CounterKind> counters_;
};

class FakeClock final : public TickClock {
 public:
  std::int64_t t = 0;
  std::int64_t step = 0;  // shortest possible tick, in microseconds
  std::int64_t now_us() override { return t; }
  void wait_until(std::int64_t target) override { t = std::max(t + step, target); }
};

}  // namespace

TEST_CASE("sample config") {
  SampleConfig c;
  CHECK_NOTHROW(c.validate());
  CHECK(c.n_samples() == 1000);
  c.interval_us = 20000;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.interval_us = 3;
  CHECK_THROWS_AS(c.validate(), ConfigError);  // 10000 / 3 is not whole
  c.interval_us = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("list_counters") {
  FakeSource src;
  auto all = list_counters(src);
  REQUIRE(all.size() == 5);
  for (std::size_t i = 0; i < 5; ++i) {
    CHECK(all[i].kind == kAllCounters[i]);
    CHECK(all[i].available);
  }
  src.present.assign(5, false);
  for (const auto& s : list_counters(src)) CHECK_FALSE(s.available);
  CHECK(list_counters().size() == 5);  // host query never throws
}

TEST_CASE("sampling with a fake source") {
  FakeSource src;
  FakeClock clock;
  SampleConfig c;
  const auto t = sample(src, clock, 1, c);
  CHECK(t.n_counters() == 5);
  CHECK(t.n_samples() == 1000);
  CHECK(t.size() == 5000);
  CHECK_FALSE(t.normalized());
  // Deltas of k * s^2: (k + 1) * (2s + 1) at tick s.
  CHECK(t.at(0, 0) == 1);
  CHECK(t.at(2, 4) == 3 * 9);
  for (double v : t.flat()) CHECK(v >= 0.0);

  Dataset ds;
  ds.n_classes = 0;
  ds.traces.push_back({t, -1});
  ds.splits.push_back(Split::Train);
  std::stringstream csv;
  write_trace_csv(csv, ds);
  const auto back = read_trace_csv(csv);
  CHECK(back.traces[0].label == -1);
  CHECK(back.traces[0].trace == t);
}

TEST_CASE("sampling errors") {
  FakeSource src;
  FakeClock clock;
  SampleConfig c;
  SUBCASE("unavailable counter") {
    src.present[3] = false;
    CHECK_THROWS_WITH(sample(src, clock, 1, c), doctest::Contains("l1_instruction_cache_miss"));
  }
  SUBCASE("target exits") {
    src.life = 10;
    CHECK_THROWS_AS(sample(src, clock, 1, c), PartialTraceError);
  }
  SUBCASE("ticks overrun") {
    clock.step = 16;
    CHECK_THROWS_AS(sample(src, clock, 1, c), TimingError);
  }
  SUBCASE("small lag is tolerated") {
    clock.step = 14;
    CHECK_NOTHROW(sample(src, clock, 1, c));
  }
}
