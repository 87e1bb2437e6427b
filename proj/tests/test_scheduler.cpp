#include <doctest.h>

#include <cmath>

#include "aesrl/scheduler.hpp"

using namespace aesrl;

namespace {

void check_conservation(const ScheduleStats& s) {
  double sum = 0.0;
  for (std::size_t w = 0; w < s.busy.size(); ++w) {
    CHECK(s.idle[w] >= 0.0);
    CHECK(s.idle[w] <= s.makespan + 1e-9);
    sum += s.busy[w] + s.idle[w];
  }
  CHECK(std::abs(sum - s.workers * s.makespan) <= 1e-9 * std::max(1.0, s.makespan));
}

std::vector<double> lognormal_trace(std::size_t n, std::uint64_t seed) {
  LatencyModel m;
  m.kind = LatencyKind::Lognormal;
  m.sigma_log = 0.5;
  Rng rng(seed);
  std::vector<double> t;
  for (std::size_t i = 0; i < n; ++i) t.push_back(m.latency(0, 0, rng));
  return t;
}

}  // namespace

TEST_SUITE("async-engine timing") {

TEST_CASE("barrier arithmetic") {
  const std::vector<double> trace{1, 2, 3, 4, 5};
  const auto s = simulate_parallel_sync(trace, 5, 5, 5);
  CHECK(s.makespan == 5.0);
  CHECK(std::abs(s.total_idle() - 10.0) <= 1e-12);
  check_conservation(s);
}

TEST_CASE("constant latency divides evenly") {
  const std::vector<double> trace(260, 0.75);
  const auto t = simulate_timing(trace, 200, 5, 10);
  CHECK(t.serial.makespan == 150.0);
  CHECK(t.parallel_sync.makespan == 150.0 / 5);
  CHECK(t.parallel_async.makespan == 150.0 / 5);
  CHECK(t.parallel_sync.total_idle() == 0.0);
  CHECK(t.parallel_async.total_idle() == 0.0);
}

TEST_CASE("serial makespan is the sum") {
  const auto trace = lognormal_trace(50, 3);
  double sum = 0.0;
  for (double x : trace) sum += x;
  CHECK(std::abs(simulate_serial(trace, 50).makespan - sum) <= 1e-12);
}

TEST_CASE("conservation and async idleness on random traces") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto trace = lognormal_trace(300, seed);
    for (int w : {1, 2, 5, 9}) {
      const auto t = simulate_timing(trace, 200, w, static_cast<std::size_t>(2 * w));
      check_conservation(t.serial);
      check_conservation(t.parallel_sync);
      check_conservation(t.parallel_async);
      CHECK(t.parallel_async.total_idle() <= 1e-9);
      CHECK(t.parallel_async.completed == 200);
      CHECK(t.parallel_async.makespan <= t.parallel_sync.makespan + 1e-9);
    }
  }
}

TEST_CASE("async makespan is non-increasing in worker count") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto trace = lognormal_trace(300, seed);
    double prev = simulate_parallel_async(trace, 200, 1).makespan;
    for (int w = 2; w <= 9; ++w) {
      const double m = simulate_parallel_async(trace, 200, w).makespan;
      CHECK(m <= prev + 1e-12);
      prev = m;
    }
  }
}

TEST_CASE("ties break by worker id") {
  FinishQueue q;
  q.push(1.0, 3);
  q.push(1.0, 1);
  q.push(0.5, 7);
  CHECK(q.pop().worker == 7);
  CHECK(q.pop().worker == 1);
  CHECK(q.pop().worker == 3);
}

TEST_CASE("latency models") {
  Rng rng(1);
  LatencyModel m;
  m.per_step_cost = 0.01;
  m.per_grad_step_cost = 0.001;
  CHECK(std::abs(m.latency(200, 100, rng) - 2.1) <= 1e-12);
  CHECK(m.latency(0, 0, rng) > 0.0);
  m.kind = LatencyKind::Constant;
  m.constant = 0.0;
  CHECK_THROWS_AS(m.validate(), ConfigError);
  m.kind = LatencyKind::Lognormal;
  for (int i = 0; i < 100; ++i) CHECK(m.latency(0, 0, rng) > 0.0);
  CHECK(latency_kind_from_string("from-steps") == LatencyKind::FromSteps);
  CHECK_THROWS_AS(schedule_mode_from_string("sync"), ConfigError);
}

TEST_CASE("pendulum episode lengths vary") {
  PendulumEnv env(PendulumConfig{});
  const auto lengths = episode_length_trace(env, MlpSpec::actor(3, 1, {64, 64}), 200, 0.1, 5);
  const auto [lo, hi] = std::minmax_element(lengths.begin(), lengths.end());
  CHECK(*hi == 200);
  CHECK(*lo < 100);
  CHECK(lengths == episode_length_trace(env, MlpSpec::actor(3, 1, {64, 64}), 200, 0.1, 5));
}

}
