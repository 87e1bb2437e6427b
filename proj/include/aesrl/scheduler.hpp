#pragma once

/// @file scheduler.hpp
/// Discrete-event timing of the three scheduling modes on a shared latency trace.
///
/// Serial-sync runs every evaluation back to back on one worker. Parallel-sync
/// splits the work into generations of `population` evaluations, dispatches
/// each generation greedily to idle workers and waits at a barrier. Parallel-
/// async redispatches a worker the moment it finishes and stops when the
/// requested number of evaluations has completed; work still in flight at that
/// moment is abandoned and reported separately.

#include <cstdint>
#include <functional>
#include <queue>
#include <span>
#include <string_view>
#include <vector>

#include "aesrl/common.hpp"
#include "aesrl/environment.hpp"

namespace aesrl {

enum class ScheduleMode { SerialSync, ParallelSync, ParallelAsync };

std::string_view to_string(ScheduleMode mode);
ScheduleMode schedule_mode_from_string(std::string_view text);

enum class LatencyKind { FromSteps, Lognormal, Constant };

std::string_view to_string(LatencyKind kind);
LatencyKind latency_kind_from_string(std::string_view text);

struct LatencyModel {
  LatencyKind kind = LatencyKind::FromSteps;
  double per_step_cost = 1e-3;       // seconds per environment step
  double per_grad_step_cost = 0.0;   // seconds per actor gradient step
  double mu_log = 0.0;
  double sigma_log = 0.5;
  double constant = 1.0;

  void validate() const;
  /// Always > 0. Lognormal draws from rng; the other kinds ignore it.
  double latency(std::uint64_t env_steps, std::uint64_t grad_steps, Rng& rng) const;
};

/// Pending completions ordered by (time, worker id).
class FinishQueue {
 public:
  struct Event {
    double time;
    int worker;
    friend bool operator>(const Event& a, const Event& b) {
      return a.time != b.time ? a.time > b.time : a.worker > b.worker;
    }
  };

  void push(double time, int worker) { q_.push({time, worker}); }
  Event pop() {
    Event e = q_.top();
    q_.pop();
    return e;
  }
  const Event& top() const { return q_.top(); }
  bool empty() const { return q_.empty(); }
  std::size_t size() const { return q_.size(); }

 private:
  std::priority_queue<Event, std::vector<Event>, std::greater<>> q_;
};

struct ScheduleStats {
  ScheduleMode mode = ScheduleMode::SerialSync;
  int workers = 1;
  std::size_t completed = 0;
  double makespan = 0.0;
  std::vector<double> busy;  // per worker, includes abandoned in-flight time
  std::vector<double> idle;  // per worker
  double abandoned = 0.0;    // busy time spent on work discarded at termination

  double total_busy() const;
  double total_idle() const;
  /// total_idle / (workers * makespan); 0 for an empty schedule.
  double idle_fraction() const;
};

/// `trace[i]` is the latency of the i-th dispatched evaluation. Each function
/// completes `evaluations` of them; the async scheduler may read up to
/// workers - 1 entries beyond that.
ScheduleStats simulate_serial(std::span<const double> trace, std::size_t evaluations);
ScheduleStats simulate_parallel_sync(std::span<const double> trace, std::size_t evaluations,
                                     int workers, std::size_t population);
ScheduleStats simulate_parallel_async(std::span<const double> trace, std::size_t evaluations,
                                      int workers);

struct TimingComparison {
  ScheduleStats serial, parallel_sync, parallel_async;
};

TimingComparison simulate_timing(std::span<const double> trace, std::size_t evaluations,
                                 int workers, std::size_t population);

/// Latencies for the given per-evaluation step counts.
std::vector<double> latency_trace(const LatencyModel& model, std::span<const std::uint64_t> steps,
                                  Rng& rng);

/// Episode lengths of `count` freshly initialized actors evaluated with action
/// noise; actor i and its episode use seeds derived from (seed, i).
std::vector<std::uint64_t> episode_length_trace(const EpisodicEnv& env, const MlpSpec& actor_spec,
                                                std::size_t count, double a_noise,
                                                std::uint64_t seed);

}  // namespace aesrl
