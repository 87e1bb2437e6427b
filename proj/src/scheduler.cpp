#include "aesrl/scheduler.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace aesrl {

std::string_view to_string(ScheduleMode mode) {
  switch (mode) {
    case ScheduleMode::SerialSync:
      return "serial-sync";
    case ScheduleMode::ParallelSync:
      return "parallel-sync";
    case ScheduleMode::ParallelAsync:
      return "parallel-async";
  }
  return "?";
}

ScheduleMode schedule_mode_from_string(std::string_view text) {
  if (text == "serial-sync") return ScheduleMode::SerialSync;
  if (text == "parallel-sync") return ScheduleMode::ParallelSync;
  if (text == "parallel-async") return ScheduleMode::ParallelAsync;
  throw ConfigError("unknown schedule mode: " + std::string(text));
}

std::string_view to_string(LatencyKind kind) {
  switch (kind) {
    case LatencyKind::FromSteps:
      return "from-steps";
    case LatencyKind::Lognormal:
      return "lognormal";
    case LatencyKind::Constant:
      return "constant";
  }
  return "?";
}

LatencyKind latency_kind_from_string(std::string_view text) {
  if (text == "from-steps") return LatencyKind::FromSteps;
  if (text == "lognormal") return LatencyKind::Lognormal;
  if (text == "constant") return LatencyKind::Constant;
  throw ConfigError("unknown latency model: " + std::string(text));
}

void LatencyModel::validate() const {
  switch (kind) {
    case LatencyKind::FromSteps:
      if (!(per_step_cost > 0.0)) throw ConfigError("latency.per_step_cost must be > 0");
      if (!(per_grad_step_cost >= 0.0))
        throw ConfigError("latency.per_grad_step_cost must be >= 0");
      break;
    case LatencyKind::Lognormal:
      if (!std::isfinite(mu_log)) throw ConfigError("latency.mu_log must be finite");
      if (!(sigma_log >= 0.0)) throw ConfigError("latency.sigma_log must be >= 0");
      break;
    case LatencyKind::Constant:
      if (!(constant > 0.0)) throw ConfigError("latency.constant must be > 0");
      break;
  }
}

double LatencyModel::latency(std::uint64_t env_steps, std::uint64_t grad_steps, Rng& rng) const {
  switch (kind) {
    case LatencyKind::FromSteps: {
      const double t = static_cast<double>(env_steps) * per_step_cost +
                       static_cast<double>(grad_steps) * per_grad_step_cost;
      // A zero-step evaluation still occupies the worker for one step.
      return std::max(t, per_step_cost);
    }
    case LatencyKind::Lognormal: {
      std::lognormal_distribution<double> d(mu_log, sigma_log);
      return d(rng);
    }
    case LatencyKind::Constant:
      return constant;
  }
  return constant;
}

double ScheduleStats::total_busy() const { return std::accumulate(busy.begin(), busy.end(), 0.0); }
double ScheduleStats::total_idle() const { return std::accumulate(idle.begin(), idle.end(), 0.0); }

double ScheduleStats::idle_fraction() const {
  if (makespan <= 0.0) return 0.0;
  return total_idle() / (static_cast<double>(workers) * makespan);
}

namespace {

void require_trace(std::span<const double> trace, std::size_t needed) {
  if (trace.size() < needed) throw std::invalid_argument("latency trace is shorter than needed");
}

}  // namespace

ScheduleStats simulate_serial(std::span<const double> trace, std::size_t evaluations) {
  require_trace(trace, evaluations);
  ScheduleStats s;
  s.mode = ScheduleMode::SerialSync;
  s.workers = 1;
  s.completed = evaluations;
  for (std::size_t i = 0; i < evaluations; ++i) s.makespan += trace[i];
  s.busy = {s.makespan};
  s.idle = {0.0};
  return s;
}

ScheduleStats simulate_parallel_sync(std::span<const double> trace, std::size_t evaluations,
                                     int workers, std::size_t population) {
  if (workers < 1) throw ConfigError("workers must be >= 1");
  if (population == 0) throw ConfigError("population must be >= 1");
  require_trace(trace, evaluations);
  ScheduleStats s;
  s.mode = ScheduleMode::ParallelSync;
  s.workers = workers;
  s.busy.assign(static_cast<std::size_t>(workers), 0.0);
  s.idle.assign(static_cast<std::size_t>(workers), 0.0);

  double generation_start = 0.0;
  std::vector<double> free_at(static_cast<std::size_t>(workers));
  for (std::size_t first = 0; first < evaluations; first += population) {
    const std::size_t last = std::min(first + population, evaluations);
    FinishQueue q;
    for (int w = 0; w < workers; ++w) q.push(generation_start, w);
    for (std::size_t i = first; i < last; ++i) {
      const auto e = q.pop();
      s.busy[static_cast<std::size_t>(e.worker)] += trace[i];
      q.push(e.time + trace[i], e.worker);
    }
    double barrier = generation_start;
    while (!q.empty()) {
      const auto e = q.pop();
      free_at[static_cast<std::size_t>(e.worker)] = e.time;
      barrier = std::max(barrier, e.time);
    }
    for (int w = 0; w < workers; ++w)
      s.idle[static_cast<std::size_t>(w)] += barrier - free_at[static_cast<std::size_t>(w)];
    generation_start = barrier;
  }
  s.makespan = generation_start;
  s.completed = evaluations;
  return s;
}

ScheduleStats simulate_parallel_async(std::span<const double> trace, std::size_t evaluations,
                                      int workers) {
  if (workers < 1) throw ConfigError("workers must be >= 1");
  ScheduleStats s;
  s.mode = ScheduleMode::ParallelAsync;
  s.workers = workers;
  s.busy.assign(static_cast<std::size_t>(workers), 0.0);
  s.idle.assign(static_cast<std::size_t>(workers), 0.0);
  if (evaluations == 0) return s;

  std::size_t next = 0;
  std::vector<double> started(static_cast<std::size_t>(workers), 0.0);
  std::vector<bool> running(static_cast<std::size_t>(workers), false);
  FinishQueue q;
  auto dispatch = [&](int w, double now) {
    if (next >= trace.size()) {
      // Out of trace: the worker has nothing left to run.
      return;
    }
    const auto wi = static_cast<std::size_t>(w);
    started[wi] = now;
    running[wi] = true;
    q.push(now + trace[next++], w);
  };
  for (int w = 0; w < workers; ++w) dispatch(w, 0.0);

  double last_time = 0.0;
  while (s.completed < evaluations) {
    if (q.empty()) throw std::invalid_argument("latency trace is shorter than needed");
    const auto e = q.pop();
    const auto wi = static_cast<std::size_t>(e.worker);
    s.busy[wi] += e.time - started[wi];
    running[wi] = false;
    ++s.completed;
    last_time = e.time;
    if (s.completed < evaluations) dispatch(e.worker, e.time);
  }
  s.makespan = last_time;
  for (std::size_t w = 0; w < running.size(); ++w) {
    if (running[w]) {
      const double partial = s.makespan - started[w];
      s.busy[w] += partial;
      s.abandoned += partial;
    }
    s.idle[w] = std::max(0.0, s.makespan - s.busy[w]);
  }
  return s;
}

TimingComparison simulate_timing(std::span<const double> trace, std::size_t evaluations,
                                 int workers, std::size_t population) {
  return {simulate_serial(trace, evaluations),
          simulate_parallel_sync(trace, evaluations, workers, population),
          simulate_parallel_async(trace, evaluations, workers)};
}

std::vector<double> latency_trace(const LatencyModel& model, std::span<const std::uint64_t> steps,
                                  Rng& rng) {
  model.validate();
  std::vector<double> out;
  out.reserve(steps.size());
  for (auto n : steps) out.push_back(model.latency(n, 0, rng));
  return out;
}

std::vector<std::uint64_t> episode_length_trace(const EpisodicEnv& env, const MlpSpec& actor_spec,
                                                std::size_t count, double a_noise,
                                                std::uint64_t seed) {
  std::vector<std::uint64_t> lengths;
  lengths.reserve(count);
  auto instance = env.clone();
  for (std::size_t i = 0; i < count; ++i) {
    Rng init(derive_seed(seed, 1, i));
    const FlatParams actor = FlatParams::init(actor_spec, init);
    Rng episode(derive_seed(seed, 2, i));
    lengths.push_back(evaluate(actor, *instance, a_noise, episode, {}, false).steps);
  }
  return lengths;
}

}  // namespace aesrl
