#pragma once

/// @file engine.hpp
/// The master loop. One owner of the distribution, W workers behind channels,
/// a shared replay buffer and critic, and a clock that is either simulated
/// (discrete events, single thread) or real (one thread per worker).

#include <chrono>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <vector>

#include "aesrl/config.hpp"
#include "aesrl/distribution.hpp"
#include "aesrl/transport.hpp"

namespace aesrl {

class RunLogWriter;

/// One learning-curve row.
struct CurvePoint {
  std::uint64_t total_steps = 0;
  double event_time = 0.0;
  double best_fitness = 0.0;
  /// f(mu): exact for synthetic tasks, else the latest test return or, with
  /// tests off, the latest refresh (NaN before any).
  double mean_fitness = 0.0;
};

struct RunAccounting {
  ScheduleMode mode = ScheduleMode::ParallelAsync;
  int workers = 1;
  std::uint64_t total_steps = 0;
  double makespan = 0.0;  // virtual seconds, or wall seconds with the real clock
  std::vector<double> busy;
  std::vector<double> idle;
  double abandoned = 0.0;

  std::uint64_t updates = 0;       // distribution updates (per individual or per generation)
  std::uint64_t evaluations = 0;   // completed individual evaluations
  std::uint64_t refreshes = 0;     // f(mu) evaluations
  std::uint64_t failures = 0;
  std::uint64_t tests = 0;         // test evaluations of mu, outside the step budget
  std::uint64_t generations = 0;
  std::uint64_t rl_individuals = 0;
  std::uint64_t es_individuals = 0;
  std::uint64_t critic_steps = 0;
  std::uint64_t degenerate_updates = 0;
  double rl_p_sum = 0.0;  // sum of logged p by role
  double es_p_sum = 0.0;

  double best_fitness = 0.0;
  double final_fitness_mu = 0.0;
  std::optional<std::uint64_t> steps_to_target;
  std::vector<CurvePoint> curve;
  /// Hash of mu after every distribution update, in order.
  std::vector<std::string> mu_hashes;

  double idle_fraction() const;
};

struct RunResult {
  RunAccounting accounting;
  PopulationDistribution final_distribution;
  /// The r actually used (differs from the config only with `mean.r = auto`).
  double r_used = 0.0;
};

/// Creates the channel to worker `id`.
using ChannelFactory = std::function<std::unique_ptr<Channel>(int id)>;

struct EngineOptions {
  ChannelFactory channels;  // default: in-process workers
  RunLogWriter* log = nullptr;
  std::chrono::milliseconds request_timeout{60'000};
  /// Consecutive failed dispatches after which a worker is retired.
  int max_consecutive_failures = 3;
};

/// mu_0 and sigma2_0 for a config: constant mu_init for synthetic tasks,
/// a seeded actor initialization otherwise. mu_0 is float32-representable.
PopulationDistribution initial_distribution(const ExperimentConfig& cfg);

/// Mean noise-free return of `actor` over `cfg.test_episodes` fixed start
/// states derived from `cfg.seed`. Episodic tasks only.
double test_return(const ExperimentConfig& cfg, const Vec& actor);

/// FNV-1a 64 over the raw bytes of mu.
std::string mu_hash(const Vec& mu);

/// Runs the configured mode: parallel-async follows the asynchronous master
/// loop, serial-sync and parallel-sync the generational one.
RunResult run_experiment(const ExperimentConfig& cfg, const EngineOptions& options = {});

RunResult run_async(const ExperimentConfig& cfg, const EngineOptions& options = {});
/// `cfg.mode` must be serial-sync or parallel-sync; serial uses a single worker.
RunResult run_sync(const ExperimentConfig& cfg, const EngineOptions& options = {});

}  // namespace aesrl
