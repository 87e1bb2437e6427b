#pragma once

/// @file config.hpp
/// Experiment configuration: flat `key = value` pairs grouped in [sections],
/// `;` or `#` comments. Every field has a default except the rule-specific
/// ones (`mean.r`, `mean.f_b`) that the chosen rule requires.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "aesrl/distribution.hpp"
#include "aesrl/environment.hpp"
#include "aesrl/population_control.hpp"
#include "aesrl/scheduler.hpp"
#include "aesrl/td3.hpp"
#include "aesrl/transport.hpp"

namespace aesrl {

enum class ClockMode { Simulated, Real };

std::string_view to_string(ClockMode mode);
ClockMode clock_mode_from_string(std::string_view text);

struct ExperimentConfig {
  // [run]
  std::uint64_t seed = 1;
  std::uint64_t max_steps = 10'000;
  ScheduleMode mode = ScheduleMode::ParallelAsync;
  ClockMode clock = ClockMode::Simulated;
  int workers = 5;
  std::size_t population = 10;
  /// Stop once f(mu) reaches it: the test return when tests are on, else a refresh.
  std::optional<double> target_fitness;

  // [task] and the environment sections
  WorkerSpec::Task task = WorkerSpec::Task::Synthetic;
  SyntheticObjective objective = SyntheticObjective::Sphere;
  std::size_t dim = 20;
  std::uint64_t steps_per_eval = 1;
  double mu_init = 1.0;
  PendulumConfig pendulum;
  PointMassConfig point_mass;

  // [network]
  std::vector<int> actor_hidden{400, 300};
  std::vector<int> critic_hidden{400, 300};
  double leaky_slope = 0.01;

  // [distribution]
  double sigma2_init = 1e-3;
  double epsilon = 1e-5;
  double refresh_cumulative_p = 0.5;
  std::uint64_t refresh_every = 0;  // 0 means population

  // [mean], [variance]
  MeanRuleConfig mean;
  VarianceRuleConfig variance;
  /// `mean.r = auto`: one sixth of |f(mu_0)|, fixed after the first evaluation.
  bool r_auto = false;

  // [population_control]
  double k_rl = 50.0;
  double p_desired = 0.5;
  std::uint64_t rl_start_step = 10'000;

  // [rl]
  bool rl_enabled = false;
  double a_noise = 0.1;
  std::size_t replay_capacity = 200'000;
  Td3Hyper td3;
  double critic_ratio = 1.0;  // critic steps per environment step
  double actor_lr = 1e-3;
  std::size_t actor_batch = 100;
  std::uint64_t n_grad_steps = 0;  // 0: length of the last completed episode
  OptimizerKind actor_optimizer = OptimizerKind::Sgd;

  // [latency]
  LatencyModel latency;

  // [test]: noise-free episodes of mu from fixed start seeds. They do not
  // count toward total_steps and feed nothing back into the run.
  std::uint64_t test_every = 0;  // steps between tests, 0 disables
  std::size_t test_episodes = 5;

  bool episodic() const { return task != WorkerSpec::Task::Synthetic; }
  int state_dim() const;
  int action_dim() const;
  MlpSpec actor_spec() const;
  MlpSpec critic_spec() const;
  /// Length of the search space: dim for synthetic tasks, actor parameters otherwise.
  std::size_t search_dim() const;
  WorkerSpec worker_spec() const;

  /// Throws ConfigError naming the offending field.
  void validate() const;
};

/// Raw key/value view, keys spelled `section.key`.
using ConfigMap = std::map<std::string, std::string>;

ConfigMap parse_config_text(const std::string& text);
ConfigMap read_config_file(const std::string& path);
/// Applies `section.key=value` overrides; an override without '=' is an error.
void apply_overrides(ConfigMap& map, const std::vector<std::string>& overrides);

/// Builds and validates a config. Unknown keys are rejected.
ExperimentConfig config_from_map(const ConfigMap& map);

/// Canonical config text, sections and keys sorted; what gets hashed and logged.
/// It parses back to the same map.
std::string canonical_text(const ConfigMap& map);
/// FNV-1a 64 of canonical_text, as 16 hex digits.
std::string config_hash(const ConfigMap& map);

std::string fnv1a_hex(std::string_view bytes);

}  // namespace aesrl
