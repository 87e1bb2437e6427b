#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "aesrl/common.hpp"
#include "aesrl/mlp.hpp"

namespace aesrl {

struct Transition {
  Vec state;
  Vec action;
  Vec next_state;
  double reward = 0.0;
  /// True terminal state. A time-limit cutoff is not terminal, so the critic
  /// still bootstraps through it.
  bool done = false;
};

struct StepResult {
  Vec next_state;
  double reward = 0.0;
  bool done = false;      // episode over
  bool terminal = false;  // ended by the task itself, not the time limit
};

/// Episodic continuous-control task with actions in [-1, 1]^action_dim.
/// Dynamics are deterministic; only reset() draws randomness.
class EpisodicEnv {
 public:
  virtual ~EpisodicEnv() = default;

  virtual int state_dim() const = 0;
  virtual int action_dim() const = 0;
  virtual int max_steps() const = 0;
  virtual std::string name() const = 0;

  virtual Vec reset(Rng& rng) = 0;
  /// Must report done no later than the max_steps-th step after reset.
  virtual StepResult step(const Vec& action) = 0;
  virtual std::unique_ptr<EpisodicEnv> clone() const = 0;
};

struct PointMassConfig {
  int max_steps = 200;
  double dt = 0.05;
  double max_accel = 2.0;
  double goal_x = 0.0;
  double goal_y = 0.0;
  double start_x = 1.0;
  double start_y = 1.0;
  double start_jitter = 0.0;  // uniform +- jitter on the start position
  double goal_radius = 0.05;

  void validate() const;
};

/// 2-D double integrator. Observation: [pos - goal, vel]. Ends early inside goal_radius.
class PointMassEnv final : public EpisodicEnv {
 public:
  explicit PointMassEnv(PointMassConfig cfg);

  int state_dim() const override { return 4; }
  int action_dim() const override { return 2; }
  int max_steps() const override { return cfg_.max_steps; }
  std::string name() const override { return "point_mass"; }

  Vec reset(Rng& rng) override;
  StepResult step(const Vec& action) override;
  std::unique_ptr<EpisodicEnv> clone() const override;

 private:
  Vec observe() const;

  PointMassConfig cfg_;
  double px_ = 0, py_ = 0, vx_ = 0, vy_ = 0;
  int t_ = 0;
};

struct PendulumConfig {
  int max_steps = 200;
  double dt = 0.05;
  double gravity = 10.0;
  double mass = 1.0;
  double length = 1.0;
  double max_torque = 2.0;
  double max_speed = 8.0;
  bool random_start = true;
  double start_theta = 3.141592653589793;  // used when random_start is false
  double start_theta_dot = 0.0;
  /// Terminate when the angular speed would exceed max_speed.
  bool overspeed_termination = true;

  void validate() const;
  /// Largest per-step cost: pi^2 + 0.1 max_speed^2 + 0.001.
  double worst_step_cost() const;
};

/// Swing-up pendulum, theta = 0 upright. Observation: [cos, sin, theta_dot].
/// reward = -(theta_err^2 + 0.1 theta_dot^2 + 0.001 a^2) with a the normalized action.
/// An overspeed ends the episode and charges the worst per-step cost for every
/// remaining step, so terminating early never pays.
class PendulumEnv final : public EpisodicEnv {
 public:
  explicit PendulumEnv(PendulumConfig cfg);

  int state_dim() const override { return 3; }
  int action_dim() const override { return 1; }
  int max_steps() const override { return cfg_.max_steps; }
  std::string name() const override { return "pendulum"; }

  Vec reset(Rng& rng) override;
  StepResult step(const Vec& action) override;
  std::unique_ptr<EpisodicEnv> clone() const override;

  /// Per-step reward for a given state and normalized action.
  static double reward(double theta, double theta_dot, double action);

 private:
  Vec observe() const;

  PendulumConfig cfg_;
  double theta_ = 0.0;
  double theta_dot_ = 0.0;
  int t_ = 0;
};

double angle_normalize(double x);

enum class SyntheticObjective { Sphere, Rastrigin };

/// Higher is better; optimum 0 at the origin.
double synthetic_fitness(SyntheticObjective objective, const Vec& z);

SyntheticObjective synthetic_objective_from_string(std::string_view text);
std::string_view to_string(SyntheticObjective objective);

struct EvalResult {
  double total_reward = 0.0;
  std::uint64_t steps = 0;
  std::vector<Transition> transitions;
};

/// Thrown when an environment produces a non-finite state or reward.
class EnvironmentError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using TransitionSink = std::function<void(const Transition&)>;

/// Runs one episode with the actor. With a_noise > 0 every action gets
/// clip(a + a_noise * N(0,1), -1, 1). Transitions are passed to `sink` when set and
/// kept in the result when `keep_transitions` is true.
EvalResult evaluate(const FlatParams& actor, EpisodicEnv& env, double a_noise, Rng& rng,
                    const TransitionSink& sink = {}, bool keep_transitions = true);

}  // namespace aesrl
