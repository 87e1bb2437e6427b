#include "aesrl/environment.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace aesrl {

void PointMassConfig::validate() const {
  if (max_steps < 1) throw ConfigError("point_mass.max_steps must be >= 1");
  if (!(dt > 0.0)) throw ConfigError("point_mass.dt must be > 0");
  if (!(max_accel > 0.0)) throw ConfigError("point_mass.max_accel must be > 0");
  if (!(goal_radius >= 0.0)) throw ConfigError("point_mass.goal_radius must be >= 0");
  if (!(start_jitter >= 0.0)) throw ConfigError("point_mass.start_jitter must be >= 0");
}

PointMassEnv::PointMassEnv(PointMassConfig cfg) : cfg_(cfg) { cfg_.validate(); }

Vec PointMassEnv::observe() const {
  Vec s(4);
  s << px_ - cfg_.goal_x, py_ - cfg_.goal_y, vx_, vy_;
  return s;
}

Vec PointMassEnv::reset(Rng& rng) {
  px_ = cfg_.start_x;
  py_ = cfg_.start_y;
  if (cfg_.start_jitter > 0.0) {
    std::uniform_real_distribution<double> u(-cfg_.start_jitter, cfg_.start_jitter);
    px_ += u(rng);
    py_ += u(rng);
  }
  vx_ = vy_ = 0.0;
  t_ = 0;
  return observe();
}

StepResult PointMassEnv::step(const Vec& action) {
  if (action.size() != 2) throw std::invalid_argument("point_mass expects a 2-D action");
  const double ax = std::clamp(action[0], -1.0, 1.0);
  const double ay = std::clamp(action[1], -1.0, 1.0);
  const double dx = px_ - cfg_.goal_x;
  const double dy = py_ - cfg_.goal_y;
  const double reward = -((dx * dx + dy * dy) + 0.01 * (ax * ax + ay * ay));

  vx_ += cfg_.max_accel * ax * cfg_.dt;
  vy_ += cfg_.max_accel * ay * cfg_.dt;
  px_ += vx_ * cfg_.dt;
  py_ += vy_ * cfg_.dt;
  ++t_;

  const double ex = px_ - cfg_.goal_x;
  const double ey = py_ - cfg_.goal_y;
  const bool at_goal = std::sqrt(ex * ex + ey * ey) < cfg_.goal_radius;
  return {observe(), reward, at_goal || t_ >= cfg_.max_steps, at_goal};
}

std::unique_ptr<EpisodicEnv> PointMassEnv::clone() const {
  return std::make_unique<PointMassEnv>(*this);
}

// ---------------------------------------------------------------------------

double angle_normalize(double x) {
  constexpr double pi = std::numbers::pi;
  return std::fmod(std::fmod(x + pi, 2 * pi) + 2 * pi, 2 * pi) - pi;
}

void PendulumConfig::validate() const {
  if (max_steps < 1) throw ConfigError("pendulum.max_steps must be >= 1");
  if (!(dt > 0.0)) throw ConfigError("pendulum.dt must be > 0");
  if (!(gravity > 0.0 && mass > 0.0 && length > 0.0))
    throw ConfigError("pendulum physical constants must be > 0");
  if (!(max_torque > 0.0)) throw ConfigError("pendulum.max_torque must be > 0");
  if (!(max_speed > 0.0)) throw ConfigError("pendulum.max_speed must be > 0");
}

double PendulumConfig::worst_step_cost() const {
  constexpr double pi = std::numbers::pi;
  return pi * pi + 0.1 * max_speed * max_speed + 0.001;
}

PendulumEnv::PendulumEnv(PendulumConfig cfg) : cfg_(cfg) { cfg_.validate(); }

double PendulumEnv::reward(double theta, double theta_dot, double action) {
  const double err = angle_normalize(theta);
  return -(err * err + 0.1 * theta_dot * theta_dot + 0.001 * action * action);
}

Vec PendulumEnv::observe() const {
  Vec s(3);
  s << std::cos(theta_), std::sin(theta_), theta_dot_;
  return s;
}

Vec PendulumEnv::reset(Rng& rng) {
  if (cfg_.random_start) {
    std::uniform_real_distribution<double> angle(-std::numbers::pi, std::numbers::pi);
    std::uniform_real_distribution<double> speed(-1.0, 1.0);
    theta_ = angle(rng);
    theta_dot_ = speed(rng);
  } else {
    theta_ = cfg_.start_theta;
    theta_dot_ = cfg_.start_theta_dot;
  }
  t_ = 0;
  return observe();
}

StepResult PendulumEnv::step(const Vec& action) {
  if (action.size() != 1) throw std::invalid_argument("pendulum expects a 1-D action");
  const double a = std::clamp(action[0], -1.0, 1.0);
  double r = reward(theta_, theta_dot_, a);

  const double g = cfg_.gravity, m = cfg_.mass, l = cfg_.length;
  const double torque = cfg_.max_torque * a;
  double new_dot =
      theta_dot_ + (3.0 * g / (2.0 * l) * std::sin(theta_) + 3.0 / (m * l * l) * torque) * cfg_.dt;
  bool done = false;
  ++t_;
  if (std::abs(new_dot) > cfg_.max_speed) {
    if (cfg_.overspeed_termination) {
      r -= static_cast<double>(cfg_.max_steps - t_) * cfg_.worst_step_cost();
      done = true;
    }
    new_dot = std::clamp(new_dot, -cfg_.max_speed, cfg_.max_speed);
  }
  theta_ += new_dot * cfg_.dt;
  theta_dot_ = new_dot;
  return {observe(), r, done || t_ >= cfg_.max_steps, done};
}

std::unique_ptr<EpisodicEnv> PendulumEnv::clone() const {
  return std::make_unique<PendulumEnv>(*this);
}

// ---------------------------------------------------------------------------

double synthetic_fitness(SyntheticObjective objective, const Vec& z) {
  switch (objective) {
    case SyntheticObjective::Sphere:
      return -z.squaredNorm();
    case SyntheticObjective::Rastrigin: {
      double s = 10.0 * static_cast<double>(z.size());
      for (Eigen::Index i = 0; i < z.size(); ++i)
        s += z[i] * z[i] - 10.0 * std::cos(2.0 * std::numbers::pi * z[i]);
      return -s;
    }
  }
  return 0.0;
}

SyntheticObjective synthetic_objective_from_string(std::string_view text) {
  if (text == "sphere") return SyntheticObjective::Sphere;
  if (text == "rastrigin") return SyntheticObjective::Rastrigin;
  throw ConfigError("unknown synthetic objective: " + std::string(text));
}

std::string_view to_string(SyntheticObjective objective) {
  return objective == SyntheticObjective::Sphere ? "sphere" : "rastrigin";
}

EvalResult evaluate(const FlatParams& actor, EpisodicEnv& env, double a_noise, Rng& rng,
                    const TransitionSink& sink, bool keep_transitions) {
  if (a_noise < 0.0) throw std::invalid_argument("evaluate: a_noise must be >= 0");
  if (actor.spec.input_dim() != env.state_dim() || actor.spec.output_dim() != env.action_dim())
    throw std::invalid_argument("evaluate: actor shape does not match the environment");

  std::normal_distribution<double> normal(0.0, 1.0);
  EvalResult result;
  Vec state = env.reset(rng);
  bool done = false;
  while (!done) {
    Vec action = actor_forward(actor, state);
    if (a_noise != 0.0) {
      for (Eigen::Index i = 0; i < action.size(); ++i)
        action[i] = std::clamp(action[i] + a_noise * normal(rng), -1.0, 1.0);
    }
    StepResult sr = env.step(action);
    if (!sr.next_state.allFinite() || !std::isfinite(sr.reward))
      throw EnvironmentError(env.name() + ": non-finite state or reward at step " +
                             std::to_string(result.steps + 1));
    Transition tr{state, action, sr.next_state, sr.reward, sr.terminal};
    if (sink) sink(tr);
    result.total_reward += sr.reward;
    ++result.steps;
    state = std::move(sr.next_state);
    done = sr.done;
    if (keep_transitions) result.transitions.push_back(std::move(tr));
    if (result.steps > static_cast<std::uint64_t>(env.max_steps()))
      throw EnvironmentError(env.name() + ": episode exceeded max_steps");
  }
  return result;
}

}  // namespace aesrl
