#include "aesrl/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

namespace aesrl {

std::string_view to_string(ClockMode mode) {
  return mode == ClockMode::Simulated ? "simulated" : "real";
}

ClockMode clock_mode_from_string(std::string_view text) {
  if (text == "simulated") return ClockMode::Simulated;
  if (text == "real") return ClockMode::Real;
  throw ConfigError("unknown clock mode: " + std::string(text));
}

namespace {

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::string_view task_name(WorkerSpec::Task t) {
  switch (t) {
    case WorkerSpec::Task::Synthetic:
      return "synthetic";
    case WorkerSpec::Task::Pendulum:
      return "pendulum";
    case WorkerSpec::Task::PointMass:
      return "point_mass";
  }
  return "?";
}

WorkerSpec::Task task_from_string(const std::string& s) {
  for (auto t : {WorkerSpec::Task::Synthetic, WorkerSpec::Task::Pendulum,
                 WorkerSpec::Task::PointMass})
    if (task_name(t) == s) return t;
  throw ConfigError("task.kind: unknown task '" + s + "'");
}

/// Pulls typed values out of the map and remembers which keys were read.
class Reader {
 public:
  explicit Reader(const ConfigMap& map) : map_(map) {}

  const std::string* raw(const std::string& key) {
    used_.insert(key);
    auto it = map_.find(key);
    return it == map_.end() ? nullptr : &it->second;
  }

  bool has(const std::string& key) const { return map_.count(key) != 0; }

  template <class T>
  void get(const std::string& key, T& out) {
    const std::string* v = raw(key);
    if (!v) return;
    out = parse<T>(key, *v);
  }

  template <class T>
  T parse(const std::string& key, const std::string& text) {
    if constexpr (std::is_same_v<T, bool>) {
      if (text == "true" || text == "1" || text == "yes") return true;
      if (text == "false" || text == "0" || text == "no") return false;
      throw ConfigError(key + ": expected true or false, got '" + text + "'");
    } else if constexpr (std::is_same_v<T, std::string>) {
      return text;
    } else if constexpr (std::is_floating_point_v<T>) {
      std::size_t pos = 0;
      double d = 0.0;
      try {
        d = std::stod(text, &pos);
      } catch (const std::exception&) {
        pos = 0;
      }
      if (pos == 0 || pos != text.size() || !std::isfinite(d))
        throw ConfigError(key + ": expected a finite number, got '" + text + "'");
      return static_cast<T>(d);
    } else {
      T x{};
      if (!text.empty() && text[0] == '-' && std::is_unsigned_v<T>)
        throw ConfigError(key + ": must be non-negative, got '" + text + "'");
      const auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), x);
      if (ec != std::errc() || p != text.data() + text.size())
        throw ConfigError(key + ": expected an integer, got '" + text + "'");
      return x;
    }
  }

  std::vector<int> int_list(const std::string& key, std::vector<int> fallback) {
    const std::string* v = raw(key);
    if (!v) return fallback;
    std::vector<int> out;
    std::stringstream ss(*v);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(parse<int>(key, trim(item)));
    if (out.empty()) throw ConfigError(key + ": expected a comma-separated list");
    return out;
  }

  template <class F>
  auto with_key(const std::string& key, F&& fn) {
    try {
      return fn();
    } catch (const ConfigError& e) {
      const std::string what = e.what();
      if (what.rfind(key, 0) == 0) throw;
      throw ConfigError(key + ": " + what);
    }
  }

  void reject_unknown() const {
    for (const auto& [k, v] : map_)
      if (!used_.count(k)) throw ConfigError(k + ": unknown key");
  }

 private:
  const ConfigMap& map_;
  std::set<std::string> used_;
};

}  // namespace

int ExperimentConfig::state_dim() const {
  switch (task) {
    case WorkerSpec::Task::Pendulum:
      return 3;
    case WorkerSpec::Task::PointMass:
      return 4;
    case WorkerSpec::Task::Synthetic:
      break;
  }
  return 0;
}

int ExperimentConfig::action_dim() const {
  switch (task) {
    case WorkerSpec::Task::Pendulum:
      return 1;
    case WorkerSpec::Task::PointMass:
      return 2;
    case WorkerSpec::Task::Synthetic:
      break;
  }
  return 0;
}

MlpSpec ExperimentConfig::actor_spec() const {
  MlpSpec s = MlpSpec::actor(state_dim(), action_dim(), actor_hidden);
  s.leaky_slope = leaky_slope;
  return s;
}

MlpSpec ExperimentConfig::critic_spec() const {
  MlpSpec s = MlpSpec::critic(state_dim(), action_dim(), critic_hidden);
  s.leaky_slope = leaky_slope;
  return s;
}

std::size_t ExperimentConfig::search_dim() const {
  return episodic() ? actor_spec().param_count() : dim;
}

WorkerSpec ExperimentConfig::worker_spec() const {
  WorkerSpec w;
  w.task = task;
  w.objective = objective;
  w.synthetic_steps = steps_per_eval;
  w.synthetic_dim = dim;
  w.pendulum = pendulum;
  w.point_mass = point_mass;
  if (episodic()) {
    w.actor = actor_spec();
    w.critic = critic_spec();
  }
  return w;
}

void ExperimentConfig::validate() const {
  if (workers < 1) throw ConfigError("run.workers must be >= 1");
  if (population < 1) throw ConfigError("run.population must be >= 1");
  if (mode == ScheduleMode::ParallelSync && population % static_cast<std::size_t>(workers) != 0)
    throw ConfigError("run.population must be a multiple of run.workers for parallel-sync");
  if (!episodic() && dim < 1) throw ConfigError("task.dim must be >= 1");
  if (!episodic() && steps_per_eval < 1) throw ConfigError("task.steps_per_eval must be >= 1");
  pendulum.validate();
  point_mass.validate();
  if (episodic()) {
    actor_spec().validate();
    critic_spec().validate();
  }
  if (!(sigma2_init > 0.0)) throw ConfigError("distribution.sigma2_init must be > 0");
  if (!(epsilon > 0.0)) throw ConfigError("distribution.epsilon must be > 0");
  if (!(refresh_cumulative_p > 0.0))
    throw ConfigError("distribution.refresh_cumulative_p must be > 0");
  mean.validate();
  variance.validate();

  const bool sync = mode != ScheduleMode::ParallelAsync;
  if (sync && mean.rule != MeanRule::RankBasedSync)
    throw ConfigError("mean.rule: " + std::string(to_string(mode)) +
                      " requires RankBasedSync");
  if (!sync && mean.rule == MeanRule::RankBasedSync)
    throw ConfigError("mean.rule: RankBasedSync needs a synchronous run.mode");
  if (sync && variance.rule != VarianceRule::RankBasedSync &&
      variance.rule != VarianceRule::Constant)
    throw ConfigError("variance.rule: synchronous modes support RankBasedSync or Constant");
  if (!sync && variance.rule == VarianceRule::RankBasedSync &&
      mean.rule != MeanRule::RankBasedAsyncOldest)
    throw ConfigError("variance.rule: RankBasedSync in async mode requires RankBasedAsyncOldest");
  if (mean.rule == MeanRule::RankBasedAsyncOldest && variance.rule == VarianceRule::SuccessRule)
    throw ConfigError("variance.rule: SuccessRule needs a ratio-based mean rule");
  if (static_cast<std::size_t>(mean.elites) > population)
    throw ConfigError("mean.elites must not exceed run.population");

  if (k_rl < 0.0) throw ConfigError("population_control.k_rl must be >= 0");
  if (p_desired < 0.0 || p_desired > 1.0)
    throw ConfigError("population_control.p_desired must be in [0,1]");

  if (rl_enabled && !episodic()) throw ConfigError("rl.enabled requires an episodic task");
  if (!(a_noise >= 0.0)) throw ConfigError("rl.a_noise must be >= 0");
  if (replay_capacity < 1) throw ConfigError("rl.replay_capacity must be >= 1");
  if (!(td3.gamma >= 0.0 && td3.gamma <= 1.0)) throw ConfigError("rl.gamma must be in [0,1]");
  if (!(td3.tau > 0.0 && td3.tau <= 1.0)) throw ConfigError("rl.tau must be in (0,1]");
  if (td3.batch_size < 1) throw ConfigError("rl.batch_size must be >= 1");
  if (!(td3.critic_lr >= 0.0)) throw ConfigError("rl.critic_lr must be >= 0");
  if (!(critic_ratio >= 0.0)) throw ConfigError("rl.critic_ratio must be >= 0");
  if (!(actor_lr >= 0.0)) throw ConfigError("rl.actor_lr must be >= 0");
  if (actor_batch < 1) throw ConfigError("rl.actor_batch must be >= 1");

  if (test_every > 0 && !episodic()) throw ConfigError("test.every requires an episodic task");
  if (test_episodes < 1) throw ConfigError("test.episodes must be >= 1");
  latency.validate();
}

ConfigMap parse_config_text(const std::string& text) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  std::istringstream in(text);
  try {
    pt::ini_parser::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError("config line " + std::to_string(e.line()) + ": " + e.message());
  }
  ConfigMap map;
  for (const auto& [section, body] : tree) {
    if (body.empty()) throw ConfigError(section + ": key outside any [section]");
    for (const auto& [key, value] : body) map[section + "." + key] = trim(value.data());
  }
  return map;
}

ConfigMap read_config_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot read config file " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config_text(ss.str());
}

void apply_overrides(ConfigMap& map, const std::vector<std::string>& overrides) {
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) throw ConfigError("override '" + o + "' is not key=value");
    const std::string key = trim(o.substr(0, eq));
    if (key.find('.') == std::string::npos)
      throw ConfigError("override key '" + key + "' must be section.key");
    map[key] = trim(o.substr(eq + 1));
  }
}

ExperimentConfig config_from_map(const ConfigMap& map) {
  ExperimentConfig c;
  Reader r(map);

  r.get("run.seed", c.seed);
  r.get("run.max_steps", c.max_steps);
  if (auto* v = r.raw("run.mode"))
    c.mode = r.with_key("run.mode", [&] { return schedule_mode_from_string(*v); });
  if (auto* v = r.raw("run.clock"))
    c.clock = r.with_key("run.clock", [&] { return clock_mode_from_string(*v); });
  r.get("run.workers", c.workers);
  r.get("run.population", c.population);
  if (auto* v = r.raw("run.target_fitness"))
    c.target_fitness = r.parse<double>("run.target_fitness", *v);

  if (auto* v = r.raw("task.kind")) c.task = task_from_string(*v);
  if (auto* v = r.raw("task.objective"))
    c.objective = r.with_key("task.objective", [&] { return synthetic_objective_from_string(*v); });
  r.get("task.dim", c.dim);
  r.get("task.steps_per_eval", c.steps_per_eval);
  r.get("task.mu_init", c.mu_init);

  r.get("pendulum.max_steps", c.pendulum.max_steps);
  r.get("pendulum.dt", c.pendulum.dt);
  r.get("pendulum.gravity", c.pendulum.gravity);
  r.get("pendulum.mass", c.pendulum.mass);
  r.get("pendulum.length", c.pendulum.length);
  r.get("pendulum.max_torque", c.pendulum.max_torque);
  r.get("pendulum.max_speed", c.pendulum.max_speed);
  r.get("pendulum.random_start", c.pendulum.random_start);
  r.get("pendulum.start_theta", c.pendulum.start_theta);
  r.get("pendulum.start_theta_dot", c.pendulum.start_theta_dot);
  r.get("pendulum.overspeed_termination", c.pendulum.overspeed_termination);

  r.get("point_mass.max_steps", c.point_mass.max_steps);
  r.get("point_mass.dt", c.point_mass.dt);
  r.get("point_mass.max_accel", c.point_mass.max_accel);
  r.get("point_mass.goal_x", c.point_mass.goal_x);
  r.get("point_mass.goal_y", c.point_mass.goal_y);
  r.get("point_mass.start_x", c.point_mass.start_x);
  r.get("point_mass.start_y", c.point_mass.start_y);
  r.get("point_mass.start_jitter", c.point_mass.start_jitter);
  r.get("point_mass.goal_radius", c.point_mass.goal_radius);

  c.actor_hidden = r.int_list("network.actor_hidden", c.actor_hidden);
  c.critic_hidden = r.int_list("network.critic_hidden", c.critic_hidden);
  r.get("network.leaky_slope", c.leaky_slope);

  r.get("distribution.sigma2_init", c.sigma2_init);
  r.get("distribution.epsilon", c.epsilon);
  r.get("distribution.refresh_cumulative_p", c.refresh_cumulative_p);
  r.get("distribution.refresh_every", c.refresh_every);

  if (auto* v = r.raw("mean.rule"))
    c.mean.rule = r.with_key("mean.rule", [&] { return mean_rule_from_string(*v); });
  const MeanRule rule = c.mean.rule;
  const bool needs_r = rule == MeanRule::FixedLinear || rule == MeanRule::FixedSigmoid;
  const bool needs_fb = rule == MeanRule::AbsoluteBaseline || rule == MeanRule::RelativeBaseline;
  if (auto* v = r.raw("mean.r")) {
    if (*v == "auto")
      c.r_auto = true;
    else
      c.mean.r = r.parse<double>("mean.r", *v);
  } else if (needs_r) {
    throw ConfigError("mean.r is required for " + std::string(to_string(rule)));
  }
  if (auto* v = r.raw("mean.f_b"))
    c.mean.f_b = r.parse<double>("mean.f_b", *v);
  else if (needs_fb)
    throw ConfigError("mean.f_b is required for " + std::string(to_string(rule)));
  r.get("mean.p_positive", c.mean.p_positive);
  r.get("mean.p_negative", c.mean.p_negative);
  r.get("mean.elites", c.mean.elites);
  if (auto* v = r.raw("mean.weights"))
    c.mean.weight_mode = r.with_key("mean.weights", [&] { return weight_mode_from_string(*v); });
  r.get("mean.literal_oldest", c.mean.literal_oldest);
  if (c.r_auto && !needs_r) throw ConfigError("mean.r = auto only applies to fixed-range rules");

  if (auto* v = r.raw("variance.rule"))
    c.variance.rule = r.with_key("variance.rule", [&] { return variance_rule_from_string(*v); });
  r.get("variance.n_fixed", c.variance.n_fixed);
  r.get("variance.p_th", c.variance.p_th);
  r.get("variance.c_up", c.variance.c_up);
  r.get("variance.c_down", c.variance.c_down);
  r.get("variance.window", c.variance.window);
  r.get("variance.constant_sigma2", c.variance.constant_sigma2);

  r.get("population_control.k_rl", c.k_rl);
  r.get("population_control.p_desired", c.p_desired);
  r.get("population_control.rl_start_step", c.rl_start_step);

  r.get("rl.enabled", c.rl_enabled);
  r.get("rl.a_noise", c.a_noise);
  r.get("rl.replay_capacity", c.replay_capacity);
  r.get("rl.gamma", c.td3.gamma);
  r.get("rl.tau", c.td3.tau);
  r.get("rl.policy_noise", c.td3.policy_noise);
  r.get("rl.noise_clip", c.td3.noise_clip);
  r.get("rl.batch_size", c.td3.batch_size);
  r.get("rl.critic_lr", c.td3.critic_lr);
  if (auto* v = r.raw("rl.critic_optimizer"))
    c.td3.optimizer = r.with_key("rl.critic_optimizer", [&] { return optimizer_from_string(*v); });
  r.get("rl.critic_ratio", c.critic_ratio);
  r.get("rl.actor_lr", c.actor_lr);
  r.get("rl.actor_batch", c.actor_batch);
  r.get("rl.n_grad_steps", c.n_grad_steps);
  if (auto* v = r.raw("rl.actor_optimizer"))
    c.actor_optimizer = r.with_key("rl.actor_optimizer", [&] { return optimizer_from_string(*v); });

  if (auto* v = r.raw("latency.model"))
    c.latency.kind = r.with_key("latency.model", [&] { return latency_kind_from_string(*v); });
  r.get("latency.per_step_cost", c.latency.per_step_cost);
  r.get("latency.per_grad_step_cost", c.latency.per_grad_step_cost);
  r.get("latency.mu_log", c.latency.mu_log);
  r.get("latency.sigma_log", c.latency.sigma_log);
  r.get("latency.constant", c.latency.constant);

  r.get("test.every", c.test_every);
  r.get("test.episodes", c.test_episodes);

  r.reject_unknown();
  c.validate();
  return c;
}

std::string canonical_text(const ConfigMap& map) {
  std::string out, section;
  for (const auto& [k, v] : map) {
    const auto dot = k.find('.');
    const std::string sec = k.substr(0, dot);
    if (sec != section) {
      out += "[" + sec + "]\n";
      section = sec;
    }
    out += k.substr(dot + 1) + " = " + v + "\n";
  }
  return out;
}

std::string fnv1a_hex(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[static_cast<std::size_t>(i)] = kHex[h & 0xf];
    h >>= 4;
  }
  return s;
}

std::string config_hash(const ConfigMap& map) { return fnv1a_hex(canonical_text(map)); }

}  // namespace aesrl
