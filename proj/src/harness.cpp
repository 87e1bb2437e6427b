#include "aesrl/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <ostream>
#include <sstream>

#include "aesrl/distribution.hpp"
#include "aesrl/replay_buffer.hpp"
#include "aesrl/td3.hpp"

namespace aesrl {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// Stream ids for the TD3 reference, disjoint from the engine's.
enum Td3Stream : std::uint64_t {
  kTd3Episodes = 21,
  kTd3Noise = 22,
  kTd3Critic = 23,
  kTd3Actor = 24,
  kTd3InitCritic = 25,
};

std::string trim(std::string s) {
  const auto a = s.find_first_not_of(" \t");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t");
  return s.substr(a, b - a + 1);
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::unique_ptr<EpisodicEnv> make_env(const ExperimentConfig& cfg) {
  switch (cfg.task) {
    case WorkerSpec::Task::Pendulum:
      return std::make_unique<PendulumEnv>(cfg.pendulum);
    case WorkerSpec::Task::PointMass:
      return std::make_unique<PointMassEnv>(cfg.point_mass);
    case WorkerSpec::Task::Synthetic:
      break;
  }
  throw ConfigError("task.kind: an episodic task is required");
}

}  // namespace

std::string output_root() {
  const char* env = std::getenv("AESRL_OUT");
  return env && *env ? std::string(env) : std::string("out");
}

ArtifactRun run_with_artifacts(const ConfigMap& map, const std::string& dir,
                               const std::string& stem, EngineOptions options) {
  const ExperimentConfig cfg = config_from_map(map);
  std::filesystem::create_directories(dir);
  ArtifactRun out;
  out.paths = ArtifactPaths::for_run(dir, stem);
  out.config_hash = config_hash(map);

  std::ofstream jsonl(out.paths.jsonl, std::ios::binary | std::ios::trunc);
  std::ofstream z(out.paths.z_sidecar, std::ios::binary | std::ios::trunc);
  if (!jsonl || !z) throw std::runtime_error("cannot write artifacts in " + dir);
  RunLogWriter log(jsonl, &z);
  log.header(map, cfg);
  options.log = &log;
  out.result = run_experiment(cfg, options);
  jsonl.flush();
  z.flush();

  const auto snap = encode_snapshot(out.result.final_distribution);
  std::ofstream s(out.paths.snapshot, std::ios::binary | std::ios::trunc);
  s.write(reinterpret_cast<const char*>(snap.data()), static_cast<std::streamsize>(snap.size()));
  std::ofstream curve(out.paths.curve_csv, std::ios::binary | std::ios::trunc);
  write_curve_csv(curve, out.result.accounting, out.config_hash, cfg.seed);
  if (!s || !curve) throw std::runtime_error("cannot write artifacts in " + dir);
  return out;
}

double ContributionShares::rl_share() const {
  const double total = rl_p_sum + es_p_sum;
  return total == 0.0 ? kNaN : rl_p_sum / total;
}

ContributionShares contributions(const RunAccounting& acc) {
  ContributionShares c;
  c.rl_p_sum = acc.rl_p_sum;
  c.es_p_sum = acc.es_p_sum;
  c.rl_updates = acc.rl_individuals;
  c.es_updates = acc.es_individuals;
  return c;
}

ContributionShares contributions_from_log(const std::string& jsonl_path) {
  std::ifstream in(jsonl_path);
  if (!in) throw std::runtime_error("cannot open " + jsonl_path);
  ContributionShares c;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || j.value("event", "") != "update") continue;
    const double p = j.at("p").get<double>();
    if (j.at("role").get<std::string>() == "RL") {
      c.rl_p_sum += p;
      ++c.rl_updates;
    } else {
      c.es_p_sum += p;
      ++c.es_updates;
    }
  }
  return c;
}

// ---------------------------------------------------------------------------

CompareMatrix expand_compare_matrix(const ConfigMap& matrix, std::size_t default_seeds) {
  ConfigMap base;
  std::vector<std::pair<std::string, std::pair<std::string, std::string>>> rule_overrides;
  std::vector<std::string> mean_rules, variance_rules;
  std::size_t n_seeds = default_seeds;
  std::uint64_t first_seed = 1;

  for (const auto& [key, value] : matrix) {
    if (key.rfind("compare.", 0) != 0) {
      base[key] = value;
      continue;
    }
    const std::string sub = key.substr(8);
    if (sub == "mean_rules") {
      mean_rules = split_list(value);
    } else if (sub == "variance_rules") {
      variance_rules = split_list(value);
    } else if (sub == "seeds") {
      n_seeds = static_cast<std::size_t>(std::stoull(value));
    } else if (sub == "first_seed") {
      first_seed = std::stoull(value);
    } else {
      const auto dot = sub.find('.');
      if (dot == std::string::npos)
        throw ConfigError("compare." + sub + ": unknown key");
      rule_overrides.push_back({sub.substr(0, dot), {sub.substr(dot + 1), value}});
    }
  }
  if (mean_rules.empty()) mean_rules.push_back(to_string(config_from_map(base).mean.rule).data());
  if (variance_rules.empty())
    variance_rules.push_back(to_string(config_from_map(base).variance.rule).data());
  if (mean_rules.size() * variance_rules.size() < 2)
    throw ConfigError("compare: at least two rule combinations are required");
  if (n_seeds == 0) throw ConfigError("compare.seeds must be >= 1");

  CompareMatrix out;
  for (std::size_t i = 0; i < n_seeds; ++i) out.seeds.push_back(first_seed + i);
  for (const auto& m : mean_rules) {
    mean_rule_from_string(m);
    for (const auto& v : variance_rules) {
      variance_rule_from_string(v);
      CompareEntry e;
      e.label = m + "+" + v;
      e.map = base;
      e.map["mean.rule"] = m;
      e.map["variance.rule"] = v;
      for (const auto& [rule, kv] : rule_overrides)
        if (rule == m || rule == v) e.map[kv.first] = kv.second;
      try {
        config_from_map(e.map);
        out.entries.push_back(std::move(e));
      } catch (const ConfigError& err) {
        out.invalid.push_back({e.label, err.what()});
      }
    }
  }
  return out;
}

SampleStats sample_stats(std::vector<double> xs) {
  SampleStats s;
  if (xs.empty()) return s;
  double sum = 0.0;
  for (double x : xs) sum += x;
  s.mean = sum / static_cast<double>(xs.size());
  if (xs.size() > 1) {
    double ss = 0.0;
    for (double x : xs) ss += (x - s.mean) * (x - s.mean);
    s.stddev = std::sqrt(ss / static_cast<double>(xs.size() - 1));
  }
  std::sort(xs.begin(), xs.end());
  const std::size_t n = xs.size();
  s.median = n % 2 ? xs[n / 2] : 0.5 * (xs[n / 2 - 1] + xs[n / 2]);
  return s;
}

CompareRow run_compare_entry(const CompareEntry& entry, const std::vector<std::uint64_t>& seeds,
                             const std::optional<std::string>& artifact_dir) {
  CompareRow row;
  row.label = entry.label;
  row.seeds = seeds;
  for (const auto seed : seeds) {
    ConfigMap map = entry.map;
    map["run.seed"] = std::to_string(seed);
    RunResult res;
    if (artifact_dir) {
      res = run_with_artifacts(map, *artifact_dir, entry.label + "-s" + std::to_string(seed)).result;
    } else {
      res = run_experiment(config_from_map(map));
    }
    row.final_fitness.push_back(res.accounting.final_fitness_mu);
    row.steps_to_target.push_back(res.accounting.steps_to_target);
  }
  const auto st = sample_stats(row.final_fitness);
  row.mean = st.mean;
  row.stddev = st.stddev;
  row.median = st.median;
  return row;
}

void write_compare_table(std::ostream& out, const std::vector<CompareRow>& rows) {
  std::size_t width = 5;
  for (const auto& r : rows) width = std::max(width, r.label.size());
  const auto flags = out.flags();
  out << std::left << std::setw(static_cast<int>(width)) << "rule" << std::right
      << std::setw(14) << "mean" << std::setw(12) << "std" << std::setw(14) << "median"
      << std::setw(5) << "n" << '\n';
  for (const auto& r : rows) {
    out << std::left << std::setw(static_cast<int>(width)) << r.label << std::right
        << std::setprecision(5) << std::setw(14) << r.mean << std::setw(12) << r.stddev
        << std::setw(14) << r.median << std::setw(5) << r.final_fitness.size() << '\n';
  }
  out.flags(flags);
}

void write_compare_csv(std::ostream& out, const std::vector<CompareRow>& rows,
                       const std::string& config_hash) {
  out << "# config_hash=" << config_hash << '\n';
  out << "label,seed,final_fitness,steps_to_target\n";
  for (const auto& r : rows)
    for (std::size_t i = 0; i < r.seeds.size(); ++i) {
      out << r.label << ',' << r.seeds[i] << ',' << format_double(r.final_fitness[i]) << ',';
      if (r.steps_to_target[i]) out << *r.steps_to_target[i];
      out << '\n';
    }
}

// ---------------------------------------------------------------------------

std::vector<double> timing_trace(const ExperimentConfig& cfg, std::size_t evaluations,
                                 int max_workers) {
  const std::size_t count = evaluations + static_cast<std::size_t>(std::max(max_workers, 1));
  std::vector<std::uint64_t> steps;
  if (cfg.episodic()) {
    const auto env = make_env(cfg);
    steps = episode_length_trace(*env, cfg.actor_spec(), count, cfg.a_noise, cfg.seed);
  } else {
    steps.assign(count, cfg.steps_per_eval);
  }
  Rng rng(derive_seed(cfg.seed, 5));
  return latency_trace(cfg.latency, steps, rng);
}

std::vector<TimingRow> timing_study(const ExperimentConfig& cfg, std::size_t evaluations,
                                    int min_workers, int max_workers) {
  if (min_workers < 1 || max_workers < min_workers)
    throw ConfigError("timing study: need 1 <= min workers <= max workers");
  return timing_study(timing_trace(cfg, evaluations, max_workers), evaluations, min_workers,
                      max_workers);
}

std::vector<TimingRow> timing_study(std::span<const double> trace, std::size_t evaluations,
                                    int min_workers, int max_workers) {
  if (min_workers < 1 || max_workers < min_workers)
    throw ConfigError("timing study: need 1 <= min workers <= max workers");
  if (trace.size() < evaluations + static_cast<std::size_t>(max_workers))
    throw std::invalid_argument("timing study: trace too short");
  std::vector<TimingRow> rows;
  const auto serial = simulate_serial(trace, evaluations);
  rows.push_back({ScheduleMode::SerialSync, 1, serial.makespan, 1.0, serial.idle_fraction()});
  for (int w = min_workers; w <= max_workers; ++w) {
    const auto sync =
        simulate_parallel_sync(trace, evaluations, w, 2 * static_cast<std::size_t>(w));
    const auto async = simulate_parallel_async(trace, evaluations, w);
    rows.push_back({ScheduleMode::ParallelSync, w, sync.makespan, sync.makespan / serial.makespan,
                    sync.idle_fraction()});
    rows.push_back({ScheduleMode::ParallelAsync, w, async.makespan,
                    async.makespan / serial.makespan, async.idle_fraction()});
  }
  return rows;
}

void write_timing_csv(std::ostream& out, const std::vector<TimingRow>& rows,
                      const std::string& config_hash, std::uint64_t seed) {
  out << "# config_hash=" << config_hash << " seed=" << seed << '\n';
  out << "mode,workers,makespan,reduction_vs_serial,idle_fraction\n";
  for (const auto& r : rows)
    out << to_string(r.mode) << ',' << r.workers << ',' << format_double(r.makespan) << ','
        << format_double(r.reduction_vs_serial) << ',' << format_double(r.idle_fraction) << '\n';
}

// ---------------------------------------------------------------------------

Td3ReferenceResult td3_reference(const ExperimentConfig& cfg) {
  if (!cfg.episodic()) throw ConfigError("task.kind: the TD3 reference needs an episodic task");
  const auto env = make_env(cfg);
  FlatParams actor{initial_distribution(cfg).mu, cfg.actor_spec()};
  Rng init(derive_seed(cfg.seed, kTd3InitCritic));
  CriticState critic = CriticState::create(cfg.critic_spec(), actor, init);
  ReplayBuffer buffer(cfg.replay_capacity, cfg.state_dim(), cfg.action_dim());
  Rng episode_rng(derive_seed(cfg.seed, kTd3Episodes));
  Rng noise_rng(derive_seed(cfg.seed, kTd3Noise));
  Rng critic_rng(derive_seed(cfg.seed, kTd3Critic));
  Rng actor_rng(derive_seed(cfg.seed, kTd3Actor));
  std::normal_distribution<double> normal(0.0, 1.0);
  AdamState actor_opt;

  Td3ReferenceResult out;
  out.best_test_return = -std::numeric_limits<double>::infinity();
  std::uint64_t next_test = 0;
  auto test = [&] {
    const double r = test_return(cfg, actor.data);
    out.final_test_return = r;
    out.best_test_return = std::max(out.best_test_return, r);
    out.curve.push_back({out.total_steps, 0.0, out.best_test_return, r});
    if (cfg.target_fitness && r >= *cfg.target_fitness && !out.steps_to_target)
      out.steps_to_target = out.total_steps;
  };
  auto maybe_test = [&] {
    if (cfg.test_every == 0 || out.total_steps < next_test) return;
    next_test = (out.total_steps / cfg.test_every + 1) * cfg.test_every;
    test();
  };
  maybe_test();

  double owed = 0.0;
  while (out.total_steps < cfg.max_steps && !out.steps_to_target) {
    Vec state = env->reset(episode_rng);
    bool done = false;
    while (!done && !out.steps_to_target) {
      Vec action = actor_forward(actor, state);
      for (Eigen::Index i = 0; i < action.size(); ++i)
        action[i] = std::clamp(action[i] + cfg.a_noise * normal(noise_rng), -1.0, 1.0);
      StepResult sr = env->step(action);
      buffer.append(Transition{state, action, sr.next_state, sr.reward, sr.terminal});
      state = std::move(sr.next_state);
      done = sr.done;
      ++out.total_steps;

      owed += cfg.critic_ratio;
      while (owed >= 1.0) {
        owed -= 1.0;
        const auto info = critic_train_step(critic, buffer, cfg.td3, critic_rng);
        if (info.outcome != TrainOutcome::Trained) {
          owed = 0.0;
          break;
        }
        if (critic.train_step_count % 2 == 0) {
          const Mat states = buffer.sample_states(cfg.actor_batch, actor_rng);
          const auto obj = actor_objective(actor, critic.q1, states);
          optimizer_step(cfg.actor_optimizer, cfg.actor_lr, actor.data, -obj.grad, actor_opt);
          quantize_f32(actor.data);
          absorb_actor(critic, actor, 1, cfg.td3.tau);
        }
      }
      maybe_test();
    }
    ++out.episodes;
  }
  if (cfg.test_every == 0 || out.curve.empty() || out.curve.back().total_steps != out.total_steps)
    test();
  return out;
}

// ---------------------------------------------------------------------------

std::vector<SweepPoint> sweep(
    const ConfigMap& base,
    const std::vector<std::pair<std::string, std::vector<std::string>>>& axes,
    const std::vector<std::uint64_t>& seeds, double success_threshold) {
  std::vector<SweepPoint> out;
  std::vector<std::size_t> idx(axes.size(), 0);
  for (const auto& [key, values] : axes)
    if (values.empty()) throw ConfigError("sweep: axis " + key + " has no values");
  while (true) {
    SweepPoint pt;
    for (std::size_t a = 0; a < axes.size(); ++a) pt.overrides[axes[a].first] = axes[a].second[idx[a]];
    std::vector<double> finals;
    for (const auto seed : seeds) {
      ConfigMap map = base;
      for (const auto& [k, v] : pt.overrides) map[k] = v;
      map["run.seed"] = std::to_string(seed);
      const double f = run_experiment(config_from_map(map)).accounting.final_fitness_mu;
      finals.push_back(f);
      pt.successes += f > success_threshold;
    }
    pt.stats = sample_stats(finals);
    out.push_back(std::move(pt));

    std::size_t a = 0;
    while (a < axes.size() && ++idx[a] == axes[a].second.size()) idx[a++] = 0;
    if (a == axes.size()) break;
  }
  return out;
}

}  // namespace aesrl
