#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "aesrl/harness.hpp"

using namespace aesrl;
namespace fs = std::filesystem;

namespace {

ConfigMap small_sphere() {
  return {{"run.seed", "2"},       {"run.max_steps", "200"},
          {"task.dim", "5"},       {"distribution.sigma2_init", "0.09"},
          {"mean.rule", "RelativeBaseline"}, {"mean.f_b", "0.5"},
          {"mean.r", "1"},         {"latency.model", "lognormal"}};
}

ConfigMap small_pendulum() {
  return {{"run.seed", "4"},
          {"run.max_steps", "2400"},
          {"run.workers", "3"},
          {"run.population", "6"},
          {"task.kind", "pendulum"},
          {"network.actor_hidden", "8"},
          {"network.critic_hidden", "8"},
          {"mean.rule", "RelativeBaseline"},
          {"mean.f_b", "100"},
          {"population_control.rl_start_step", "400"},
          {"rl.enabled", "true"},
          {"rl.batch_size", "16"},
          {"rl.actor_batch", "16"},
          {"rl.n_grad_steps", "5"},
          {"rl.critic_ratio", "0.05"}};
}

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name)
      : path(fs::temp_directory_path() / ("aesrl-test-" + name)) {
    fs::remove_all(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_SUITE("harness") {

TEST_CASE("sample statistics") {
  const auto s = sample_stats({4.0, 1.0, 3.0, 2.0});
  CHECK(s.mean == 2.5);
  CHECK(s.median == 2.5);
  CHECK(std::abs(s.stddev - std::sqrt(5.0 / 3.0)) < 1e-12);
  CHECK(sample_stats({7.0}).stddev == 0.0);
  CHECK(sample_stats({3.0, 1.0, 2.0}).median == 2.0);
}

TEST_CASE("compare: 2 rules x 3 seeds is 6 runs in one table") {
  ConfigMap m = small_sphere();
  m["compare.mean_rules"] = "RelativeBaseline, FixedSigmoid";
  m["compare.seeds"] = "3";
  m["compare.first_seed"] = "10";
  m["compare.FixedSigmoid.mean.p_positive"] = "0.3";
  const auto matrix = expand_compare_matrix(m);
  REQUIRE(matrix.entries.size() == 2);
  CHECK(matrix.seeds == std::vector<std::uint64_t>{10, 11, 12});
  CHECK(matrix.entries[1].map.at("mean.p_positive") == "0.3");
  CHECK(matrix.entries[0].map.count("mean.p_positive") == 0);
  CHECK(matrix.entries[0].map.count("compare.seeds") == 0);

  std::vector<CompareRow> rows;
  for (const auto& e : matrix.entries) rows.push_back(run_compare_entry(e, matrix.seeds));
  std::size_t runs = 0;
  for (const auto& r : rows) {
    runs += r.final_fitness.size();
    double mean = 0.0;
    for (double f : r.final_fitness) mean += f / 3.0;
    double ss = 0.0;
    for (double f : r.final_fitness) ss += (f - mean) * (f - mean);
    CHECK(std::abs(r.mean - mean) < 1e-12);
    CHECK(std::abs(r.stddev - std::sqrt(ss / 2.0)) < 1e-12);
  }
  CHECK(runs == 6);

  std::ostringstream table, csv;
  write_compare_table(table, rows);
  write_compare_csv(csv, rows, config_hash(m));
  CHECK(table.str().find("FixedSigmoid+WelfordAdaptive") != std::string::npos);
  CHECK(csv.str().rfind("# config_hash=" + config_hash(m), 0) == 0);
  std::size_t lines = 0;
  for (char c : csv.str()) lines += c == '\n';
  CHECK(lines == 2 + 6);
}

TEST_CASE("compare: (1+1)-ES entry matches a standalone run") {
  ConfigMap m = small_sphere();
  m["compare.mean_rules"] = "FullMove, RelativeBaseline";
  m["compare.variance_rules"] = "SuccessRule";
  m["compare.seeds"] = "2";
  const auto matrix = expand_compare_matrix(m);
  REQUIRE(matrix.entries.size() == 2);
  const auto row = run_compare_entry(matrix.entries[0], matrix.seeds);
  ConfigMap alone = small_sphere();
  alone["mean.rule"] = "FullMove";
  alone["variance.rule"] = "SuccessRule";
  alone["run.seed"] = "2";
  CHECK(row.final_fitness[1] == run_experiment(config_from_map(alone)).accounting.final_fitness_mu);
}

TEST_CASE("compare: invalid combinations are reported, not run") {
  ConfigMap m = small_sphere();
  m["compare.mean_rules"] = "RelativeBaseline, RankBasedAsyncOldest";
  m["compare.variance_rules"] = "WelfordAdaptive, RankBasedSync";
  m["mean.elites"] = "3";
  const auto matrix = expand_compare_matrix(m);
  CHECK(matrix.entries.size() == 3);
  REQUIRE(matrix.invalid.size() == 1);
  CHECK(matrix.invalid[0].first == "RelativeBaseline+RankBasedSync");
  CHECK(matrix.seeds.size() == 5);

  ConfigMap one = small_sphere();
  one["compare.seeds"] = "2";
  CHECK_THROWS_AS(expand_compare_matrix(one), ConfigError);
  one["compare.bogus"] = "1";
  CHECK_THROWS_AS(expand_compare_matrix(one), ConfigError);
}

TEST_CASE("run artifacts are byte-identical across reruns and self-describing") {
  TempDir dir("artifacts");
  const auto map = small_sphere();
  const auto a = run_with_artifacts(map, (dir.path / "a").string(), "run");
  const auto b = run_with_artifacts(map, (dir.path / "b").string(), "run");
  CHECK(slurp(a.paths.curve_csv) == slurp(b.paths.curve_csv));
  CHECK(slurp(a.paths.jsonl) == slurp(b.paths.jsonl));
  CHECK(slurp(a.paths.snapshot) == slurp(b.paths.snapshot));
  CHECK(slurp(a.paths.curve_csv).rfind("# config_hash=" + a.config_hash + " seed=2\n", 0) == 0);
  CHECK(slurp(a.paths.jsonl).find("\"config_hash\":\"" + a.config_hash + "\"") != std::string::npos);
  const auto snap = slurp(a.paths.snapshot);
  const Vec stored = a.result.final_distribution.mu.cast<float>().cast<double>();
  CHECK(decode_snapshot(std::vector<std::uint8_t>(snap.begin(), snap.end()), 1e-5).mu == stored);
}

TEST_CASE("contribution shares from the log match the run") {
  TempDir dir("contrib");
  const auto run = run_with_artifacts(small_pendulum(), dir.path.string(), "hybrid");
  const auto live = contributions(run.result.accounting);
  const auto logged = contributions_from_log(run.paths.jsonl);
  CHECK(live.rl_updates > 0);
  CHECK(logged.rl_updates == live.rl_updates);
  CHECK(logged.es_updates == live.es_updates);
  CHECK(std::abs(logged.rl_p_sum - live.rl_p_sum) < 1e-9);
  CHECK(std::abs(logged.es_p_sum - live.es_p_sum) < 1e-9);
  CHECK(logged.rl_share() >= 0.0);
  CHECK(logged.rl_share() <= 1.0);
}

TEST_CASE("tests of mu leave the trajectory untouched") {
  ConfigMap plain = small_pendulum();
  ConfigMap tested = plain;
  tested["test.every"] = "500";
  tested["test.episodes"] = "2";
  const auto a = run_experiment(config_from_map(plain)).accounting;
  const auto b = run_experiment(config_from_map(tested)).accounting;
  CHECK(a.mu_hashes == b.mu_hashes);
  CHECK(a.total_steps == b.total_steps);
  CHECK(a.tests == 0);
  CHECK(b.tests >= 5);

  TempDir dir("tested");
  const auto run = run_with_artifacts(tested, dir.path.string(), "tested");
  CHECK(slurp(run.paths.jsonl).find("\"event\":\"test\"") != std::string::npos);
  CHECK(replay_log(run.paths.jsonl).mu_hashes == run.result.accounting.mu_hashes);

  const auto cfg = config_from_map(tested);
  const double r = test_return(cfg, initial_distribution(cfg).mu);
  CHECK(r == test_return(cfg, initial_distribution(cfg).mu));
  CHECK(r < 0.0);
}

TEST_CASE("timing study shape") {
  ExperimentConfig cfg = config_from_map({{"task.kind", "pendulum"},
                                          {"network.actor_hidden", "16"},
                                          {"network.critic_hidden", "16"},
                                          {"mean.rule", "FullMove"}});
  const auto rows = timing_study(cfg, 60, 2, 9);
  REQUIRE(rows.size() == 1 + 2 * 8);
  CHECK(rows[0].mode == ScheduleMode::SerialSync);
  CHECK(rows[0].reduction_vs_serial == 1.0);
  for (std::size_t i = 1; i < rows.size(); ++i) {
    CHECK(rows[i].workers == 2 + static_cast<int>((i - 1) / 2));
    CHECK(rows[i].makespan == doctest::Approx(rows[i].reduction_vs_serial * rows[0].makespan));
  }
  std::ostringstream csv;
  write_timing_csv(csv, rows, "abc", cfg.seed);
  CHECK(csv.str().rfind("# config_hash=abc seed=1\nmode,workers,makespan,", 0) == 0);
  CHECK_THROWS_AS(timing_study(cfg, 60, 3, 2), ConfigError);
}

TEST_CASE("TD3 reference is deterministic and tested on schedule") {
  ConfigMap m = small_pendulum();
  m["run.max_steps"] = "1200";
  m["test.every"] = "400";
  m["test.episodes"] = "2";
  const auto cfg = config_from_map(m);
  const auto a = td3_reference(cfg);
  const auto b = td3_reference(cfg);
  CHECK(a.total_steps == 1200);  // 200-step episodes end on the budget
  CHECK(a.curve.size() == 4);    // 0, 400, 800, 1200
  REQUIRE(a.curve.size() == b.curve.size());
  for (std::size_t i = 0; i < a.curve.size(); ++i)
    CHECK(a.curve[i].mean_fitness == b.curve[i].mean_fitness);
  CHECK(a.final_test_return == a.curve.back().mean_fitness);

  m["run.target_fitness"] = "-1e9";
  const auto stopped = td3_reference(config_from_map(m));
  REQUIRE(stopped.steps_to_target);
  CHECK(*stopped.steps_to_target == 0);
}

TEST_CASE("sweep covers the grid") {
  const auto pts = sweep(small_sphere(), {{"mean.f_b", {"0.1", "1"}}, {"mean.p_positive", {"0.1", "0.2", "0.3"}}},
                         {1, 2}, -1.0);
  REQUIRE(pts.size() == 6);
  CHECK(pts[0].overrides.at("mean.f_b") == "0.1");
  CHECK(pts[1].overrides.at("mean.f_b") == "1");
  CHECK(pts[5].overrides.at("mean.p_positive") == "0.3");
  for (const auto& p : pts) CHECK(p.successes <= 2);
}

}
