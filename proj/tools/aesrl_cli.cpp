// aesrl command-line driver.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include <unistd.h>

#include "aesrl/harness.hpp"

using namespace aesrl;
namespace fs = std::filesystem;

namespace {

struct ConfigArgs {
  std::string path;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;

  void add_to(CLI::App* app, bool required = true) {
    auto* opt = app->add_option("-c,--config", path, "config file");
    if (required) opt->required();
    app->add_option("--set", sets, "override, section.key=value (repeatable)");
    app->add_option("--seed", seed, "override run.seed");
  }

  ConfigMap load() const {
    ConfigMap map = path.empty() ? ConfigMap{} : read_config_file(path);
    apply_overrides(map, sets);
    if (seed) map["run.seed"] = std::to_string(*seed);
    return map;
  }

  std::string stem() const { return path.empty() ? "run" : fs::path(path).stem().string(); }
};

std::pair<int, int> parse_range(const std::string& text) {
  const auto dots = text.find("..");
  try {
    if (dots == std::string::npos) {
      const int w = std::stoi(text);
      return {w, w};
    }
    return {std::stoi(text.substr(0, dots)), std::stoi(text.substr(dots + 2))};
  } catch (const std::exception&) {
    throw ConfigError("--workers: expected N or A..B, got '" + text + "'");
  }
}

std::pair<std::string, std::uint16_t> parse_endpoint(const std::string& text) {
  const auto colon = text.rfind(':');
  if (colon == std::string::npos) throw ConfigError("endpoint '" + text + "' is not host:port");
  return {text.substr(0, colon), static_cast<std::uint16_t>(std::stoul(text.substr(colon + 1)))};
}

std::string fmt(double x) { return format_double(x); }

int cmd_timing(const ConfigMap& map, const std::string& workers, std::size_t evaluations,
               const std::string& out_dir, const std::string& stem) {
  const ExperimentConfig cfg = config_from_map(map);
  const auto [lo, hi] = parse_range(workers);
  const auto rows = timing_study(cfg, evaluations, lo, hi);
  fs::create_directories(out_dir);
  const std::string path = (fs::path(out_dir) / (stem + ".timing.csv")).string();
  std::ofstream f(path);
  write_timing_csv(f, rows, config_hash(map), cfg.seed);
  write_timing_csv(std::cout, rows, config_hash(map), cfg.seed);
  std::cerr << "wrote " << path << '\n';
  return 0;
}

int cmd_run(const ConfigArgs& args, const std::optional<std::string>& mode,
            const std::string& workers, std::size_t evaluations,
            const std::vector<std::string>& remote, std::string out_dir) {
  ConfigMap map = args.load();
  if (out_dir.empty()) out_dir = output_root();
  if (mode && *mode == "timing-study") return cmd_timing(map, workers, evaluations, out_dir, args.stem());
  if (mode) map["run.mode"] = *mode;
  const ExperimentConfig cfg = config_from_map(map);

  EngineOptions options;
  if (!remote.empty()) {
    if (static_cast<int>(remote.size()) != cfg.workers)
      throw ConfigError("--remote: got " + std::to_string(remote.size()) +
                        " endpoints for run.workers = " + std::to_string(cfg.workers));
    options.channels = [remote](int id) -> std::unique_ptr<Channel> {
      const auto [host, port] = parse_endpoint(remote[static_cast<std::size_t>(id)]);
      return std::make_unique<SocketChannel>(host, port, std::chrono::seconds(10));
    };
  }
  const std::string stem = args.stem() + "-s" + std::to_string(cfg.seed);
  const auto run = run_with_artifacts(map, out_dir, stem, options);
  const auto& a = run.result.accounting;
  std::cout << "config_hash " << run.config_hash << " seed " << cfg.seed << '\n'
            << "best_fitness " << fmt(a.best_fitness) << '\n'
            << "final_fitness_mu " << fmt(a.final_fitness_mu) << '\n'
            << "total_steps " << a.total_steps << '\n'
            << "makespan " << fmt(a.makespan) << '\n'
            << "updates " << a.updates << " evaluations " << a.evaluations << " failures "
            << a.failures << '\n'
            << "idle_fraction " << fmt(a.idle_fraction()) << '\n';
  if (a.steps_to_target) std::cout << "steps_to_target " << *a.steps_to_target << '\n';
  if (cfg.mode == ScheduleMode::ParallelAsync) {
    const auto c = contributions(a);
    std::cout << "rl_updates " << c.rl_updates << " es_updates " << c.es_updates
              << " rl_p_share " << fmt(c.rl_share()) << '\n';
  }
  std::cout << "artifacts " << run.paths.jsonl << '\n';
  return 0;
}

int cmd_compare(const ConfigArgs& args, std::optional<std::size_t> seeds, std::string out_dir,
                bool keep_artifacts) {
  ConfigMap map = args.load();
  if (seeds) map["compare.seeds"] = std::to_string(*seeds);
  if (out_dir.empty()) out_dir = output_root();
  const auto matrix = expand_compare_matrix(map);
  for (const auto& [label, why] : matrix.invalid)
    std::cerr << "skipping " << label << ": " << why << '\n';
  const std::string stem = args.stem();
  std::optional<std::string> artifacts;
  if (keep_artifacts) artifacts = (fs::path(out_dir) / (stem + "-runs")).string();
  std::vector<CompareRow> rows;
  for (const auto& e : matrix.entries) {
    rows.push_back(run_compare_entry(e, matrix.seeds, artifacts));
    std::cerr << e.label << " done\n";
  }
  write_compare_table(std::cout, rows);
  fs::create_directories(out_dir);
  const std::string path = (fs::path(out_dir) / (stem + ".compare.csv")).string();
  std::ofstream f(path);
  write_compare_csv(f, rows, config_hash(map));
  std::cerr << "wrote " << path << '\n';
  return 0;
}

int cmd_replay(const std::string& log) {
  const auto r = replay_log(log);
  std::cout << "config_hash " << r.header_hash << " seed " << r.header_seed << '\n'
            << "updates " << r.updates << " generations " << r.generations << '\n'
            << "last_valid_line " << r.last_valid_line << (r.truncated ? " (truncated)" : "")
            << '\n'
            << "final_mu_hash " << mu_hash(r.distribution.mu) << '\n';
  const auto c = contributions_from_log(log);
  if (c.rl_updates + c.es_updates > 0)
    std::cout << "rl_p_share " << fmt(c.rl_share()) << '\n';

  std::string snap_path = log;
  if (snap_path.size() > 6 && snap_path.ends_with(".jsonl"))
    snap_path = snap_path.substr(0, snap_path.size() - 6) + ".snapshot";
  std::ifstream s(snap_path, std::ios::binary);
  if (s && !r.truncated) {
    const std::vector<std::uint8_t> saved((std::istreambuf_iterator<char>(s)), {});
    const bool same = saved == encode_snapshot(r.distribution);
    std::cout << "snapshot " << (same ? "match" : "MISMATCH") << '\n';
    if (!same) return 1;
  }
  return 0;
}

int cmd_worker(const ConfigArgs& args, const std::string& listen) {
  const ExperimentConfig cfg = config_from_map(args.load());
  const auto [host, port] = parse_endpoint(listen);
  WorkerServer server(cfg.worker_spec(), host, port);
  std::cerr << "worker listening on " << host << ':' << server.port() << '\n';
  server.serve();
  return 0;
}

int cmd_td3(const ConfigArgs& args) {
  const ConfigMap map = args.load();
  const ExperimentConfig cfg = config_from_map(map);
  const auto r = td3_reference(cfg);
  std::cout << "# config_hash=" << config_hash(map) << " seed=" << cfg.seed << '\n'
            << "total_steps,test_return\n";
  for (const auto& p : r.curve) std::cout << p.total_steps << ',' << fmt(p.mean_fitness) << '\n';
  std::cerr << "final " << fmt(r.final_test_return) << " best " << fmt(r.best_test_return)
            << '\n';
  return 0;
}

int cmd_calibrate(const ConfigArgs& args, const std::vector<std::string>& axes_text,
                  std::size_t seeds, std::uint64_t first_seed, double threshold) {
  const ConfigMap base = args.load();
  std::vector<std::pair<std::string, std::vector<std::string>>> axes;
  for (const auto& a : axes_text) {
    const auto eq = a.find('=');
    if (eq == std::string::npos) throw ConfigError("--axis '" + a + "' is not key=v1,v2,...");
    std::vector<std::string> values;
    std::stringstream ss(a.substr(eq + 1));
    std::string v;
    while (std::getline(ss, v, ',')) values.push_back(v);
    axes.push_back({a.substr(0, eq), values});
  }
  std::vector<std::uint64_t> seed_list;
  for (std::size_t i = 0; i < seeds; ++i) seed_list.push_back(first_seed + i);
  const auto points = sweep(base, axes, seed_list, threshold);
  std::cout << "# config_hash=" << config_hash(base) << " seeds=" << first_seed << ".."
            << first_seed + seeds - 1 << '\n';
  for (const auto& [k, v] : axes) std::cout << k << ',';
  std::cout << "mean,std,median,successes\n";
  for (const auto& p : points) {
    for (const auto& [k, v] : axes) std::cout << p.overrides.at(k) << ',';
    std::cout << fmt(p.stats.mean) << ',' << fmt(p.stats.stddev) << ',' << fmt(p.stats.median)
              << ',' << p.successes << '\n';
  }
  return 0;
}

// --- selftest -------------------------------------------------------------

bool report(const char* name, bool ok, const std::string& detail = {}) {
  std::cout << (ok ? "PASS " : "FAIL ") << name;
  if (!detail.empty()) std::cout << " (" << detail << ')';
  std::cout << '\n';
  return ok;
}

int cmd_selftest() {
  const ConfigMap sphere{{"run.seed", "3"},        {"run.max_steps", "300"},
                         {"task.dim", "8"},        {"distribution.sigma2_init", "0.09"},
                         {"mean.rule", "RelativeBaseline"}, {"mean.f_b", "0.5"}};
  bool ok = true;

  const auto a = run_experiment(config_from_map(sphere));
  const auto b = run_experiment(config_from_map(sphere));
  ok &= report("determinism", a.accounting.mu_hashes == b.accounting.mu_hashes &&
                                  !a.accounting.mu_hashes.empty());

  const fs::path dir = fs::temp_directory_path() / ("aesrl-selftest-" + std::to_string(::getpid()));
  try {
    const auto run = run_with_artifacts(sphere, dir.string(), "selftest");
    const auto rep = replay_log(run.paths.jsonl);
    ok &= report("replay", rep.mu_hashes == run.result.accounting.mu_hashes &&
                               encode_snapshot(rep.distribution) ==
                                   encode_snapshot(run.result.final_distribution));

    std::vector<std::unique_ptr<WorkerServer>> servers;
    std::vector<std::thread> threads;
    const auto cfg = config_from_map(sphere);
    for (int w = 0; w < cfg.workers; ++w) {
      servers.push_back(std::make_unique<WorkerServer>(cfg.worker_spec(), "127.0.0.1", 0));
      threads.emplace_back([s = servers.back().get()] { s->serve(); });
    }
    EngineOptions options;
    options.channels = [&](int id) -> std::unique_ptr<Channel> {
      return std::make_unique<SocketChannel>("127.0.0.1", servers[static_cast<std::size_t>(id)]->port(),
                                             std::chrono::seconds(5));
    };
    const auto net = run_with_artifacts(sphere, dir.string(), "selftest-socket", options);
    for (int w = 0; w < cfg.workers; ++w) {
      SocketChannel c("127.0.0.1", servers[static_cast<std::size_t>(w)]->port(),
                      std::chrono::seconds(5));
      c.request_reply(Shutdown{}, std::chrono::seconds(5));
    }
    for (auto& t : threads) t.join();
    auto slurp = [](const std::string& p) {
      std::ifstream f(p, std::ios::binary);
      std::stringstream ss;
      ss << f.rdbuf();
      return ss.str();
    };
    ok &= report("socket transport", slurp(net.paths.jsonl) == slurp(run.paths.jsonl));
  } catch (const std::exception& e) {
    ok &= report("artifacts", false, e.what());
  }
  fs::remove_all(dir);

  ConfigMap bad = sphere;
  bad["mean.rule"] = "FixedLinear";
  std::string msg;
  try {
    config_from_map(bad);
  } catch (const ConfigError& e) {
    msg = e.what();
  }
  ok &= report("config validation", msg.find("mean.r") != std::string::npos, msg);

  std::cout << (ok ? "selftest passed" : "selftest FAILED") << '\n';
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Asynchronous evolution strategies with a shared TD3 critic"};
  app.require_subcommand(1);
  app.fallthrough();
  std::string out_dir;
  app.add_option("--out", out_dir, "output directory (default $AESRL_OUT or ./out)");

  ConfigArgs run_args;
  std::optional<std::string> mode;
  std::string workers = "2..9";
  std::size_t evaluations = 200;
  std::vector<std::string> remote;
  auto* run = app.add_subcommand("run", "run one experiment and write its artifacts");
  run_args.add_to(run);
  run->add_option("--mode", mode, "serial-sync | parallel-sync | parallel-async | timing-study");
  run->add_option("--workers", workers, "worker range for --mode timing-study, e.g. 2..9");
  run->add_option("--evaluations", evaluations, "evaluations per schedule for timing-study");
  run->add_option("--remote", remote, "worker endpoints host:port, one per worker")->delimiter(',');

  ConfigArgs cmp_args;
  std::optional<std::size_t> cmp_seeds;
  bool keep = false;
  auto* cmp = app.add_subcommand("compare", "run a rule matrix over seeds and tabulate");
  cmp_args.add_to(cmp);
  cmp->add_option("--seeds", cmp_seeds, "number of seeds (default 5)");
  cmp->add_flag("--keep-artifacts", keep, "write every run's artifacts");

  ConfigArgs tim_args;
  auto* tim = app.add_subcommand("timing-study", "makespan of the three modes over worker counts");
  tim_args.add_to(tim);
  tim->add_option("--workers", workers, "worker range, e.g. 2..9");
  tim->add_option("--evaluations", evaluations, "evaluations per schedule");

  std::string log_path;
  auto* rep = app.add_subcommand("replay", "re-apply a run log and check it against its snapshot");
  rep->add_option("log", log_path, "run log (.jsonl)")->required();

  auto* self = app.add_subcommand("selftest", "quick end-to-end checks");

  ConfigArgs wrk_args;
  std::string listen = "127.0.0.1:0";
  auto* wrk = app.add_subcommand("worker", "serve a worker over TCP until shut down");
  wrk_args.add_to(wrk);
  wrk->add_option("--listen", listen, "host:port (port 0 picks one)");

  ConfigArgs td3_args;
  auto* td3 = app.add_subcommand("td3-reference", "single-learner TD3 baseline, test returns as CSV");
  td3_args.add_to(td3);

  ConfigArgs cal_args;
  std::vector<std::string> axes;
  std::size_t cal_seeds = 10;
  std::uint64_t first_seed = 1;
  double threshold = -1e-2;
  auto* cal = app.add_subcommand("calibrate", "grid sweep of config values over seeds");
  cal_args.add_to(cal);
  cal->add_option("--axis", axes, "key=v1,v2,... (repeatable)")->required();
  cal->add_option("--seeds", cal_seeds, "number of seeds");
  cal->add_option("--first-seed", first_seed, "first seed");
  cal->add_option("--threshold", threshold, "success threshold on final f(mu)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) return cmd_run(run_args, mode, workers, evaluations, remote, out_dir);
    if (*cmp) return cmd_compare(cmp_args, cmp_seeds, out_dir, keep);
    if (*tim)
      return cmd_timing(tim_args.load(), workers, evaluations,
                        out_dir.empty() ? output_root() : out_dir, tim_args.stem());
    if (*rep) return cmd_replay(log_path);
    if (*self) return cmd_selftest();
    if (*wrk) return cmd_worker(wrk_args, listen);
    if (*td3) return cmd_td3(td3_args);
    if (*cal) return cmd_calibrate(cal_args, axes, cal_seeds, first_seed, threshold);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const ReplayError& e) {
    std::cerr << "replay error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
