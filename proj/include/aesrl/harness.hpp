#pragma once

/// @file harness.hpp
/// Experiment orchestration behind the CLI: runs with artifacts, rule
/// comparisons over seeds, the timing study, the TD3-only reference and the
/// parameter sweep used to calibrate the committed Sphere configs.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "aesrl/config.hpp"
#include "aesrl/engine.hpp"
#include "aesrl/run_log.hpp"

namespace aesrl {

/// Output root: $AESRL_OUT when set, else "out".
std::string output_root();

struct ArtifactRun {
  RunResult result;
  ArtifactPaths paths;
  std::string config_hash;
};

/// Runs `map` and writes `<stem>.jsonl`, `<stem>.jsonl.z`, `<stem>.snapshot`
/// and `<stem>.curve.csv` into `dir` (created if needed).
ArtifactRun run_with_artifacts(const ConfigMap& map, const std::string& dir,
                               const std::string& stem, EngineOptions options = {});

/// Share of the summed update ratios contributed by each role.
struct ContributionShares {
  double rl_p_sum = 0.0;
  double es_p_sum = 0.0;
  std::uint64_t rl_updates = 0;
  std::uint64_t es_updates = 0;
  /// rl_p_sum / (rl_p_sum + es_p_sum), NaN when both are 0.
  double rl_share() const;
};

ContributionShares contributions(const RunAccounting& acc);
/// The same statistic recomputed from the `update` events of a log.
ContributionShares contributions_from_log(const std::string& jsonl_path);

// ---------------------------------------------------------------------------
// Comparison over a rule matrix

/// One labelled configuration of a comparison.
struct CompareEntry {
  std::string label;
  ConfigMap map;
};

/// A matrix file is an ordinary config plus a [compare] section:
///
///   mean_rules     = RelativeBaseline, FixedSigmoid
///   variance_rules = WelfordAdaptive, Constant
///   seeds          = 5          ; run seeds first_seed .. first_seed + seeds - 1
///   first_seed     = 1
///   RelativeBaseline.mean.f_b = 0.1   ; applied only to entries with that mean rule
///
/// Per-rule overrides are keyed by a mean or variance rule name. Entries whose
/// combination fails validation go to `invalid` with the reason.
struct CompareMatrix {
  std::vector<CompareEntry> entries;
  std::vector<std::uint64_t> seeds;
  /// Validation message for entries that cannot run, by label.
  std::vector<std::pair<std::string, std::string>> invalid;
};

CompareMatrix expand_compare_matrix(const ConfigMap& matrix, std::size_t default_seeds = 5);

struct CompareRow {
  std::string label;
  std::vector<std::uint64_t> seeds;
  std::vector<double> final_fitness;  // f(mu) at the end of each run
  std::vector<std::optional<std::uint64_t>> steps_to_target;
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation over seeds
  double median = 0.0;
};

struct SampleStats {
  double mean = 0.0, stddev = 0.0, median = 0.0;
};
SampleStats sample_stats(std::vector<double> xs);

/// Runs one entry over `seeds`. With `artifact_dir` set every run also writes
/// its artifacts there.
CompareRow run_compare_entry(const CompareEntry& entry, const std::vector<std::uint64_t>& seeds,
                             const std::optional<std::string>& artifact_dir = std::nullopt);

/// Fixed-width table: label, mean, std, median, n.
void write_compare_table(std::ostream& out, const std::vector<CompareRow>& rows);
/// Long-form CSV, one row per (label, seed), with a `# config_hash=...` header.
void write_compare_csv(std::ostream& out, const std::vector<CompareRow>& rows,
                       const std::string& config_hash);

// ---------------------------------------------------------------------------
// Timing study

struct TimingRow {
  ScheduleMode mode = ScheduleMode::SerialSync;
  int workers = 1;
  double makespan = 0.0;
  /// makespan / serial makespan on the same trace (1 for the serial row).
  double reduction_vs_serial = 1.0;
  double idle_fraction = 0.0;
};

/// Latency trace for `evaluations` (plus async overrun) evaluations: episode
/// lengths of freshly initialized actors for episodic tasks, the config's
/// steps_per_eval otherwise, passed through `cfg.latency`.
std::vector<double> timing_trace(const ExperimentConfig& cfg, std::size_t evaluations,
                                 int max_workers);

/// Serial once, then parallel-sync (population 2W) and parallel-async for every
/// W in [min_workers, max_workers], all on one trace seeded by `cfg.seed`.
std::vector<TimingRow> timing_study(const ExperimentConfig& cfg, std::size_t evaluations,
                                    int min_workers, int max_workers);
/// The same rows for a given trace, which must hold evaluations + max_workers entries.
std::vector<TimingRow> timing_study(std::span<const double> trace, std::size_t evaluations,
                                    int min_workers, int max_workers);

void write_timing_csv(std::ostream& out, const std::vector<TimingRow>& rows,
                      const std::string& config_hash, std::uint64_t seed);

// ---------------------------------------------------------------------------
// TD3-only reference

struct Td3ReferenceResult {
  std::uint64_t total_steps = 0;
  std::uint64_t episodes = 0;
  /// One row per test evaluation; mean_fitness is the test return.
  std::vector<CurvePoint> curve;
  double final_test_return = 0.0;
  double best_test_return = 0.0;
  std::optional<std::uint64_t> steps_to_target;
};

/// A single TD3 learner with the config's networks, replay buffer and critic
/// hyperparameters: one critic step per environment step, an actor step and
/// actor-target update every second critic step. Tested like the engine
/// (`test.every`, `test.episodes`) and stopped at `run.target_fitness`.
Td3ReferenceResult td3_reference(const ExperimentConfig& cfg);

// ---------------------------------------------------------------------------
// Parameter sweep

/// One swept configuration and its results over the sweep seeds.
struct SweepPoint {
  ConfigMap overrides;
  SampleStats stats;
  int successes = 0;  // runs with final f(mu) above the success threshold
};

/// Runs every combination of `axes` (key -> candidate values) on top of `base`.
std::vector<SweepPoint> sweep(const ConfigMap& base,
                              const std::vector<std::pair<std::string, std::vector<std::string>>>& axes,
                              const std::vector<std::uint64_t>& seeds, double success_threshold);

}  // namespace aesrl
