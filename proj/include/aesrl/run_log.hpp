#pragma once

/// @file run_log.hpp
/// Run artifacts and their replay.
///
/// A run writes one JSON object per line (`<name>.jsonl`), a binary sidecar of
/// every applied individual's parameters (`<name>.jsonl.z`, records of
/// {u32 dim, dim f32}) and the final distribution snapshot
/// (`<name>.snapshot`). The first JSONL line is a header carrying the
/// canonical config text, its hash and the seed. docs/artifacts.md lists
/// every event.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "aesrl/config.hpp"
#include "aesrl/distribution.hpp"
#include "aesrl/engine.hpp"

namespace aesrl {

class RunLogWriter {
 public:
  /// `z_sidecar` may be null, which makes the log unreplayable but still valid.
  RunLogWriter(std::ostream& jsonl, std::ostream* z_sidecar);

  void header(const ConfigMap& map, const ExperimentConfig& cfg);
  void event(const nlohmann::json& j);
  /// Appends z to the sidecar and returns its record index.
  std::uint64_t individual(const Vec& z);

 private:
  std::ostream& jsonl_;
  std::ostream* z_;
  std::uint64_t next_individual_ = 0;
};

/// Corrupt log content; the message starts with "line N:".
class ReplayError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ReplayResult {
  PopulationDistribution distribution;
  std::vector<std::string> mu_hashes;  // after each re-applied update
  std::uint64_t updates = 0;
  std::uint64_t generations = 0;
  /// The last line was cut short; everything before it was replayed.
  bool truncated = false;
  /// 1-based line number of the last event that was applied or accepted.
  std::uint64_t last_valid_line = 0;
  std::uint64_t header_seed = 0;
  std::string header_hash;
};

/// Re-applies every logged update from `jsonl_path` and its sidecar. Each
/// update's resulting mu hash is checked against the logged one.
ReplayResult replay_log(const std::string& jsonl_path);

/// Standard artifact paths for a run named `stem` inside `dir`.
struct ArtifactPaths {
  std::string jsonl, z_sidecar, snapshot, curve_csv;
  static ArtifactPaths for_run(const std::string& dir, const std::string& stem);
};

/// Learning curve CSV: `# config_hash=... seed=...` then
/// total_steps,best_fitness,mean_fitness rows.
void write_curve_csv(std::ostream& out, const RunAccounting& acc, const std::string& hash,
                     std::uint64_t seed);

/// Shortest decimal text that reads back to the same double.
std::string format_double(double x);

}  // namespace aesrl
