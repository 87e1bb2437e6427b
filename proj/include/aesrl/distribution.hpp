#pragma once

/// @file distribution.hpp
/// Diagonal-Gaussian search distribution and its mean/variance update rules.
///
/// The distribution is N(mu, diag(sigma2)). Synchronous rules consume a whole
/// ranked generation; asynchronous rules consume one evaluated individual at a
/// time and are driven by a scalar update ratio p in [-1, 1].

#include <cstdint>
#include <deque>
#include <optional>
#include <span>
#include <vector>

#include "aesrl/common.hpp"

namespace aesrl {

struct PopulationDistribution {
  Vec mu;
  Vec sigma2;
  double fitness_mu = 0.0;
  double epsilon_floor = 1e-5;

  static PopulationDistribution create(Vec mu0, double sigma2_init, double epsilon_floor);

  std::size_t dim() const { return static_cast<std::size_t>(mu.size()); }
  /// Throws std::logic_error when an invariant is broken.
  void check() const;
  void floor_variance();
};

struct Individual {
  Vec z;
  Role role = Role::ES;
  double fitness = 0.0;
  std::uint64_t steps = 0;
};

enum class MeanRule {
  FullMove,
  RankBasedSync,
  RankBasedAsyncOldest,
  FixedLinear,
  FixedSigmoid,
  AbsoluteBaseline,
  RelativeBaseline,
};

enum class WeightMode { Uniform, LogRank };

struct MeanRuleConfig {
  MeanRule rule = MeanRule::RelativeBaseline;
  double r = 1.0;
  double f_b = 1.0;
  double p_positive = 0.2;
  double p_negative = 0.0;
  int elites = 5;  // K_e
  WeightMode weight_mode = WeightMode::LogRank;
  /// Use the literal (1/N) * sum(lambda_i z_i) form for RankBasedAsyncOldest
  /// instead of the damped convex step.
  bool literal_oldest = false;

  void validate() const;
};

enum class VarianceRule { RankBasedSync, SuccessRule, WelfordFixed, WelfordAdaptive, Constant };

struct VarianceRuleConfig {
  VarianceRule rule = VarianceRule::WelfordAdaptive;
  double n_fixed = 10.0;
  double p_th = 0.2;
  double c_up = 1.0 / 0.817;
  double c_down = 0.817;
  int window = 10;
  double constant_sigma2 = 1e-3;

  void validate() const;
};

std::string_view to_string(MeanRule rule);
std::string_view to_string(VarianceRule rule);
std::string_view to_string(WeightMode mode);
MeanRule mean_rule_from_string(std::string_view text);
VarianceRule variance_rule_from_string(std::string_view text);
WeightMode weight_mode_from_string(std::string_view text);

/// True for rules that produce a scalar update ratio from (f(z), f(mu)).
bool is_ratio_rule(MeanRule rule);

struct UpdateRatio {
  double p = 0.0;
  /// AbsoluteBaseline hit a non-positive denominator and returned 0.
  bool degenerate = false;
};

double sigmoid(double x);

/// z = mu + sqrt(sigma2) * N(0, I). Role is left at its default.
Individual sample_individual(const PopulationDistribution& dist, Rng& rng);

UpdateRatio update_ratio(const MeanRuleConfig& cfg, double f_z, double f_mu);

/// mu <- (1 - p) mu + p z
void apply_mean_update(Vec& mu, const Vec& z, double p);

/// Selection weights for K_e ranked elites; they sum to one.
std::vector<double> rank_weights(std::size_t elites, WeightMode mode);

/// Elites must be sorted by fitness, best first.
Vec rank_based_mean_sync(std::span<const Individual> elites, WeightMode mode);
Vec rank_based_variance_sync(std::span<const Individual> elites, const Vec& mu_prev,
                             double epsilon_floor, WeightMode mode);

/// Returns the best `elites` individuals (by fitness, descending; stable on ties).
std::vector<Individual> select_elites(std::span<const Individual> population,
                                      std::size_t elites);

/// Fixed-capacity FIFO of evaluated individuals. Eviction ignores fitness.
class OldestBuffer {
 public:
  explicit OldestBuffer(std::size_t capacity);

  /// Inserts `ind`, evicting the oldest entry if full. Returns the evicted one.
  std::optional<Individual> push(Individual ind);

  std::size_t capacity() const { return capacity_; }
  std::size_t size() const { return items_.size(); }
  const std::deque<Individual>& items() const { return items_; }

 private:
  std::size_t capacity_;
  std::deque<Individual> items_;
};

/// Asynchronous rank-based baseline: push `ind`, rank the buffer, then
/// mu <- (1 - 1/N) mu + (1/N) sum(lambda_i z_i) and sigma2 from the elite
/// spread around the previous mean.
void rank_based_async_oldest(OldestBuffer& buffer, Individual ind, PopulationDistribution& dist,
                             const MeanRuleConfig& cfg);

/// Elementwise Welford step with a fixed or adaptive population size n,
/// floored at epsilon_floor.
Vec welford_variance_update(const Vec& sigma2, const Vec& z, const Vec& mu_prev,
                            const Vec& mu_new, double n, double epsilon_floor);

/// n = max((1 - q) / q, 1) with q = clip(|p|, 0, 1). Empty when q == 0, which
/// means the variance is left untouched.
std::optional<double> adaptive_population_size(double p);

/// Sliding window of success flags for the 1/5th rule.
class SuccessHistory {
 public:
  explicit SuccessHistory(int window);

  void record(bool success);
  bool full() const { return static_cast<int>(flags_.size()) == window_; }
  double success_rate() const;
  int window() const { return window_; }

 private:
  int window_;
  std::deque<bool> flags_;
};

/// Rechenberg-style scaling. No-op until the window is full.
Vec success_rule_variance(const Vec& sigma2, const SuccessHistory& history,
                          const VarianceRuleConfig& cfg, double epsilon_floor);

/// Flat binary snapshot: u32 dim, dim f32 mu, dim f32 sigma2, f32 fitness_mu (little-endian).
std::vector<std::uint8_t> encode_snapshot(const PopulationDistribution& dist);
PopulationDistribution decode_snapshot(std::span<const std::uint8_t> bytes, double epsilon_floor);

/// What the owner did with one asynchronous result.
struct UpdateRecord {
  double p = 0.0;
  std::optional<double> n;  // empty: variance untouched
  bool degenerate = false;
  double sigma2_mean = 0.0;
};

/// Single writer of the distribution. Applies the configured mean and variance
/// rules to arriving individuals in arrival order and tracks when the cached
/// f(mu) has gone stale.
class DistributionOwner {
 public:
  struct RefreshPolicy {
    double cumulative_p = 0.5;
    std::uint64_t every = 0;  // 0 disables the periodic refresh
  };

  DistributionOwner(PopulationDistribution dist, MeanRuleConfig mean, VarianceRuleConfig variance,
                    std::size_t population_size, RefreshPolicy refresh);

  const PopulationDistribution& distribution() const { return dist_; }
  const MeanRuleConfig& mean_config() const { return mean_; }
  const VarianceRuleConfig& variance_config() const { return variance_; }

  /// Computes p from the cached f(mu) and applies both updates.
  UpdateRecord update(const Individual& ind);
  /// Applies both updates with an externally supplied ratio (log replay).
  /// For RankBasedAsyncOldest the ratio is ignored.
  UpdateRecord update_with_ratio(const Individual& ind, double p);

  /// One synchronous generation: rank-weighted mean and variance update.
  void update_generation(std::span<const Individual> population);

  bool needs_fitness_mu() const { return is_ratio_rule(mean_.rule); }
  bool refresh_due() const;
  void set_fitness_mu(double f);

  std::uint64_t degenerate_count() const { return degenerate_count_; }
  std::uint64_t updates() const { return updates_; }

 private:
  void apply_variance(const Individual& ind, const Vec& mu_prev, double p, UpdateRecord& rec);

  PopulationDistribution dist_;
  MeanRuleConfig mean_;
  VarianceRuleConfig variance_;
  OldestBuffer oldest_;
  SuccessHistory history_;
  RefreshPolicy refresh_;
  double p_since_refresh_ = 0.0;
  std::uint64_t updates_since_refresh_ = 0;
  std::uint64_t updates_ = 0;
  std::uint64_t degenerate_count_ = 0;
};

}  // namespace aesrl
