#include "aesrl/distribution.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "aesrl/wire.hpp"

namespace aesrl {

std::string_view to_string(Role role) { return role == Role::RL ? "RL" : "ES"; }

Role role_from_string(std::string_view text) {
  if (text == "RL") return Role::RL;
  if (text == "ES") return Role::ES;
  throw ConfigError("unknown role: " + std::string(text));
}

namespace {

struct MeanRuleName {
  MeanRule rule;
  std::string_view name;
};

constexpr MeanRuleName kMeanRuleNames[] = {
    {MeanRule::FullMove, "FullMove"},
    {MeanRule::RankBasedSync, "RankBasedSync"},
    {MeanRule::RankBasedAsyncOldest, "RankBasedAsyncOldest"},
    {MeanRule::FixedLinear, "FixedLinear"},
    {MeanRule::FixedSigmoid, "FixedSigmoid"},
    {MeanRule::AbsoluteBaseline, "AbsoluteBaseline"},
    {MeanRule::RelativeBaseline, "RelativeBaseline"},
};

struct VarianceRuleName {
  VarianceRule rule;
  std::string_view name;
};

constexpr VarianceRuleName kVarianceRuleNames[] = {
    {VarianceRule::RankBasedSync, "RankBasedSync"},
    {VarianceRule::SuccessRule, "SuccessRule"},
    {VarianceRule::WelfordFixed, "WelfordFixed"},
    {VarianceRule::WelfordAdaptive, "WelfordAdaptive"},
    {VarianceRule::Constant, "Constant"},
};

double clip(double x, double lo, double hi) { return std::min(std::max(x, lo), hi); }

}  // namespace

std::string_view to_string(MeanRule rule) {
  for (const auto& e : kMeanRuleNames)
    if (e.rule == rule) return e.name;
  return "?";
}

std::string_view to_string(VarianceRule rule) {
  for (const auto& e : kVarianceRuleNames)
    if (e.rule == rule) return e.name;
  return "?";
}

std::string_view to_string(WeightMode mode) {
  return mode == WeightMode::Uniform ? "Uniform" : "LogRank";
}

MeanRule mean_rule_from_string(std::string_view text) {
  for (const auto& e : kMeanRuleNames)
    if (e.name == text) return e.rule;
  throw ConfigError("unknown mean rule: " + std::string(text));
}

VarianceRule variance_rule_from_string(std::string_view text) {
  for (const auto& e : kVarianceRuleNames)
    if (e.name == text) return e.rule;
  throw ConfigError("unknown variance rule: " + std::string(text));
}

WeightMode weight_mode_from_string(std::string_view text) {
  if (text == "Uniform") return WeightMode::Uniform;
  if (text == "LogRank") return WeightMode::LogRank;
  throw ConfigError("unknown weight mode: " + std::string(text));
}

bool is_ratio_rule(MeanRule rule) {
  return rule != MeanRule::RankBasedSync && rule != MeanRule::RankBasedAsyncOldest;
}

// ---------------------------------------------------------------------------

PopulationDistribution PopulationDistribution::create(Vec mu0, double sigma2_init,
                                                      double epsilon_floor) {
  if (!(epsilon_floor > 0.0)) throw ConfigError("epsilon_floor must be > 0");
  if (!(sigma2_init > 0.0)) throw ConfigError("sigma2_init must be > 0");
  PopulationDistribution d;
  d.sigma2 = Vec::Constant(mu0.size(), std::max(sigma2_init, epsilon_floor));
  d.mu = std::move(mu0);
  d.epsilon_floor = epsilon_floor;
  d.check();
  return d;
}

void PopulationDistribution::check() const {
  if (sigma2.size() != mu.size()) throw std::logic_error("sigma2/mu length mismatch");
  if (!(epsilon_floor > 0.0)) throw std::logic_error("epsilon_floor must be positive");
  if (!mu.allFinite() || !sigma2.allFinite()) throw std::logic_error("non-finite distribution");
  if (sigma2.size() > 0 && sigma2.minCoeff() < epsilon_floor)
    throw std::logic_error("sigma2 below the variance floor");
}

void PopulationDistribution::floor_variance() { sigma2 = sigma2.cwiseMax(epsilon_floor); }

void MeanRuleConfig::validate() const {
  if ((rule == MeanRule::FixedLinear || rule == MeanRule::FixedSigmoid) && !(r > 0.0))
    throw ConfigError("mean.r must be > 0 for fixed-range rules");
  if (rule == MeanRule::RelativeBaseline && !(f_b > 0.0))
    throw ConfigError("mean.f_b must be > 0 for RelativeBaseline");
  if (p_positive < 0.0 || p_positive > 1.0) throw ConfigError("mean.p_positive must be in [0,1]");
  if (p_negative < 0.0 || p_negative > 1.0) throw ConfigError("mean.p_negative must be in [0,1]");
  if (elites < 1) throw ConfigError("mean.elites must be >= 1");
}

void VarianceRuleConfig::validate() const {
  if (!(c_up > 1.0)) throw ConfigError("variance.c_up must be > 1");
  if (!(c_down > 0.0 && c_down < 1.0)) throw ConfigError("variance.c_down must be in (0,1)");
  if (!(p_th > 0.0 && p_th < 1.0)) throw ConfigError("variance.p_th must be in (0,1)");
  if (window < 1) throw ConfigError("variance.window must be >= 1");
  if (!(n_fixed >= 1.0)) throw ConfigError("variance.n_fixed must be >= 1");
  if (rule == VarianceRule::Constant && !(constant_sigma2 > 0.0))
    throw ConfigError("variance.constant_sigma2 must be > 0");
}

// ---------------------------------------------------------------------------

double sigmoid(double x) {
  // Split on sign so exp never overflows.
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Individual sample_individual(const PopulationDistribution& dist, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Individual ind;
  ind.z.resize(dist.mu.size());
  for (Eigen::Index i = 0; i < dist.mu.size(); ++i)
    ind.z[i] = dist.mu[i] + std::sqrt(dist.sigma2[i]) * normal(rng);
  return ind;
}

UpdateRatio update_ratio(const MeanRuleConfig& cfg, double f_z, double f_mu) {
  if (!std::isfinite(f_z) || !std::isfinite(f_mu))
    throw std::invalid_argument("update_ratio: non-finite fitness");

  const double p_sg = f_mu < f_z ? cfg.p_positive : cfg.p_negative;
  switch (cfg.rule) {
    case MeanRule::FullMove:
      return {f_z > f_mu ? 1.0 : 0.0, false};
    case MeanRule::FixedLinear:
      return {p_sg * clip((f_z - f_mu) / cfg.r, -1.0, 1.0), false};
    case MeanRule::FixedSigmoid:
      return {p_sg * sigmoid((f_z - f_mu) / cfg.r), false};
    case MeanRule::AbsoluteBaseline: {
      const double denom = (f_mu - cfg.f_b) + (f_z - cfg.f_b);
      if (denom <= 0.0) return {0.0, true};
      return {clip((f_z - cfg.f_b) / denom, -1.0, 1.0), false};
    }
    case MeanRule::RelativeBaseline: {
      const double f_rb = f_mu - cfg.f_b;
      if (f_z < f_rb - cfg.f_b) return {0.0, false};
      const double denom = cfg.f_b + (f_z - f_rb);
      // Only reachable at f_z == f_rb - f_b exactly.
      if (denom <= 0.0) return {0.0, false};
      const double sg = f_z >= f_rb ? cfg.p_positive : cfg.p_negative;
      return {sg * clip((f_z - f_rb) / denom, -1.0, 1.0), false};
    }
    case MeanRule::RankBasedSync:
    case MeanRule::RankBasedAsyncOldest:
      break;
  }
  throw std::invalid_argument("update_ratio: rank-based rules have no update ratio");
}

void apply_mean_update(Vec& mu, const Vec& z, double p) {
  if (z.size() != mu.size()) throw std::invalid_argument("apply_mean_update: dimension mismatch");
  if (std::abs(p) > 1.0) throw std::invalid_argument("apply_mean_update: |p| > 1");
  mu = (1.0 - p) * mu + p * z;
}

std::vector<double> rank_weights(std::size_t elites, WeightMode mode) {
  std::vector<double> w(elites);
  if (elites == 0) return w;
  if (mode == WeightMode::Uniform) {
    std::fill(w.begin(), w.end(), 1.0 / static_cast<double>(elites));
    return w;
  }
  const double numer = std::log(1.0 + static_cast<double>(elites));
  for (std::size_t i = 0; i < elites; ++i) w[i] = numer / static_cast<double>(i + 1);
  const double total = std::accumulate(w.begin(), w.end(), 0.0);
  for (auto& x : w) x /= total;
  return w;
}

Vec rank_based_mean_sync(std::span<const Individual> elites, WeightMode mode) {
  if (elites.empty()) throw std::invalid_argument("rank_based_mean_sync: empty elite set");
  const auto w = rank_weights(elites.size(), mode);
  Vec mu = Vec::Zero(elites.front().z.size());
  for (std::size_t i = 0; i < elites.size(); ++i) mu += w[i] * elites[i].z;
  return mu;
}

Vec rank_based_variance_sync(std::span<const Individual> elites, const Vec& mu_prev,
                             double epsilon_floor, WeightMode mode) {
  if (elites.empty()) throw std::invalid_argument("rank_based_variance_sync: empty elite set");
  const auto w = rank_weights(elites.size(), mode);
  Vec s = Vec::Zero(mu_prev.size());
  for (std::size_t i = 0; i < elites.size(); ++i)
    s += w[i] * (elites[i].z - mu_prev).array().square().matrix();
  return s.array() + epsilon_floor;
}

std::vector<Individual> select_elites(std::span<const Individual> population,
                                      std::size_t elites) {
  std::vector<std::size_t> order(population.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return population[a].fitness > population[b].fitness;
  });
  order.resize(std::min(elites, order.size()));
  std::vector<Individual> out;
  out.reserve(order.size());
  for (auto i : order) out.push_back(population[i]);
  return out;
}

OldestBuffer::OldestBuffer(std::size_t capacity) : capacity_(capacity) {
  if (capacity == 0) throw ConfigError("OldestBuffer capacity must be >= 1");
}

std::optional<Individual> OldestBuffer::push(Individual ind) {
  std::optional<Individual> evicted;
  if (items_.size() == capacity_) {
    evicted = std::move(items_.front());
    items_.pop_front();
  }
  items_.push_back(std::move(ind));
  return evicted;
}

void rank_based_async_oldest(OldestBuffer& buffer, Individual ind, PopulationDistribution& dist,
                             const MeanRuleConfig& cfg) {
  buffer.push(std::move(ind));
  const std::vector<Individual> pool(buffer.items().begin(), buffer.items().end());
  const auto elites = select_elites(pool, static_cast<std::size_t>(cfg.elites));
  const Vec target = rank_based_mean_sync(elites, cfg.weight_mode);
  const Vec mu_prev = dist.mu;
  const double inv_n = 1.0 / static_cast<double>(buffer.capacity());
  if (cfg.literal_oldest)
    dist.mu = inv_n * target;
  else
    dist.mu = (1.0 - inv_n) * dist.mu + inv_n * target;
  dist.sigma2 = rank_based_variance_sync(elites, mu_prev, dist.epsilon_floor, cfg.weight_mode);
  dist.floor_variance();
}

Vec welford_variance_update(const Vec& sigma2, const Vec& z, const Vec& mu_prev,
                            const Vec& mu_new, double n, double epsilon_floor) {
  if (!(n >= 1.0)) throw std::invalid_argument("welford_variance_update: n must be >= 1");
  const Vec cross = (z - mu_prev).cwiseProduct(z - mu_new);
  const Vec out = sigma2 + (cross - sigma2) / n;
  return out.cwiseMax(epsilon_floor);
}

std::optional<double> adaptive_population_size(double p) {
  const double q = clip(std::abs(p), 0.0, 1.0);
  if (q == 0.0) return std::nullopt;
  return std::max((1.0 - q) / q, 1.0);
}

SuccessHistory::SuccessHistory(int window) : window_(window) {
  if (window < 1) throw ConfigError("success window must be >= 1");
}

void SuccessHistory::record(bool success) {
  flags_.push_back(success);
  while (static_cast<int>(flags_.size()) > window_) flags_.pop_front();
}

double SuccessHistory::success_rate() const {
  if (flags_.empty()) return 0.0;
  const auto hits = std::count(flags_.begin(), flags_.end(), true);
  return static_cast<double>(hits) / static_cast<double>(flags_.size());
}

Vec success_rule_variance(const Vec& sigma2, const SuccessHistory& history,
                          const VarianceRuleConfig& cfg, double epsilon_floor) {
  if (!history.full()) return sigma2;
  const double rate = history.success_rate();
  constexpr double kTie = 1e-12;
  double factor = 1.0;
  if (rate > cfg.p_th + kTie)
    factor = cfg.c_up * cfg.c_up;
  else if (rate < cfg.p_th - kTie)
    factor = cfg.c_down * cfg.c_down;
  return (sigma2 * factor).cwiseMax(epsilon_floor);
}

// ---------------------------------------------------------------------------

std::vector<std::uint8_t> encode_snapshot(const PopulationDistribution& dist) {
  wire::Writer w;
  w.u32(static_cast<std::uint32_t>(dist.mu.size()));
  w.f32_run(dist.mu);
  w.f32_run(dist.sigma2);
  w.f32(static_cast<float>(dist.fitness_mu));
  return w.take();
}

PopulationDistribution decode_snapshot(std::span<const std::uint8_t> bytes, double epsilon_floor) {
  wire::Reader r(bytes);
  const auto dim = r.u32();
  if (r.remaining() != (2ULL * dim + 1) * sizeof(float))
    throw wire::FramingError("snapshot length does not match its declared dimension");
  PopulationDistribution d;
  d.mu.resize(dim);
  d.sigma2.resize(dim);
  for (std::uint32_t i = 0; i < dim; ++i) d.mu[i] = r.f32();
  for (std::uint32_t i = 0; i < dim; ++i) d.sigma2[i] = r.f32();
  d.fitness_mu = r.f32();
  d.epsilon_floor = epsilon_floor;
  return d;
}

// ---------------------------------------------------------------------------

DistributionOwner::DistributionOwner(PopulationDistribution dist, MeanRuleConfig mean,
                                     VarianceRuleConfig variance, std::size_t population_size,
                                     RefreshPolicy refresh)
    : dist_(std::move(dist)),
      mean_(mean),
      variance_(variance),
      oldest_(std::max<std::size_t>(population_size, 1)),
      history_(variance.window),
      refresh_(refresh) {
  mean_.validate();
  variance_.validate();
  if (variance_.rule == VarianceRule::Constant)
    dist_.sigma2.setConstant(std::max(variance_.constant_sigma2, dist_.epsilon_floor));
  dist_.check();
}

UpdateRecord DistributionOwner::update(const Individual& ind) {
  if (mean_.rule == MeanRule::RankBasedAsyncOldest) return update_with_ratio(ind, 0.0);
  const auto ratio = update_ratio(mean_, ind.fitness, dist_.fitness_mu);
  if (ratio.degenerate) ++degenerate_count_;
  auto rec = update_with_ratio(ind, ratio.p);
  rec.degenerate = ratio.degenerate;
  return rec;
}

UpdateRecord DistributionOwner::update_with_ratio(const Individual& ind, double p) {
  if (static_cast<std::size_t>(ind.z.size()) != dist_.dim())
    throw std::invalid_argument("individual dimension does not match the distribution");
  UpdateRecord rec;
  ++updates_;
  const Vec mu_prev = dist_.mu;

  if (mean_.rule == MeanRule::RankBasedAsyncOldest) {
    rec.p = 1.0 / static_cast<double>(oldest_.capacity());
    if (variance_.rule == VarianceRule::RankBasedSync) {
      rank_based_async_oldest(oldest_, ind, dist_, mean_);
    } else {
      const Vec sigma2 = dist_.sigma2;
      rank_based_async_oldest(oldest_, ind, dist_, mean_);
      dist_.sigma2 = sigma2;
      apply_variance(ind, mu_prev, rec.p, rec);
    }
    rec.sigma2_mean = dist_.sigma2.mean();
    return rec;
  }

  rec.p = p;
  apply_mean_update(dist_.mu, ind.z, p);
  apply_variance(ind, mu_prev, p, rec);

  if (p == 1.0) {
    // mu is now exactly z, whose fitness is already known.
    set_fitness_mu(ind.fitness);
  } else {
    p_since_refresh_ += std::abs(p);
    ++updates_since_refresh_;
  }
  rec.sigma2_mean = dist_.sigma2.mean();
  return rec;
}

void DistributionOwner::apply_variance(const Individual& ind, const Vec& mu_prev, double p,
                                       UpdateRecord& rec) {
  switch (variance_.rule) {
    case VarianceRule::RankBasedSync:
      // Only meaningful for generation updates; async ratio rules are rejected at validation.
      break;
    case VarianceRule::SuccessRule:
      history_.record(p > 0.0);
      dist_.sigma2 = success_rule_variance(dist_.sigma2, history_, variance_, dist_.epsilon_floor);
      break;
    case VarianceRule::WelfordFixed:
      rec.n = variance_.n_fixed;
      dist_.sigma2 = welford_variance_update(dist_.sigma2, ind.z, mu_prev, dist_.mu,
                                             variance_.n_fixed, dist_.epsilon_floor);
      break;
    case VarianceRule::WelfordAdaptive:
      rec.n = adaptive_population_size(p);
      if (rec.n)
        dist_.sigma2 = welford_variance_update(dist_.sigma2, ind.z, mu_prev, dist_.mu, *rec.n,
                                               dist_.epsilon_floor);
      break;
    case VarianceRule::Constant:
      break;
  }
}

void DistributionOwner::update_generation(std::span<const Individual> population) {
  if (population.empty()) throw std::invalid_argument("update_generation: empty population");
  const auto elites = select_elites(population, static_cast<std::size_t>(mean_.elites));
  const Vec mu_prev = dist_.mu;
  dist_.mu = rank_based_mean_sync(elites, mean_.weight_mode);
  if (variance_.rule != VarianceRule::Constant)
    dist_.sigma2 =
        rank_based_variance_sync(elites, mu_prev, dist_.epsilon_floor, mean_.weight_mode);
  ++updates_;
}

bool DistributionOwner::refresh_due() const {
  if (!needs_fitness_mu()) return false;
  if (p_since_refresh_ > refresh_.cumulative_p) return true;
  return refresh_.every > 0 && updates_since_refresh_ >= refresh_.every;
}

void DistributionOwner::set_fitness_mu(double f) {
  dist_.fitness_mu = f;
  p_since_refresh_ = 0.0;
  updates_since_refresh_ = 0;
}

}  // namespace aesrl
