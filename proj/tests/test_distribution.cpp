#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "aesrl/distribution.hpp"

using namespace aesrl;

namespace {

MeanRuleConfig rule_cfg(MeanRule rule) {
  MeanRuleConfig c;
  c.rule = rule;
  return c;
}

Individual ind(std::initializer_list<double> z, double fitness = 0.0) {
  Individual i;
  i.z = Eigen::Map<const Vec>(z.begin(), static_cast<Eigen::Index>(z.size()));
  i.fitness = fitness;
  return i;
}

}  // namespace

TEST_SUITE("distribution") {

TEST_CASE("sampling statistics stay within CLT bounds") {
  auto dist = PopulationDistribution::create(Vec::Zero(2), 1.0, 1e-5);
  Rng rng(12345);
  const int n = 100000;
  Vec sum = Vec::Zero(2), sq = Vec::Zero(2);
  for (int k = 0; k < n; ++k) {
    const Vec z = sample_individual(dist, rng).z;
    sum += z;
    sq += z.cwiseAbs2();
  }
  const Vec mean = sum / n;
  const Vec var = sq / n - mean.cwiseAbs2();
  for (int j = 0; j < 2; ++j) {
    CHECK(std::abs(mean[j]) <= 0.02);
    CHECK(var[j] >= 0.97);
    CHECK(var[j] <= 1.03);
  }
}

TEST_CASE("sampling at the variance floor stays near mu") {
  const double eps = 1e-12;
  PopulationDistribution dist;
  dist.mu = Vec::LinSpaced(5, -1.0, 1.0);
  dist.sigma2 = Vec::Constant(5, eps);
  dist.epsilon_floor = eps;
  Rng rng(3);
  const Vec z = sample_individual(dist, rng).z;
  CHECK((z - dist.mu).cwiseAbs().maxCoeff() <= 6.0 * std::sqrt(eps));
}

TEST_CASE("sampling is deterministic per seed") {
  auto dist = PopulationDistribution::create(Vec::Zero(8), 0.5, 1e-5);
  Rng a(99), b(99);
  CHECK(sample_individual(dist, a).z == sample_individual(dist, b).z);
}

TEST_CASE("update_ratio examples") {
  SUBCASE("FullMove strict improvement") {
    auto c = rule_cfg(MeanRule::FullMove);
    CHECK(update_ratio(c, 2.0, 1.0).p == 1.0);
    CHECK(update_ratio(c, 1.0, 1.0).p == 0.0);
    CHECK(update_ratio(c, 0.5, 1.0).p == 0.0);
  }
  SUBCASE("FixedSigmoid at equal fitness") {
    auto c = rule_cfg(MeanRule::FixedSigmoid);
    c.p_positive = 0.2;
    c.r = 3.0;
    // Equal fitness selects p_negative; with both set equal the value is p/2.
    c.p_negative = 0.2;
    CHECK(update_ratio(c, 4.0, 4.0).p == doctest::Approx(0.1).epsilon(1e-12));
  }
  SUBCASE("FixedLinear half range") {
    auto c = rule_cfg(MeanRule::FixedLinear);
    c.r = 8.0;
    c.p_positive = 0.1;
    c.p_negative = 0.0;
    CHECK(std::abs(update_ratio(c, 5.0, 1.0).p - 0.05) <= 1e-9);
  }
  SUBCASE("AbsoluteBaseline symmetric") {
    auto c = rule_cfg(MeanRule::AbsoluteBaseline);
    c.f_b = -10.0;
    CHECK(std::abs(update_ratio(c, 3.0, 3.0).p - 0.5) <= 1e-9);
  }
  SUBCASE("AbsoluteBaseline degenerate denominator") {
    auto c = rule_cfg(MeanRule::AbsoluteBaseline);
    c.f_b = 10.0;
    const auto r = update_ratio(c, 3.0, 4.0);
    CHECK(r.p == 0.0);
    CHECK(r.degenerate);
  }
  SUBCASE("RelativeBaseline equal fitness") {
    auto c = rule_cfg(MeanRule::RelativeBaseline);
    c.f_b = 2.5;
    c.p_positive = 0.2;
    CHECK(std::abs(update_ratio(c, -7.0, -7.0).p - 0.1) <= 1e-9);
  }
  SUBCASE("RelativeBaseline very low fitness") {
    auto c = rule_cfg(MeanRule::RelativeBaseline);
    c.f_b = 2.0;
    c.p_negative = 0.3;
    CHECK(update_ratio(c, 1.0 - 2.0 * 2.0, 1.0).p == 0.0);
    CHECK(update_ratio(c, 1.0 - 2.0 * 2.0 - 1e-3, 1.0).p == 0.0);
  }
  SUBCASE("rank rules have no ratio") {
    CHECK_THROWS(update_ratio(rule_cfg(MeanRule::RankBasedSync), 1.0, 0.0));
    CHECK_THROWS(update_ratio(rule_cfg(MeanRule::FullMove), NAN, 0.0));
  }
}

TEST_CASE("update_ratio bounded and monotone in f_z") {
  const MeanRule rules[] = {MeanRule::FullMove, MeanRule::FixedLinear, MeanRule::FixedSigmoid,
                            MeanRule::AbsoluteBaseline, MeanRule::RelativeBaseline};
  Rng rng(7);
  std::uniform_real_distribution<double> u(-50.0, 50.0);
  for (MeanRule rule : rules) {
    auto c = rule_cfg(rule);
    c.r = 7.0;
    c.f_b = rule == MeanRule::AbsoluteBaseline ? -100.0 : 5.0;
    c.p_positive = 0.3;
    c.p_negative = 0.0;
    const double bound = std::max({c.p_positive, c.p_negative, 1.0});
    for (int t = 0; t < 200; ++t) {
      const double f_mu = u(rng);
      double prev = -2.0;
      for (int k = 0; k <= 400; ++k) {
        // The absolute rule is monotone where the baseline lies below both fitnesses.
        const double f_z = -60.0 + 0.3 * k;
        const double p = update_ratio(c, f_z, f_mu).p;
        CHECK(std::abs(p) <= bound);
        CHECK(p >= prev - 1e-15);
        prev = p;
      }
    }
  }
}

TEST_CASE("apply_mean_update examples and segment property") {
  Vec mu(2);
  mu << 0, 2;
  Vec z(2);
  z << 4, 0;
  Vec m = mu;
  apply_mean_update(m, z, 0.0);
  CHECK(m == mu);
  m = mu;
  apply_mean_update(m, z, 1.0);
  CHECK(m == z);
  m = mu;
  apply_mean_update(m, z, 0.25);
  CHECK(std::abs(m[0] - 1.0) <= 1e-9);
  CHECK(std::abs(m[1] - 1.5) <= 1e-9);
  CHECK_THROWS(apply_mean_update(m, z, 1.5));

  Rng rng(11);
  std::uniform_real_distribution<double> u(-5, 5), up(0, 1);
  for (int t = 0; t < 1000; ++t) {
    Vec a = Vec::NullaryExpr(6, [&] { return u(rng); });
    const Vec b = Vec::NullaryExpr(6, [&] { return u(rng); });
    const Vec a0 = a;
    apply_mean_update(a, b, up(rng));
    for (int j = 0; j < 6; ++j) {
      CHECK(a[j] >= std::min(a0[j], b[j]) - 1e-12);
      CHECK(a[j] <= std::max(a0[j], b[j]) + 1e-12);
    }
  }
}

TEST_CASE("rank-based synchronous mean") {
  const std::vector<Individual> one{ind({3, -1}, 1.0)};
  CHECK(rank_based_mean_sync(one, WeightMode::LogRank) == one[0].z);

  const std::vector<Individual> two{ind({2, 0}, 2.0), ind({0, 2}, 1.0)};
  const Vec m = rank_based_mean_sync(two, WeightMode::Uniform);
  CHECK(std::abs(m[0] - 1.0) <= 1e-9);
  CHECK(std::abs(m[1] - 1.0) <= 1e-9);

  for (std::size_t k = 1; k <= 50; ++k) {
    const auto w = rank_weights(k, WeightMode::LogRank);
    double s = 0.0;
    for (double x : w) s += x;
    CHECK(std::abs(s - 1.0) <= 1e-12);
    CHECK(std::is_sorted(w.rbegin(), w.rend()));
  }
  CHECK_THROWS(rank_based_mean_sync(std::span<const Individual>{}, WeightMode::Uniform));
}

TEST_CASE("rank-based mean is permutation safe for equal fitness") {
  Rng rng(5);
  std::normal_distribution<double> n01;
  std::vector<Individual> elites;
  for (int i = 0; i < 7; ++i) {
    Individual e;
    e.z = Vec::NullaryExpr(4, [&] { return n01(rng); });
    e.fitness = 1.0;
    elites.push_back(e);
  }
  const Vec base = rank_based_mean_sync(elites, WeightMode::Uniform);
  for (int t = 0; t < 20; ++t) {
    std::shuffle(elites.begin(), elites.end(), rng);
    CHECK((rank_based_mean_sync(elites, WeightMode::Uniform) - base).cwiseAbs().maxCoeff() <=
          1e-12);
  }
}

TEST_CASE("rank-based synchronous variance") {
  Vec mu_prev(2);
  mu_prev << 1, -1;
  std::vector<Individual> same{ind({1, -1}), ind({1, -1}), ind({1, -1})};
  const Vec s = rank_based_variance_sync(same, mu_prev, 1e-5, WeightMode::LogRank);
  CHECK((s.array() == 1e-5).all());

  std::vector<Individual> pm{ind({1}), ind({-1})};
  // The floor is strictly positive by type; with eps tiny the value is 1 within 1e-9.
  const Vec v = rank_based_variance_sync(pm, Vec::Zero(1), 1e-300, WeightMode::Uniform);
  CHECK(std::abs(v[0] - 1.0) <= 1e-9);
  CHECK_THROWS(rank_based_variance_sync(std::span<const Individual>{}, mu_prev, 1e-5,
                                        WeightMode::Uniform));

  Rng rng(8);
  std::normal_distribution<double> n01;
  for (int t = 0; t < 100; ++t) {
    std::vector<Individual> e(3);
    for (auto& x : e) x.z = Vec::NullaryExpr(5, [&] { return n01(rng); });
    const Vec r = rank_based_variance_sync(e, Vec::Zero(5), 1e-3, WeightMode::LogRank);
    CHECK(r.minCoeff() >= 1e-3);
  }
}

TEST_CASE("select_elites orders by fitness and is stable") {
  std::vector<Individual> pop{ind({0}, 1.0), ind({1}, 3.0), ind({2}, 3.0), ind({3}, 2.0)};
  const auto e = select_elites(pop, 3);
  REQUIRE(e.size() == 3);
  CHECK(e[0].z[0] == 1.0);
  CHECK(e[1].z[0] == 2.0);
  CHECK(e[2].z[0] == 3.0);
  CHECK(select_elites(pop, 10).size() == 4);
}

TEST_CASE("rank_based_async_oldest") {
  MeanRuleConfig c = rule_cfg(MeanRule::RankBasedAsyncOldest);
  c.weight_mode = WeightMode::Uniform;

  SUBCASE("fixed point") {
    c.elites = 2;
    auto dist = PopulationDistribution::create(Vec::Constant(3, 0.7), 0.1, 1e-5);
    OldestBuffer buf(4);
    for (int i = 0; i < 4; ++i) buf.push(ind({0.7, 0.7, 0.7}, 1.0));
    rank_based_async_oldest(buf, ind({0.7, 0.7, 0.7}, 1.0), dist, c);
    CHECK((dist.mu.array() - 0.7).abs().maxCoeff() <= 1e-12);
  }
  SUBCASE("damped step N=2 K=1") {
    c.elites = 1;
    auto dist = PopulationDistribution::create(Vec::Zero(1), 0.1, 1e-5);
    OldestBuffer buf(2);
    buf.push(ind({-3}, -5.0));
    rank_based_async_oldest(buf, ind({2}, 1.0), dist, c);
    CHECK(std::abs(dist.mu[0] - 1.0) <= 1e-9);
  }
  SUBCASE("literal form") {
    c.elites = 1;
    c.literal_oldest = true;
    auto dist = PopulationDistribution::create(Vec::Zero(1), 0.1, 1e-5);
    OldestBuffer buf(2);
    rank_based_async_oldest(buf, ind({2}, 1.0), dist, c);
    CHECK(std::abs(dist.mu[0] - 1.0) <= 1e-9);
  }
  SUBCASE("FIFO eviction ignores fitness") {
    OldestBuffer buf(3);
    CHECK_FALSE(buf.push(ind({0}, 100.0)));
    buf.push(ind({1}, -100.0));
    buf.push(ind({2}, 0.0));
    const auto ev = buf.push(ind({3}, -1000.0));
    REQUIRE(ev);
    CHECK(ev->z[0] == 0.0);
    const auto ev2 = buf.push(ind({4}, 1000.0));
    CHECK(ev2->z[0] == 1.0);
    CHECK(buf.items().front().z[0] == 2.0);
  }
}

TEST_CASE("Welford variance examples") {
  const Vec s = Vec::Constant(3, 0.4);
  const Vec z = Vec::Constant(3, 1.5);
  for (double n : {2.0, 7.5, 40.0}) {
    const Vec r = welford_variance_update(s, z, z, z, n, 1e-9);
    CHECK((r - s * (1.0 - 1.0 / n)).cwiseAbs().maxCoeff() <= 1e-12);
  }
  const Vec r = welford_variance_update(Vec::Constant(1, 1.0), Vec::Constant(1, 2.0),
                                        Vec::Zero(1), Vec::Constant(1, 1.0), 2.0, 1e-5);
  CHECK(std::abs(r[0] - 1.5) <= 1e-9);

  const Vec big = welford_variance_update(s, Vec::Constant(3, 9.0), Vec::Zero(3),
                                          Vec::Constant(3, 4.0), 1e15, 1e-5);
  CHECK((big - s).cwiseAbs().maxCoeff() <= 1e-12);

  // Opposite-signed deviations push the increment negative; the floor holds.
  const Vec neg = welford_variance_update(Vec::Constant(1, 1e-4), Vec::Constant(1, 1.0),
                                          Vec::Zero(1), Vec::Constant(1, 2.0), 1.0, 1e-5);
  CHECK(neg[0] == 1e-5);
}

TEST_CASE("Welford fixed n converges geometrically") {
  for (double n : {2.0, 5.0, 20.0}) {
    Vec z(2), mp(2), mn(2);
    z << 1.3, -0.4;
    mp << 0.2, 0.1;
    mn << 0.5, -0.2;
    const Vec target = ((z - mp).array() * (z - mn).array()).matrix();
    Vec s = Vec::Constant(2, 3.0);
    const Vec s0 = s;
    for (int k = 1; k <= 100; ++k) {
      s = welford_variance_update(s, z, mp, mn, n, 1e-12);
      const Vec expected_gap = std::pow(1.0 - 1.0 / n, k) * (s0 - target).cwiseAbs();
      CHECK(((s - target).cwiseAbs() - expected_gap).cwiseAbs().maxCoeff() <= 1e-9);
    }
  }
}

TEST_CASE("adaptive population size") {
  CHECK(*adaptive_population_size(0.5) == 1.0);
  CHECK(std::abs(*adaptive_population_size(0.2) - 4.0) <= 1e-9);
  CHECK(std::abs(*adaptive_population_size(-0.2) - 4.0) <= 1e-9);
  CHECK_FALSE(adaptive_population_size(0.0).has_value());
  CHECK(*adaptive_population_size(3.0) == 1.0);
  for (int k = 1; k <= 1000; ++k) {
    const double p = (k % 2 ? 1 : -1) * k / 1000.0;
    CHECK(*adaptive_population_size(p) >= 1.0);
  }
}

TEST_CASE("success rule") {
  VarianceRuleConfig cfg;
  cfg.rule = VarianceRule::SuccessRule;
  const Vec s = Vec::Constant(4, 0.01);

  SuccessHistory all(10);
  for (int i = 0; i < 10; ++i) all.record(true);
  const Vec up = success_rule_variance(s, all, cfg, 1e-5);
  const double f = (1.0 / 0.817) * (1.0 / 0.817);
  CHECK((up - s * f).cwiseAbs().maxCoeff() <= 1e-12);

  SuccessHistory tie(10);
  for (int i = 0; i < 10; ++i) tie.record(i < 2);
  CHECK(success_rule_variance(s, tie, cfg, 1e-5) == s);

  SuccessHistory none(10);
  for (int i = 0; i < 10; ++i) none.record(false);
  Vec shrink = s;
  for (int k = 0; k < 200; ++k) {
    const Vec next = success_rule_variance(shrink, none, cfg, 1e-5);
    CHECK(next.minCoeff() >= 1e-5);
    if (shrink.minCoeff() > 1e-5) CHECK((next.array() < shrink.array()).all());
    shrink = next;
  }

  SuccessHistory partial(10);
  partial.record(true);
  CHECK(success_rule_variance(s, partial, cfg, 1e-5) == s);
}

TEST_CASE("sigmoid symmetry") {
  CHECK(sigmoid(0.0) == 0.5);
  for (double x = -40.0; x <= 40.0; x += 0.37)
    CHECK(std::abs(sigmoid(x) + sigmoid(-x) - 1.0) <= 1e-12);
  CHECK(sigmoid(-1000.0) >= 0.0);
  CHECK(sigmoid(1000.0) == 1.0);
}

TEST_CASE("variance floor holds for every asynchronous rule") {
  const VarianceRule rules[] = {VarianceRule::SuccessRule, VarianceRule::WelfordFixed,
                                VarianceRule::WelfordAdaptive, VarianceRule::Constant};
  for (VarianceRule vr : rules) {
    MeanRuleConfig m = rule_cfg(MeanRule::FixedLinear);
    m.r = 0.5;
    m.p_negative = 0.5;
    VarianceRuleConfig v;
    v.rule = vr;
    v.n_fixed = 1.0;
    DistributionOwner owner(PopulationDistribution::create(Vec::Zero(6), 0.5, 1e-4), m, v, 10,
                            {});
    Rng rng(21);
    for (int t = 0; t < 500; ++t) {
      Individual i = sample_individual(owner.distribution(), rng);
      i.fitness = -i.z.squaredNorm();
      owner.update(i);
      CHECK(owner.distribution().sigma2.minCoeff() >= 1e-4);
    }
  }
}

TEST_CASE("snapshot round trip") {
  auto dist = PopulationDistribution::create(Vec::LinSpaced(5, -2, 2), 0.25, 1e-5);
  dist.fitness_mu = -3.5;
  const auto bytes = encode_snapshot(dist);
  CHECK(bytes.size() == 4 + 5 * 4 * 2 + 4);
  const auto back = decode_snapshot(bytes, 1e-5);
  CHECK(back.mu == dist.mu);
  CHECK(back.sigma2 == dist.sigma2);
  CHECK(back.fitness_mu == dist.fitness_mu);
  CHECK_THROWS(decode_snapshot(std::span(bytes).first(bytes.size() - 1), 1e-5));
}

TEST_CASE("owner applies ratio rules and tracks refresh") {
  MeanRuleConfig m = rule_cfg(MeanRule::FullMove);
  VarianceRuleConfig v;
  v.rule = VarianceRule::WelfordAdaptive;
  DistributionOwner owner(PopulationDistribution::create(Vec::Zero(2), 1.0, 1e-5), m, v, 4,
                          {0.5, 0});
  owner.set_fitness_mu(-10.0);
  auto rec = owner.update(ind({1, 1}, -2.0));
  CHECK(rec.p == 1.0);
  CHECK(owner.distribution().mu == Vec::Ones(2));
  CHECK(owner.distribution().fitness_mu == -2.0);
  CHECK_FALSE(owner.refresh_due());
  rec = owner.update(ind({0, 0}, -5.0));
  CHECK(rec.p == 0.0);
  CHECK_FALSE(rec.n.has_value());
  CHECK(owner.distribution().mu == Vec::Ones(2));

  MeanRuleConfig rel = rule_cfg(MeanRule::RelativeBaseline);
  rel.f_b = 1.0;
  rel.p_positive = 1.0;
  DistributionOwner o2(PopulationDistribution::create(Vec::Zero(1), 1.0, 1e-5), rel, v, 4,
                       {0.5, 0});
  o2.set_fitness_mu(0.0);
  o2.update(ind({1}, 0.0));  // p = 0.5
  CHECK_FALSE(o2.refresh_due());
  o2.update(ind({1}, 0.0));
  CHECK(o2.refresh_due());
  o2.set_fitness_mu(1.0);
  CHECK_FALSE(o2.refresh_due());
}

TEST_CASE("config validation") {
  MeanRuleConfig m = rule_cfg(MeanRule::FixedLinear);
  m.r = 0.0;
  CHECK_THROWS_AS(m.validate(), ConfigError);
  m = rule_cfg(MeanRule::RelativeBaseline);
  m.f_b = -1.0;
  CHECK_THROWS_AS(m.validate(), ConfigError);
  VarianceRuleConfig v;
  v.c_up = 0.9;
  CHECK_THROWS_AS(v.validate(), ConfigError);
  v = {};
  v.c_down = 1.0;
  CHECK_THROWS_AS(v.validate(), ConfigError);
  CHECK(mean_rule_from_string(to_string(MeanRule::RelativeBaseline)) == MeanRule::RelativeBaseline);
  CHECK_THROWS_AS(mean_rule_from_string("Bogus"), ConfigError);
}

}
