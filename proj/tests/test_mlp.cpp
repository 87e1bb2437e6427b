#include <doctest.h>

#include <cmath>

#include "aesrl/mlp.hpp"
#include "gradcheck.hpp"

using namespace aesrl;

TEST_SUITE("policy-net") {

TEST_CASE("parameter counts") {
  // 17*400+400 + 400*300+300 + 300*6+6
  CHECK(MlpSpec::actor(17, 6).param_count() == 7200 + 120300 + 1806);
  CHECK(MlpSpec::critic(17, 6).param_count() ==
        static_cast<std::size_t>(23 * 400 + 400 + 400 * 300 + 300 + 300 + 1));
  CHECK_THROWS_AS(MlpSpec::actor(3, 1, {}), ConfigError);
  CHECK_THROWS_AS(MlpSpec::actor(3, 1, {0}), ConfigError);
  MlpSpec one;
  one.layer_sizes = {4};
  CHECK_THROWS_AS(one.validate(), ConfigError);
}

TEST_CASE("actor forward examples") {
  const auto spec = MlpSpec::actor(5, 3, {8, 6});
  CHECK(actor_forward(FlatParams::zeros(spec), Vec::Ones(5)) == Vec::Zero(3));

  MlpSpec tiny;
  tiny.layer_sizes = {1, 1, 1};
  FlatParams p = FlatParams::zeros(tiny);
  auto layers = unflatten(p);
  layers[0].weight(0, 0) = 1.0;
  layers[1].weight(0, 0) = 1.0;
  p = flatten(layers, tiny);
  CHECK(actor_forward(p, Vec::Zero(1))[0] == 0.0);

  Rng rng(3);
  std::normal_distribution<double> n01;
  for (int t = 0; t < 50; ++t) {
    FlatParams r = FlatParams::init(spec, rng);
    r.data *= 5.0;
    const Vec a = actor_forward(r, Vec::NullaryExpr(5, [&] { return 3.0 * n01(rng); }));
    CHECK(a.cwiseAbs().maxCoeff() <= 1.0);
  }
  CHECK_THROWS(actor_forward(FlatParams::zeros(spec), Vec::Ones(4)));
}

TEST_CASE("critic forward examples") {
  const auto spec = MlpSpec::critic(3, 1, {4});
  CHECK(critic_forward(FlatParams::zeros(spec), Vec::Ones(3), Vec::Ones(1)) == 0.0);

  // Q = w2 * leaky(w1 . [s; a] + b1) + b2, hand-evaluated.
  FlatParams p = FlatParams::zeros(spec);
  auto layers = unflatten(p);
  layers[0].weight.row(0) << 1.0, -2.0, 0.5, 1.0;
  layers[0].bias[0] = 0.25;
  layers[0].weight.row(1) << -1.0, 0.0, 0.0, 0.0;
  layers[1].weight(0, 0) = 2.0;
  layers[1].weight(0, 1) = 3.0;
  layers[1].bias[0] = -1.0;
  p = flatten(layers, spec);
  Vec s(3);
  s << 1.0, 0.5, 2.0;
  Vec a(1);
  a << -0.5;
  // h0 = 1 - 1 + 1 - 0.5 + 0.25 = 0.75 ; h1 = -1 -> -0.01
  const double expected = 2.0 * 0.75 + 3.0 * (-0.01) - 1.0;
  CHECK(std::abs(critic_forward(p, s, a) - expected) <= 1e-12);

  Rng rng(9);
  const FlatParams r = FlatParams::init(MlpSpec::critic(3, 1, {16, 16}), rng);
  CHECK(std::isfinite(critic_forward(r, Vec::Constant(3, 1e6), Vec::Constant(1, -1.0))));
}

TEST_CASE("flatten round trip and length mismatch") {
  Rng rng(1);
  const auto spec = MlpSpec::actor(4, 2, {7, 5});
  const FlatParams p = FlatParams::init(spec, rng);
  CHECK(flatten(unflatten(p), spec).data == p.data);
  FlatParams bad = p;
  bad.data.conservativeResize(p.data.size() - 1);
  CHECK_THROWS(unflatten(bad));
  CHECK(p.data.cwiseAbs().maxCoeff() <= 1.0 / std::sqrt(4.0));
}

TEST_CASE("backprop matches finite differences") {
  Rng rng(42);
  MlpSpec critic_4881;
  critic_4881.layer_sizes = {4, 8, 8, 1};
  critic_4881.hidden = Activation::LeakyRelu;
  critic_4881.output = Activation::None;
  const MlpSpec shapes[] = {critic_4881, MlpSpec::actor(3, 2, {6, 5}),
                            MlpSpec::critic(2, 2, {10})};
  for (const auto& spec : shapes) {
    const FlatParams p = FlatParams::init(spec, rng);
    const Mat x = Mat::Random(spec.input_dim(), 5);
    const Mat w = Mat::Random(spec.output_dim(), 5);
    const double err = testing::mlp_param_gradcheck(p, x, w);
    CHECK(err < 1e-4);
  }
}

TEST_CASE("backprop linearity and zero upstream") {
  Rng rng(5);
  const auto spec = MlpSpec::critic(3, 2, {8, 8});
  const FlatParams p = FlatParams::init(spec, rng);
  const Mat x = Mat::Random(5, 4);
  ForwardCache cache;
  const Mat out = mlp_forward(p, x, &cache);
  CHECK(mlp_backward(p, cache, Mat::Zero(1, 4)).params.isZero(0.0));
  const Mat up = Mat::Random(1, 4);
  const Vec g = mlp_backward(p, cache, up).params;
  const Vec g3 = mlp_backward(p, cache, 3.0 * up).params;
  CHECK((g3 - 3.0 * g).cwiseAbs().maxCoeff() <= 1e-10);
}

TEST_CASE("forward is deterministic") {
  Rng rng(8);
  const auto spec = MlpSpec::actor(6, 2, {32, 32});
  const FlatParams p = FlatParams::init(spec, rng);
  const Mat x = Mat::Random(6, 20);
  const Mat a = mlp_forward(p, x);
  const Mat b = mlp_forward(p, x);
  CHECK(a == b);
}

TEST_CASE("params wire round trip") {
  Vec v(5);
  v << 1.0, -2.5, 0.125, 3e-8, 1e10;
  const auto bytes = encode_params(v);
  CHECK(bytes.size() == 4 + 5 * 4);
  const Vec back = decode_params(bytes);
  for (int i = 0; i < 5; ++i) CHECK(back[i] == static_cast<double>(static_cast<float>(v[i])));
}

}
