#include "aesrl/mlp.hpp"

#include <cmath>

#include "aesrl/wire.hpp"

namespace aesrl {

namespace {

using ConstMatMap = Eigen::Map<const Mat>;
using ConstVecMap = Eigen::Map<const Vec>;

void activate(Mat& x, Activation act, double slope) {
  switch (act) {
    case Activation::Tanh:
      x = x.array().tanh();
      break;
    case Activation::LeakyRelu:
      x = x.array().max(slope * x.array());
      break;
    case Activation::None:
      break;
  }
}

// Derivative expressed through the activation output y.
void scale_by_derivative(Mat& delta, const Mat& y, Activation act, double slope) {
  switch (act) {
    case Activation::Tanh:
      delta.array() *= 1.0 - y.array().square();
      break;
    case Activation::LeakyRelu:
      delta = (y.array() > 0.0).select(delta, slope * delta);
      break;
    case Activation::None:
      break;
  }
}

}  // namespace

MlpSpec MlpSpec::actor(int state_dim, int action_dim, std::vector<int> hidden) {
  if (hidden.empty()) throw ConfigError("actor needs at least one hidden layer");
  MlpSpec s;
  s.layer_sizes.push_back(state_dim);
  s.layer_sizes.insert(s.layer_sizes.end(), hidden.begin(), hidden.end());
  s.layer_sizes.push_back(action_dim);
  s.hidden = Activation::Tanh;
  s.output = Activation::Tanh;
  s.validate();
  return s;
}

MlpSpec MlpSpec::critic(int state_dim, int action_dim, std::vector<int> hidden) {
  if (hidden.empty()) throw ConfigError("critic needs at least one hidden layer");
  MlpSpec s;
  s.layer_sizes.push_back(state_dim + action_dim);
  s.layer_sizes.insert(s.layer_sizes.end(), hidden.begin(), hidden.end());
  s.layer_sizes.push_back(1);
  s.hidden = Activation::LeakyRelu;
  s.output = Activation::None;
  s.validate();
  return s;
}

std::size_t MlpSpec::param_count() const {
  std::size_t n = 0;
  for (std::size_t l = 0; l + 1 < layer_sizes.size(); ++l)
    n += static_cast<std::size_t>(layer_sizes[l] + 1) * static_cast<std::size_t>(layer_sizes[l + 1]);
  return n;
}

void MlpSpec::validate() const {
  if (layer_sizes.size() < 2) throw ConfigError("an MLP needs at least input and output layers");
  for (int n : layer_sizes)
    if (n <= 0) throw ConfigError("layer sizes must be positive");
  if (!(leaky_slope >= 0.0 && leaky_slope < 1.0))
    throw ConfigError("leaky slope must be in [0,1)");
}

FlatParams FlatParams::zeros(MlpSpec spec) {
  spec.validate();
  FlatParams p;
  p.data = Vec::Zero(static_cast<Eigen::Index>(spec.param_count()));
  p.spec = std::move(spec);
  return p;
}

FlatParams FlatParams::init(MlpSpec spec, Rng& rng) {
  FlatParams p = zeros(std::move(spec));
  Eigen::Index off = 0;
  for (std::size_t l = 0; l < p.spec.layer_count(); ++l) {
    const int fan_in = p.spec.layer_sizes[l];
    const int fan_out = p.spec.layer_sizes[l + 1];
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> u(-bound, bound);
    const Eigen::Index n = static_cast<Eigen::Index>(fan_in + 1) * fan_out;
    for (Eigen::Index i = 0; i < n; ++i) p.data[off + i] = u(rng);
    off += n;
  }
  return p;
}

std::vector<Layer> unflatten(const FlatParams& params) {
  if (static_cast<std::size_t>(params.data.size()) != params.spec.param_count())
    throw std::invalid_argument("unflatten: parameter length does not match the spec");
  std::vector<Layer> layers;
  Eigen::Index off = 0;
  for (std::size_t l = 0; l < params.spec.layer_count(); ++l) {
    const int in = params.spec.layer_sizes[l];
    const int out = params.spec.layer_sizes[l + 1];
    Layer layer;
    layer.weight = ConstMatMap(params.data.data() + off, out, in);
    off += static_cast<Eigen::Index>(in) * out;
    layer.bias = ConstVecMap(params.data.data() + off, out);
    off += out;
    layers.push_back(std::move(layer));
  }
  return layers;
}

FlatParams flatten(const std::vector<Layer>& layers, const MlpSpec& spec) {
  if (layers.size() != spec.layer_count())
    throw std::invalid_argument("flatten: layer count does not match the spec");
  FlatParams p = FlatParams::zeros(spec);
  Eigen::Index off = 0;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const int in = spec.layer_sizes[l];
    const int out = spec.layer_sizes[l + 1];
    if (layers[l].weight.rows() != out || layers[l].weight.cols() != in ||
        layers[l].bias.size() != out)
      throw std::invalid_argument("flatten: layer shape does not match the spec");
    Eigen::Map<Mat>(p.data.data() + off, out, in) = layers[l].weight;
    off += static_cast<Eigen::Index>(in) * out;
    p.data.segment(off, out) = layers[l].bias;
    off += out;
  }
  return p;
}

Mat mlp_forward(const FlatParams& params, const Mat& input, ForwardCache* cache) {
  const auto& spec = params.spec;
  if (input.rows() != spec.input_dim())
    throw std::invalid_argument("mlp_forward: input dimension " + std::to_string(input.rows()) +
                                " does not match network input " +
                                std::to_string(spec.input_dim()));
  if (static_cast<std::size_t>(params.data.size()) != spec.param_count())
    throw std::invalid_argument("mlp_forward: parameter length does not match the spec");

  if (cache) {
    cache->outputs.clear();
    cache->outputs.push_back(input);
  }
  Mat x = input;
  Eigen::Index off = 0;
  const std::size_t last = spec.layer_count() - 1;
  for (std::size_t l = 0; l <= last; ++l) {
    const int in = spec.layer_sizes[l];
    const int out = spec.layer_sizes[l + 1];
    ConstMatMap w(params.data.data() + off, out, in);
    off += static_cast<Eigen::Index>(in) * out;
    ConstVecMap b(params.data.data() + off, out);
    off += out;
    Mat y = w * x;
    y.colwise() += b;
    activate(y, l == last ? spec.output : spec.hidden, spec.leaky_slope);
    if (cache) cache->outputs.push_back(y);
    x = std::move(y);
  }
  return x;
}

Gradients mlp_backward(const FlatParams& params, const ForwardCache& cache, const Mat& upstream) {
  const auto& spec = params.spec;
  const std::size_t layers = spec.layer_count();
  if (cache.outputs.size() != layers + 1)
    throw std::invalid_argument("mlp_backward: forward cache does not match the network");
  if (upstream.rows() != spec.output_dim() || upstream.cols() != cache.outputs.back().cols())
    throw std::invalid_argument("mlp_backward: upstream gradient has the wrong shape");

  Gradients g;
  g.params = Vec::Zero(params.data.size());

  // Parameter offsets of each layer.
  std::vector<Eigen::Index> offsets(layers);
  Eigen::Index off = 0;
  for (std::size_t l = 0; l < layers; ++l) {
    offsets[l] = off;
    off += static_cast<Eigen::Index>(spec.layer_sizes[l] + 1) * spec.layer_sizes[l + 1];
  }

  Mat delta = upstream;
  for (std::size_t l = layers; l-- > 0;) {
    const int in = spec.layer_sizes[l];
    const int out = spec.layer_sizes[l + 1];
    scale_by_derivative(delta, cache.outputs[l + 1], l == layers - 1 ? spec.output : spec.hidden,
                        spec.leaky_slope);
    const Mat& x = cache.outputs[l];
    Eigen::Map<Mat>(g.params.data() + offsets[l], out, in).noalias() = delta * x.transpose();
    g.params.segment(offsets[l] + static_cast<Eigen::Index>(in) * out, out) =
        delta.rowwise().sum();
    ConstMatMap w(params.data.data() + offsets[l], out, in);
    delta = w.transpose() * delta;
  }
  g.input = std::move(delta);
  return g;
}

Vec actor_forward(const FlatParams& params, const Vec& state) {
  return mlp_forward(params, state).col(0);
}

double critic_forward(const FlatParams& params, const Vec& state, const Vec& action) {
  Vec in(state.size() + action.size());
  in << state, action;
  return mlp_forward(params, in)(0, 0);
}

std::vector<std::uint8_t> encode_params(const Vec& data) {
  wire::Writer w;
  w.u32(static_cast<std::uint32_t>(data.size()));
  w.f32_run(data);
  return w.take();
}

Vec decode_params(std::span<const std::uint8_t> bytes) {
  wire::Reader r(bytes);
  const auto dim = r.u32();
  if (r.remaining() != static_cast<std::size_t>(dim) * sizeof(float))
    throw wire::FramingError("parameter record length does not match its declared dimension");
  Vec v(dim);
  for (std::uint32_t i = 0; i < dim; ++i) v[i] = r.f32();
  return v;
}

}  // namespace aesrl
