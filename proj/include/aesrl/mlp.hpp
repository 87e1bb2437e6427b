#pragma once

/// @file mlp.hpp
/// Fully connected networks stored as one flat parameter vector.
///
/// Layout: for each layer in order, the fan_out x fan_in weight matrix in
/// column-major order followed by the fan_out bias vector. The evolution
/// strategy samples directly in this space.

#include <cstdint>
#include <span>
#include <vector>

#include "aesrl/common.hpp"

namespace aesrl {

enum class Activation { Tanh, LeakyRelu, None };

struct MlpSpec {
  std::vector<int> layer_sizes;
  Activation hidden = Activation::Tanh;
  Activation output = Activation::Tanh;
  double leaky_slope = 0.01;

  /// Linear(s,h1)-tanh-...-Linear(hk,a)-tanh
  static MlpSpec actor(int state_dim, int action_dim, std::vector<int> hidden = {400, 300});
  /// Linear(s+a,h1)-leakyReLU-...-Linear(hk,1)
  static MlpSpec critic(int state_dim, int action_dim, std::vector<int> hidden = {400, 300});

  int input_dim() const { return layer_sizes.front(); }
  int output_dim() const { return layer_sizes.back(); }
  std::size_t layer_count() const { return layer_sizes.size() - 1; }
  std::size_t param_count() const;
  void validate() const;

  friend bool operator==(const MlpSpec&, const MlpSpec&) = default;
};

struct FlatParams {
  Vec data;
  MlpSpec spec;

  static FlatParams zeros(MlpSpec spec);
  /// Weights and biases uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)].
  static FlatParams init(MlpSpec spec, Rng& rng);
};

struct Layer {
  Mat weight;  // fan_out x fan_in
  Vec bias;
  friend bool operator==(const Layer& a, const Layer& b) {
    return a.weight == b.weight && a.bias == b.bias;
  }
};

std::vector<Layer> unflatten(const FlatParams& params);
FlatParams flatten(const std::vector<Layer>& layers, const MlpSpec& spec);

/// Activations kept from a forward pass for the backward pass.
struct ForwardCache {
  std::vector<Mat> outputs;  // outputs[0] is the input batch, outputs[l] after layer l
};

/// Batched forward; columns of `input` are samples.
Mat mlp_forward(const FlatParams& params, const Mat& input, ForwardCache* cache = nullptr);

struct Gradients {
  Vec params;  // same layout as FlatParams::data
  Mat input;   // d loss / d input, one column per sample
};

/// Reverse-mode pass. `upstream` is d loss / d output with the output's shape.
Gradients mlp_backward(const FlatParams& params, const ForwardCache& cache, const Mat& upstream);

Vec actor_forward(const FlatParams& params, const Vec& state);
double critic_forward(const FlatParams& params, const Vec& state, const Vec& action);

/// {u32 dim, dim f32} little-endian.
std::vector<std::uint8_t> encode_params(const Vec& data);
Vec decode_params(std::span<const std::uint8_t> bytes);

}  // namespace aesrl
