#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

#include <Eigen/Dense>

namespace aesrl {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using Rng = std::mt19937_64;

enum class Role : std::uint8_t { ES = 0, RL = 1 };

std::string_view to_string(Role role);
Role role_from_string(std::string_view text);

/// Raised when a configuration or argument violates a documented precondition.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// SplitMix64 finalizer. Used to derive independent seeds for named streams
/// so that adding a consumer of randomness never shifts another stream.
constexpr std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream,
                                    std::uint64_t index = 0) {
  return mix_seed(mix_seed(base ^ mix_seed(stream)) + index);
}

inline double quantize_f32(double x) { return static_cast<double>(static_cast<float>(x)); }

inline void quantize_f32(Vec& v) {
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = quantize_f32(v[i]);
}

}  // namespace aesrl
