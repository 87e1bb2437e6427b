#pragma once

#include <cstdint>

#include "aesrl/common.hpp"

namespace aesrl {

/// P-controller keeping the realized RL share of new individuals near p_desired.
struct RoleCounter {
  std::uint64_t n_rl = 0;
  std::uint64_t n_es = 0;
  double k_rl = 50.0;
  double p_desired = 0.5;
  std::uint64_t rl_start_step = 10'000;

  double realized_rl_fraction() const {
    const auto total = n_rl + n_es;
    return total == 0 ? 0.0 : static_cast<double>(n_rl) / static_cast<double>(total);
  }
};

/// clip(-K_rl * (n_rl / (n_rl + n_es) - p_desired) + 0.5, 0, 1); p_desired while both counters are 0.
/// p_desired of exactly 0 or 1 pins the result.
double compute_p_rl(const RoleCounter& counter);

/// RL iff draw < p_rl and total_steps >= rl_start_step. Increments the chosen counter.
Role assign_role(RoleCounter& counter, std::uint64_t total_steps, double uniform_draw);

}  // namespace aesrl
