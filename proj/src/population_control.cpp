#include "aesrl/population_control.hpp"

#include <algorithm>

namespace aesrl {

double compute_p_rl(const RoleCounter& counter) {
  // The feedback law alone keeps producing RL draws at the endpoints.
  if (counter.p_desired <= 0.0) return 0.0;
  if (counter.p_desired >= 1.0) return 1.0;
  const auto total = counter.n_rl + counter.n_es;
  if (total == 0) return counter.p_desired;
  const double ratio = static_cast<double>(counter.n_rl) / static_cast<double>(total);
  return std::clamp(-counter.k_rl * (ratio - counter.p_desired) + 0.5, 0.0, 1.0);
}

Role assign_role(RoleCounter& counter, std::uint64_t total_steps, double uniform_draw) {
  const bool rl = uniform_draw < compute_p_rl(counter) && total_steps >= counter.rl_start_step;
  if (rl) {
    ++counter.n_rl;
    return Role::RL;
  }
  ++counter.n_es;
  return Role::ES;
}

}  // namespace aesrl
