#pragma once

#include <cstdint>
#include <mutex>
#include <span>

#include "aesrl/common.hpp"
#include "aesrl/environment.hpp"

namespace aesrl {

/// Column-per-sample minibatch.
struct Batch {
  Mat states;
  Mat actions;
  Mat next_states;
  Vec rewards;
  Vec dones;

  Eigen::Index size() const { return states.cols(); }
};

/// Fixed-capacity ring of transitions shared by every worker. Appends evict
/// the oldest entry once full; sampling is uniform with replacement.
/// All members are safe to call concurrently.
class ReplayBuffer {
 public:
  ReplayBuffer(std::size_t capacity, int state_dim, int action_dim);

  void append(const Transition& t);
  void append(std::span<const Transition> ts);

  std::size_t size() const;
  std::size_t capacity() const { return capacity_; }
  int state_dim() const { return state_dim_; }
  int action_dim() const { return action_dim_; }

  /// Throws std::logic_error when empty.
  Batch sample(std::size_t batch_size, Rng& rng) const;
  Mat sample_states(std::size_t batch_size, Rng& rng) const;

  /// i = 0 is the oldest stored transition.
  Transition at(std::size_t i) const;

 private:
  void append_locked(const Transition& t);
  std::size_t physical(std::size_t logical) const;

  std::size_t capacity_;
  int state_dim_;
  int action_dim_;
  mutable std::mutex mutex_;
  Mat states_;
  Mat actions_;
  Mat next_states_;
  Vec rewards_;
  Vec dones_;
  std::size_t write_ = 0;
  std::size_t size_ = 0;
};

}  // namespace aesrl
