#include "aesrl/replay_buffer.hpp"

namespace aesrl {

ReplayBuffer::ReplayBuffer(std::size_t capacity, int state_dim, int action_dim)
    : capacity_(capacity), state_dim_(state_dim), action_dim_(action_dim) {
  if (capacity == 0) throw ConfigError("replay capacity must be >= 1");
  if (state_dim < 1 || action_dim < 1) throw ConfigError("replay dimensions must be >= 1");
  const auto cap = static_cast<Eigen::Index>(capacity);
  states_.resize(state_dim, cap);
  actions_.resize(action_dim, cap);
  next_states_.resize(state_dim, cap);
  rewards_.resize(cap);
  dones_.resize(cap);
}

void ReplayBuffer::append_locked(const Transition& t) {
  if (t.state.size() != state_dim_ || t.next_state.size() != state_dim_ ||
      t.action.size() != action_dim_)
    throw std::invalid_argument("transition dimensions do not match the replay buffer");
  const auto i = static_cast<Eigen::Index>(write_);
  states_.col(i) = t.state;
  actions_.col(i) = t.action;
  next_states_.col(i) = t.next_state;
  rewards_[i] = t.reward;
  dones_[i] = t.done ? 1.0 : 0.0;
  write_ = (write_ + 1) % capacity_;
  if (size_ < capacity_) ++size_;
}

void ReplayBuffer::append(const Transition& t) {
  std::lock_guard lock(mutex_);
  append_locked(t);
}

void ReplayBuffer::append(std::span<const Transition> ts) {
  std::lock_guard lock(mutex_);
  for (const auto& t : ts) append_locked(t);
}

std::size_t ReplayBuffer::size() const {
  std::lock_guard lock(mutex_);
  return size_;
}

std::size_t ReplayBuffer::physical(std::size_t logical) const {
  return size_ < capacity_ ? logical : (write_ + logical) % capacity_;
}

Batch ReplayBuffer::sample(std::size_t batch_size, Rng& rng) const {
  std::lock_guard lock(mutex_);
  if (size_ == 0) throw std::logic_error("cannot sample from an empty replay buffer");
  std::uniform_int_distribution<std::size_t> pick(0, size_ - 1);
  const auto n = static_cast<Eigen::Index>(batch_size);
  Batch b;
  b.states.resize(state_dim_, n);
  b.actions.resize(action_dim_, n);
  b.next_states.resize(state_dim_, n);
  b.rewards.resize(n);
  b.dones.resize(n);
  for (Eigen::Index k = 0; k < n; ++k) {
    const auto i = static_cast<Eigen::Index>(pick(rng));
    b.states.col(k) = states_.col(i);
    b.actions.col(k) = actions_.col(i);
    b.next_states.col(k) = next_states_.col(i);
    b.rewards[k] = rewards_[i];
    b.dones[k] = dones_[i];
  }
  return b;
}

Mat ReplayBuffer::sample_states(std::size_t batch_size, Rng& rng) const {
  std::lock_guard lock(mutex_);
  if (size_ == 0) throw std::logic_error("cannot sample from an empty replay buffer");
  std::uniform_int_distribution<std::size_t> pick(0, size_ - 1);
  Mat s(state_dim_, static_cast<Eigen::Index>(batch_size));
  for (Eigen::Index k = 0; k < s.cols(); ++k)
    s.col(k) = states_.col(static_cast<Eigen::Index>(pick(rng)));
  return s;
}

Transition ReplayBuffer::at(std::size_t i) const {
  std::lock_guard lock(mutex_);
  if (i >= size_) throw std::out_of_range("replay index out of range");
  const auto p = static_cast<Eigen::Index>(physical(i));
  return {states_.col(p), actions_.col(p), next_states_.col(p), rewards_[p], dones_[p] != 0.0};
}

}  // namespace aesrl
