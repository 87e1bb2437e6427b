#pragma once

/// @file td3.hpp
/// Shared twin critic trained continuously from the replay buffer, and
/// per-individual actor improvement against a critic snapshot.

#include <cstdint>
#include <span>

#include "aesrl/mlp.hpp"
#include "aesrl/replay_buffer.hpp"

namespace aesrl {

enum class OptimizerKind { Sgd, Adam };

OptimizerKind optimizer_from_string(std::string_view text);

struct AdamState {
  Vec m;
  Vec v;
  std::uint64_t t = 0;
};

/// Gradient-descent step on `params` (minimizes). Sgd ignores `state`.
void optimizer_step(OptimizerKind kind, double lr, Vec& params, const Vec& grad, AdamState& state);

struct Td3Hyper {
  double gamma = 0.99;
  double tau = 0.005;
  double policy_noise = 0.2;
  double noise_clip = 0.5;
  std::size_t batch_size = 100;
  double critic_lr = 1e-3;
  OptimizerKind optimizer = OptimizerKind::Sgd;
};

struct CriticState {
  FlatParams q1, q2;
  FlatParams q1_target, q2_target;
  FlatParams actor_target;
  std::uint64_t train_step_count = 0;
  AdamState q1_opt, q2_opt;

  static CriticState create(const MlpSpec& critic_spec, FlatParams actor_target, Rng& rng);
};

/// theta' <- tau theta + (1 - tau) theta'
void soft_update(Vec& target, const Vec& live, double tau);

enum class TrainOutcome { Trained, BufferUnderfull };

struct CriticStepInfo {
  TrainOutcome outcome = TrainOutcome::BufferUnderfull;
  double loss = 0.0;           // summed MSE of both critics
  double mean_abs_td = 0.0;    // mean |q1 - y|
};

/// Bootstrapped targets y = r + gamma (1 - done) min(q1', q2')(s', a') with
/// target-policy smoothing on a'.
Vec td3_targets(const CriticState& critic, const Batch& batch, const Td3Hyper& hyper, Rng& rng);

/// Mean squared error of one critic against fixed targets, and its gradient.
struct CriticLoss {
  double loss = 0.0;
  double mean_abs_error = 0.0;
  Vec grad;
};
CriticLoss critic_loss(const FlatParams& q, const Batch& batch, const Vec& targets);

CriticStepInfo critic_train_on_batch(CriticState& critic, const Batch& batch,
                                     const Td3Hyper& hyper, Rng& rng);
/// No-op returning BufferUnderfull when the buffer holds fewer than batch_size items.
CriticStepInfo critic_train_step(CriticState& critic, const ReplayBuffer& buffer,
                                 const Td3Hyper& hyper, Rng& rng);

/// Moves actor_target toward a freshly trained actor as if `steps` soft
/// updates had been applied against it.
void absorb_actor(CriticState& critic, const FlatParams& actor, std::uint64_t steps, double tau);

/// J = mean_s q1(s, actor(s)) and dJ/dtheta.
struct ActorObjective {
  double value = 0.0;
  Vec grad;
};
ActorObjective actor_objective(const FlatParams& actor, const FlatParams& q1, const Mat& states);

struct ActorTrainHyper {
  std::uint64_t n_grad_steps = 1000;
  double lr = 1e-3;
  std::size_t batch_size = 100;
  OptimizerKind optimizer = OptimizerKind::Sgd;
};

/// Gradient ascent on J over a pre-sampled sequence of state batches.
FlatParams train_actor_on_states(FlatParams actor, const FlatParams& q1,
                                 std::span<const Mat> state_batches, double lr,
                                 OptimizerKind optimizer);

struct ActorTrainResult {
  FlatParams actor;
  bool skipped = false;
};

/// Samples n_grad_steps batches and ascends J. Returns the actor unchanged
/// (skipped) when the buffer is underfull.
ActorTrainResult actor_train_step(FlatParams actor, const FlatParams& q1,
                                  const ReplayBuffer& buffer, const ActorTrainHyper& hyper,
                                  Rng& rng);

}  // namespace aesrl
