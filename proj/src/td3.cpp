#include "aesrl/td3.hpp"

#include <algorithm>
#include <cmath>

namespace aesrl {

OptimizerKind optimizer_from_string(std::string_view text) {
  if (text == "sgd") return OptimizerKind::Sgd;
  if (text == "adam") return OptimizerKind::Adam;
  throw ConfigError("unknown optimizer: " + std::string(text));
}

void optimizer_step(OptimizerKind kind, double lr, Vec& params, const Vec& grad, AdamState& state) {
  if (kind == OptimizerKind::Sgd) {
    params -= lr * grad;
    return;
  }
  constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  if (state.m.size() != params.size()) {
    state.m = Vec::Zero(params.size());
    state.v = Vec::Zero(params.size());
    state.t = 0;
  }
  ++state.t;
  state.m = beta1 * state.m + (1.0 - beta1) * grad;
  state.v = beta2 * state.v + (1.0 - beta2) * grad.cwiseAbs2();
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(state.t));
  params.array() -= lr * (state.m.array() / c1) / ((state.v.array() / c2).sqrt() + eps);
}

CriticState CriticState::create(const MlpSpec& critic_spec, FlatParams actor_target, Rng& rng) {
  CriticState c;
  c.q1 = FlatParams::init(critic_spec, rng);
  c.q2 = FlatParams::init(critic_spec, rng);
  c.q1_target = c.q1;
  c.q2_target = c.q2;
  c.actor_target = std::move(actor_target);
  return c;
}

void soft_update(Vec& target, const Vec& live, double tau) {
  target = tau * live + (1.0 - tau) * target;
}

namespace {

Mat concat_rows(const Mat& top, const Mat& bottom) {
  Mat out(top.rows() + bottom.rows(), top.cols());
  out.topRows(top.rows()) = top;
  out.bottomRows(bottom.rows()) = bottom;
  return out;
}

}  // namespace

Vec td3_targets(const CriticState& critic, const Batch& batch, const Td3Hyper& hyper, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Mat next_action = mlp_forward(critic.actor_target, batch.next_states);
  for (Eigen::Index j = 0; j < next_action.cols(); ++j)
    for (Eigen::Index i = 0; i < next_action.rows(); ++i) {
      const double eps =
          std::clamp(hyper.policy_noise * normal(rng), -hyper.noise_clip, hyper.noise_clip);
      next_action(i, j) = std::clamp(next_action(i, j) + eps, -1.0, 1.0);
    }
  const Mat in = concat_rows(batch.next_states, next_action);
  const Mat q1 = mlp_forward(critic.q1_target, in);
  const Mat q2 = mlp_forward(critic.q2_target, in);
  const Vec q_min = q1.cwiseMin(q2).row(0).transpose();
  return batch.rewards.array() +
         hyper.gamma * (1.0 - batch.dones.array()) * q_min.array();
}

CriticLoss critic_loss(const FlatParams& q, const Batch& batch, const Vec& targets) {
  ForwardCache cache;
  const Mat out = mlp_forward(q, concat_rows(batch.states, batch.actions), &cache);
  const Vec err = out.row(0).transpose() - targets;
  const double n = static_cast<double>(batch.size());
  CriticLoss l;
  l.loss = err.squaredNorm() / n;
  l.mean_abs_error = err.cwiseAbs().mean();
  const Mat upstream = (2.0 / n) * err.transpose();
  l.grad = mlp_backward(q, cache, upstream).params;
  return l;
}

CriticStepInfo critic_train_on_batch(CriticState& critic, const Batch& batch,
                                     const Td3Hyper& hyper, Rng& rng) {
  const Vec y = td3_targets(critic, batch, hyper, rng);

  CriticStepInfo info;
  info.outcome = TrainOutcome::Trained;
  const CriticLoss l1 = critic_loss(critic.q1, batch, y);
  const CriticLoss l2 = critic_loss(critic.q2, batch, y);
  info.loss = l1.loss + l2.loss;
  info.mean_abs_td = l1.mean_abs_error;
  optimizer_step(hyper.optimizer, hyper.critic_lr, critic.q1.data, l1.grad, critic.q1_opt);
  optimizer_step(hyper.optimizer, hyper.critic_lr, critic.q2.data, l2.grad, critic.q2_opt);
  soft_update(critic.q1_target.data, critic.q1.data, hyper.tau);
  soft_update(critic.q2_target.data, critic.q2.data, hyper.tau);
  ++critic.train_step_count;
  return info;
}

CriticStepInfo critic_train_step(CriticState& critic, const ReplayBuffer& buffer,
                                 const Td3Hyper& hyper, Rng& rng) {
  if (buffer.size() < hyper.batch_size) return {};
  const Batch batch = buffer.sample(hyper.batch_size, rng);
  return critic_train_on_batch(critic, batch, hyper, rng);
}

void absorb_actor(CriticState& critic, const FlatParams& actor, std::uint64_t steps, double tau) {
  const double keep = std::pow(1.0 - tau, static_cast<double>(steps));
  critic.actor_target.data = keep * critic.actor_target.data + (1.0 - keep) * actor.data;
}

ActorObjective actor_objective(const FlatParams& actor, const FlatParams& q1, const Mat& states) {
  ForwardCache actor_cache;
  const Mat actions = mlp_forward(actor, states, &actor_cache);
  ForwardCache critic_cache;
  const Mat q = mlp_forward(q1, concat_rows(states, actions), &critic_cache);
  const double n = static_cast<double>(states.cols());

  ActorObjective obj;
  obj.value = q.sum() / n;
  const Mat dq = Mat::Constant(1, states.cols(), 1.0 / n);
  const Gradients critic_grad = mlp_backward(q1, critic_cache, dq);
  const Mat d_action = critic_grad.input.bottomRows(actions.rows());
  obj.grad = mlp_backward(actor, actor_cache, d_action).params;
  return obj;
}

FlatParams train_actor_on_states(FlatParams actor, const FlatParams& q1,
                                 std::span<const Mat> state_batches, double lr,
                                 OptimizerKind optimizer) {
  if (lr == 0.0) return actor;
  AdamState state;
  for (const Mat& states : state_batches) {
    const ActorObjective obj = actor_objective(actor, q1, states);
    // Ascent on J is descent on -J.
    optimizer_step(optimizer, lr, actor.data, -obj.grad, state);
  }
  return actor;
}

ActorTrainResult actor_train_step(FlatParams actor, const FlatParams& q1,
                                  const ReplayBuffer& buffer, const ActorTrainHyper& hyper,
                                  Rng& rng) {
  if (buffer.size() < hyper.batch_size) return {std::move(actor), true};
  std::vector<Mat> batches;
  batches.reserve(hyper.n_grad_steps);
  for (std::uint64_t k = 0; k < hyper.n_grad_steps; ++k)
    batches.push_back(buffer.sample_states(hyper.batch_size, rng));
  return {train_actor_on_states(std::move(actor), q1, batches, hyper.lr, hyper.optimizer), false};
}

}  // namespace aesrl
