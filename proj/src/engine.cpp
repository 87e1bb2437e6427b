#include "aesrl/engine.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <condition_variable>
#include <deque>
#include <limits>
#include <mutex>
#include <thread>

#include "aesrl/population_control.hpp"
#include "aesrl/replay_buffer.hpp"
#include "aesrl/run_log.hpp"
#include "aesrl/td3.hpp"

namespace aesrl {

double RunAccounting::idle_fraction() const {
  double total = 0.0;
  for (double x : idle) total += x;
  const double denom = static_cast<double>(workers) * makespan;
  return denom > 0.0 ? total / denom : 0.0;
}

namespace {

// Named random streams, see derive_seed.
enum Stream : std::uint64_t {
  kStreamInitActor = 1,
  kStreamSample = 2,
  kStreamRole = 3,
  kStreamEval = 4,
  kStreamLatency = 5,
  kStreamCritic = 6,
  kStreamActorBatches = 7,
  kStreamRefresh = 8,
  kStreamInitCritic = 9,
  kStreamTest = 10,
};

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

struct Job {
  int worker = -1;
  std::uint64_t dispatch = 0;
  Individual ind;
  std::optional<TrainActorRequest> train;
  Vec critic_q1;
  EvaluateRequest eval;
  double dispatch_time = 0.0;
};

struct Completion {
  Job job;
  double finish_time = 0.0;
  bool ok = true;
  bool fatal = false;  // the channel itself is gone
  std::string error;
  EvaluateResult result;
  std::uint64_t grad_steps = 0;
  bool trained = false;
};

void execute(Channel& ch, Completion& c, std::chrono::milliseconds timeout) {
  Job& j = c.job;
  ch.request_reply(SetActorWeights{j.ind.z}, timeout);
  if (j.train) {
    ch.request_reply(SetCriticWeights{j.critic_q1}, timeout);
    auto reply = ch.request_reply(*j.train, timeout);
    if (!reply || !std::holds_alternative<SetActorWeights>(*reply))
      throw ProtocolError("unexpected reply to TrainActorRequest");
    j.ind.z = std::get<SetActorWeights>(std::move(*reply)).params;
    c.grad_steps = j.train->state_batches.size();
    c.trained = true;
  }
  auto reply = ch.request_reply(j.eval, timeout);
  if (!reply || !std::holds_alternative<EvaluateResult>(*reply))
    throw ProtocolError("unexpected reply to EvaluateRequest");
  c.result = std::get<EvaluateResult>(std::move(*reply));
  if (!std::isfinite(c.result.fitness)) throw EnvironmentError("non-finite fitness");
}

void run_job(Channel& ch, Completion& c, std::chrono::milliseconds timeout) {
  try {
    execute(ch, c, timeout);
  } catch (const TransportError& e) {
    c.ok = false;
    c.fatal = true;
    c.error = e.what();
  } catch (const std::exception& e) {
    c.ok = false;
    c.error = e.what();
  }
}

void shutdown_all(std::vector<std::unique_ptr<Channel>>& channels) {
  for (auto& ch : channels) {
    try {
      ch->request_reply(Shutdown{}, std::chrono::milliseconds(1000));
    } catch (const std::exception&) {
    }
    ch->close();
  }
}

class Executor {
 public:
  virtual ~Executor() = default;
  virtual void submit(Job job) = 0;
  /// Blocks for the next completion. Requires in_flight() > 0.
  virtual Completion wait() = 0;
  /// A completion is available without advancing the clock.
  virtual bool ready() const = 0;
  virtual std::size_t in_flight() const = 0;
  virtual double now() const = 0;
  /// Stops everything; work still in flight is abandoned.
  virtual void finish(RunAccounting& acc) = 0;
};

/// Runs each job on submit and releases its result at dispatch time plus the
/// modelled latency. Completions come out ordered by (time, worker).
class SimulatedExecutor final : public Executor {
 public:
  SimulatedExecutor(std::vector<std::unique_ptr<Channel>> channels, LatencyModel latency,
                    std::uint64_t seed, std::chrono::milliseconds timeout)
      : channels_(std::move(channels)),
        latency_(latency),
        rng_(seed),
        timeout_(timeout),
        slots_(channels_.size()),
        busy_(channels_.size(), 0.0) {}

  void submit(Job job) override {
    const auto w = static_cast<std::size_t>(job.worker);
    Completion c;
    c.job = std::move(job);
    c.job.dispatch_time = now_;
    run_job(*channels_[w], c, timeout_);
    const double dt = c.ok ? latency_.latency(c.result.steps, c.grad_steps, rng_) : 0.0;
    c.finish_time = now_ + dt;
    queue_.push(c.finish_time, c.job.worker);
    slots_[w] = std::move(c);
  }

  Completion wait() override {
    const auto e = queue_.pop();
    now_ = e.time;
    const auto w = static_cast<std::size_t>(e.worker);
    Completion c = std::move(*slots_[w]);
    slots_[w].reset();
    busy_[w] += c.finish_time - c.job.dispatch_time;
    return c;
  }

  bool ready() const override { return !queue_.empty() && queue_.top().time <= now_; }
  std::size_t in_flight() const override { return queue_.size(); }
  double now() const override { return now_; }

  void finish(RunAccounting& acc) override {
    for (std::size_t w = 0; w < slots_.size(); ++w) {
      if (!slots_[w]) continue;
      const double part = now_ - slots_[w]->job.dispatch_time;
      busy_[w] += part;
      acc.abandoned += part;
      slots_[w].reset();
    }
    acc.makespan = now_;
    acc.busy = busy_;
    shutdown_all(channels_);
  }

 private:
  std::vector<std::unique_ptr<Channel>> channels_;
  LatencyModel latency_;
  Rng rng_;
  std::chrono::milliseconds timeout_;
  std::vector<std::optional<Completion>> slots_;
  std::vector<double> busy_;
  FinishQueue queue_;
  double now_ = 0.0;
};

/// One thread per worker; the clock is wall time since construction.
class ThreadedExecutor final : public Executor {
 public:
  ThreadedExecutor(std::vector<std::unique_ptr<Channel>> channels,
                   std::chrono::milliseconds timeout)
      : channels_(std::move(channels)),
        timeout_(timeout),
        start_(std::chrono::steady_clock::now()),
        mailboxes_(channels_.size()),
        busy_(channels_.size(), 0.0),
        dispatched_at_(channels_.size(), -1.0) {
    for (std::size_t w = 0; w < channels_.size(); ++w)
      threads_.emplace_back([this, w] { worker_loop(w); });
  }

  ~ThreadedExecutor() override { stop_threads(); }

  void submit(Job job) override {
    const auto w = static_cast<std::size_t>(job.worker);
    job.dispatch_time = now();
    {
      std::lock_guard lock(mutex_);
      dispatched_at_[w] = job.dispatch_time;
      mailboxes_[w] = std::move(job);
      ++in_flight_;
    }
    cv_.notify_all();
  }

  Completion wait() override {
    std::unique_lock lock(mutex_);
    done_cv_.wait(lock, [&] { return !results_.empty(); });
    Completion c = std::move(results_.front());
    results_.pop_front();
    --in_flight_;
    const auto w = static_cast<std::size_t>(c.job.worker);
    busy_[w] += c.finish_time - c.job.dispatch_time;
    dispatched_at_[w] = -1.0;
    return c;
  }

  bool ready() const override {
    std::lock_guard lock(mutex_);
    return !results_.empty();
  }

  std::size_t in_flight() const override {
    std::lock_guard lock(mutex_);
    return in_flight_;
  }

  double now() const override {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

  void finish(RunAccounting& acc) override {
    const double end = now();
    {
      std::lock_guard lock(mutex_);
      for (std::size_t w = 0; w < busy_.size(); ++w) {
        if (dispatched_at_[w] < 0.0) continue;
        const double part = end - dispatched_at_[w];
        busy_[w] += part;
        acc.abandoned += part;
      }
    }
    stop_threads();
    acc.makespan = end;
    acc.busy = busy_;
    shutdown_all(channels_);
  }

 private:
  void worker_loop(std::size_t w) {
    for (;;) {
      Completion c;
      {
        std::unique_lock lock(mutex_);
        cv_.wait(lock, [&] { return stopping_ || mailboxes_[w].has_value(); });
        if (stopping_) return;
        c.job = std::move(*mailboxes_[w]);
        mailboxes_[w].reset();
      }
      run_job(*channels_[w], c, timeout_);
      c.finish_time = now();
      {
        std::lock_guard lock(mutex_);
        results_.push_back(std::move(c));
      }
      done_cv_.notify_all();
    }
  }

  void stop_threads() {
    {
      std::lock_guard lock(mutex_);
      stopping_ = true;
    }
    cv_.notify_all();
    for (auto& t : threads_)
      if (t.joinable()) t.join();
  }

  std::vector<std::unique_ptr<Channel>> channels_;
  std::chrono::milliseconds timeout_;
  std::chrono::steady_clock::time_point start_;
  mutable std::mutex mutex_;
  std::condition_variable cv_, done_cv_;
  std::vector<std::optional<Job>> mailboxes_;
  std::deque<Completion> results_;
  std::vector<double> busy_;
  std::vector<double> dispatched_at_;
  std::size_t in_flight_ = 0;
  bool stopping_ = false;
  std::vector<std::thread> threads_;
};

/// Trains the shared critic at `ratio` steps per environment step, either
/// inline when steps arrive or on its own thread.
class CriticDriver {
 public:
  CriticDriver(CriticState state, const ReplayBuffer& buffer, Td3Hyper hyper, double ratio,
               std::uint64_t seed, bool threaded)
      : state_(std::move(state)), buffer_(buffer), hyper_(hyper), ratio_(ratio), rng_(seed) {
    if (threaded) thread_ = std::thread([this] { loop(); });
  }

  ~CriticDriver() { stop(); }

  void on_steps(std::uint64_t steps) {
    std::unique_lock lock(mutex_);
    owed_ += ratio_ * static_cast<double>(steps);
    if (thread_.joinable()) {
      lock.unlock();
      cv_.notify_all();
      return;
    }
    while (owed_ >= 1.0) {
      if (!train_one()) {
        owed_ = 0.0;
        break;
      }
      owed_ -= 1.0;
    }
  }

  Vec q1_snapshot() const {
    std::lock_guard lock(mutex_);
    return state_.q1.data;
  }

  void absorb(const FlatParams& actor, std::uint64_t steps) {
    std::lock_guard lock(mutex_);
    absorb_actor(state_, actor, steps, hyper_.tau);
  }

  std::uint64_t steps_done() const {
    std::lock_guard lock(mutex_);
    return done_;
  }

  void stop() {
    {
      std::lock_guard lock(mutex_);
      stopping_ = true;
    }
    cv_.notify_all();
    if (thread_.joinable()) thread_.join();
  }

 private:
  // Caller holds mutex_.
  bool train_one() {
    if (critic_train_step(state_, buffer_, hyper_, rng_).outcome != TrainOutcome::Trained)
      return false;
    ++done_;
    return true;
  }

  void loop() {
    std::unique_lock lock(mutex_);
    while (!stopping_) {
      if (owed_ >= 1.0 && train_one()) {
        owed_ -= 1.0;
        continue;
      }
      if (owed_ >= 1.0) owed_ = 0.0;  // underfull: the warm-up steps are not owed later
      cv_.wait_for(lock, std::chrono::milliseconds(5));
    }
  }

  CriticState state_;
  const ReplayBuffer& buffer_;
  Td3Hyper hyper_;
  double ratio_;
  Rng rng_;
  mutable std::mutex mutex_;
  std::condition_variable cv_;
  double owed_ = 0.0;
  std::uint64_t done_ = 0;
  bool stopping_ = false;
  std::thread thread_;
};

class Engine {
 public:
  Engine(const ExperimentConfig& cfg, const EngineOptions& opt) : cfg_(cfg), opt_(opt) {
    cfg_.validate();
    spec_ = cfg_.worker_spec();
    serial_ = cfg_.mode == ScheduleMode::SerialSync;
    workers_ = serial_ ? 1 : cfg_.workers;
    acc_.mode = cfg_.mode;
    acc_.workers = workers_;
    acc_.best_fitness = -std::numeric_limits<double>::infinity();
    counter_.k_rl = cfg_.k_rl;
    counter_.p_desired = cfg_.p_desired;
    counter_.rl_start_step = cfg_.rl_start_step;
    rng_sample_.seed(derive_seed(cfg_.seed, kStreamSample));
    rng_role_.seed(derive_seed(cfg_.seed, kStreamRole));
    rng_batches_.seed(derive_seed(cfg_.seed, kStreamActorBatches));
    last_episode_steps_ = cfg_.task == WorkerSpec::Task::Pendulum ? cfg_.pendulum.max_steps
                                                                   : cfg_.point_mass.max_steps;
    idle_.assign(static_cast<std::size_t>(workers_), true);
    alive_.assign(static_cast<std::size_t>(workers_), true);
    failures_in_row_.assign(static_cast<std::size_t>(workers_), 0);
  }

  RunResult run() {
    PopulationDistribution dist0 = initial_distribution(cfg_);
    double r_used = cfg_.mean.r;
    if (cfg_.max_steps == 0) {
      acc_.busy.assign(static_cast<std::size_t>(workers_), 0.0);
      acc_.idle.assign(static_cast<std::size_t>(workers_), 0.0);
      acc_.best_fitness = kNaN;
      acc_.final_fitness_mu = kNaN;
      return {acc_, dist0, r_used};
    }
    start(std::move(dist0));
    if (cfg_.mode == ScheduleMode::ParallelAsync)
      async_loop();
    else
      sync_loop();
    return finish();
  }

 private:
  bool budget_spent() const { return stop_ || acc_.total_steps >= cfg_.max_steps; }
  double now() const { return exec_->now(); }

  void log(const nlohmann::json& j) {
    if (opt_.log) opt_.log->event(j);
  }

  void start(PopulationDistribution dist0) {
    std::vector<std::unique_ptr<Channel>> channels;
    for (int w = 0; w < workers_; ++w)
      channels.push_back(opt_.channels ? opt_.channels(w)
                                       : std::make_unique<InProcessChannel>(spec_));
    if (cfg_.clock == ClockMode::Simulated)
      exec_ = std::make_unique<SimulatedExecutor>(std::move(channels), cfg_.latency,
                                                  derive_seed(cfg_.seed, kStreamLatency),
                                                  opt_.request_timeout);
    else
      exec_ = std::make_unique<ThreadedExecutor>(std::move(channels), opt_.request_timeout);
    local_ = std::make_unique<InProcessChannel>(spec_);

    if (cfg_.rl_enabled) {
      buffer_ = std::make_unique<ReplayBuffer>(cfg_.replay_capacity, cfg_.state_dim(),
                                               cfg_.action_dim());
      Rng init(derive_seed(cfg_.seed, kStreamInitCritic));
      CriticState state =
          CriticState::create(cfg_.critic_spec(), FlatParams{dist0.mu, cfg_.actor_spec()}, init);
      critic_ = std::make_unique<CriticDriver>(std::move(state), *buffer_, cfg_.td3,
                                               cfg_.critic_ratio,
                                               derive_seed(cfg_.seed, kStreamCritic),
                                               cfg_.clock == ClockMode::Real);
    }

    // f(mu_0) fixes the scale for `mean.r = auto` and seeds the cache.
    const auto f0 = evaluate_mean(dist0.mu);
    MeanRuleConfig mean = cfg_.mean;
    if (cfg_.r_auto) {
      mean.r = std::max(std::abs(f0.value_or(0.0)) / 6.0, 1e-12);
      log({{"event", "calibration"}, {"r", mean.r}});
    }
    r_used_ = mean.r;
    owner_.emplace(std::move(dist0), mean, cfg_.variance, cfg_.population,
                   DistributionOwner::RefreshPolicy{
                       cfg_.refresh_cumulative_p,
                       cfg_.refresh_every ? cfg_.refresh_every : cfg_.population});
    if (f0) record_refresh(*f0);
    maybe_test();
  }

  bool testing() const { return cfg_.episodic() && cfg_.test_every > 0; }

  void maybe_test() {
    if (!testing() || acc_.total_steps < next_test_) return;
    next_test_ = (acc_.total_steps / cfg_.test_every + 1) * cfg_.test_every;
    run_test();
  }

  void run_test() {
    test_return_ = test_return(cfg_, owner_->distribution().mu);
    ++acc_.tests;
    log({{"event", "test"},
         {"event_time", now()},
         {"total_steps", acc_.total_steps},
         {"test_return", test_return_}});
    check_target(test_return_);
  }

  /// Evaluates mu on the master's own worker. Counts toward total_steps but
  /// takes no time on the worker clock.
  std::optional<double> evaluate_mean(const Vec& mu) {
    try {
      local_->request_reply(SetActorWeights{mu}, opt_.request_timeout);
      EvaluateRequest req{0, derive_seed(cfg_.seed, kStreamRefresh, acc_.refreshes), 0.0f,
                          cfg_.rl_enabled};
      auto reply = local_->request_reply(req, opt_.request_timeout);
      auto& res = std::get<EvaluateResult>(*reply);
      if (!std::isfinite(res.fitness)) throw EnvironmentError("non-finite fitness");
      ++acc_.refreshes;
      add_steps(res.steps, res.transitions);
      return static_cast<double>(res.fitness);
    } catch (const std::exception& e) {
      ++acc_.failures;
      log({{"event", "failure"},
           {"worker_id", nullptr},
           {"reason", std::string("refresh: ") + e.what()},
           {"event_time", now()},
           {"total_steps", acc_.total_steps}});
      return std::nullopt;
    }
  }

  void record_refresh(double f) {
    owner_->set_fitness_mu(f);
    fitness_mu_ = f;
    refreshed_hash_ = mu_hash(owner_->distribution().mu);
    log({{"event", "refresh"},
         {"event_time", now()},
         {"total_steps", acc_.total_steps},
         {"fitness_mu", f}});
    if (!testing()) check_target(f);
  }

  void check_target(double f) {
    if (cfg_.target_fitness && f >= *cfg_.target_fitness && !acc_.steps_to_target) {
      acc_.steps_to_target = acc_.total_steps;
      stop_ = true;
    }
  }

  void refresh() {
    const Vec& mu = owner_->distribution().mu;
    // Deterministic objectives need no second look at an unchanged mean.
    if (!cfg_.episodic() && mu_hash(mu) == refreshed_hash_) {
      owner_->set_fitness_mu(owner_->distribution().fitness_mu);
      return;
    }
    if (auto f = evaluate_mean(mu)) record_refresh(*f);
  }

  void add_steps(std::uint64_t steps, const std::vector<Transition>& transitions) {
    acc_.total_steps += steps;
    if (buffer_) {
      buffer_->append(transitions);
      critic_->on_steps(steps);
    }
  }

  double monitored_mean_fitness() const {
    if (!cfg_.episodic()) return synthetic_fitness(cfg_.objective, owner_->distribution().mu);
    return testing() ? test_return_ : fitness_mu_;
  }

  void push_curve_point() {
    acc_.curve.push_back(
        {acc_.total_steps, now(), acc_.best_fitness, monitored_mean_fitness()});
  }

  Job make_job() {
    Job j;
    j.dispatch = dispatches_++;
    j.ind = sample_individual(owner_->distribution(), rng_sample_);
    quantize_f32(j.ind.z);
    double p_rl = 0.0;
    if (cfg_.rl_enabled) {
      p_rl = compute_p_rl(counter_);
      std::uniform_real_distribution<double> u(0.0, 1.0);
      j.ind.role = assign_role(counter_, acc_.total_steps, u(rng_role_));
    }
    log({{"event", "assign"},
         {"dispatch", j.dispatch},
         {"event_time", now()},
         {"total_steps", acc_.total_steps},
         {"role", to_string(j.ind.role)},
         {"p_rl", p_rl},
         {"n_rl", counter_.n_rl},
         {"n_es", counter_.n_es}});
    if (j.ind.role == Role::RL && buffer_->size() >= cfg_.actor_batch) {
      const std::uint64_t n = cfg_.n_grad_steps ? cfg_.n_grad_steps : last_episode_steps_;
      TrainActorRequest t;
      t.lr = static_cast<float>(cfg_.actor_lr);
      t.optimizer = cfg_.actor_optimizer;
      t.state_batches.reserve(n);
      for (std::uint64_t k = 0; k < n; ++k)
        t.state_batches.push_back(buffer_->sample_states(cfg_.actor_batch, rng_batches_));
      j.train = std::move(t);
      j.critic_q1 = critic_->q1_snapshot();
    }
    j.eval = EvaluateRequest{0, derive_seed(cfg_.seed, kStreamEval, j.dispatch),
                             static_cast<float>(cfg_.a_noise), cfg_.rl_enabled};
    return j;
  }

  void dispatch(int w, Job job) {
    job.worker = w;
    idle_[static_cast<std::size_t>(w)] = false;
    exec_->submit(std::move(job));
  }

  /// Bookkeeping shared by both loops. Returns the evaluated individual or
  /// nothing when the evaluation failed.
  std::optional<Individual> absorb_completion(Completion& c) {
    const auto w = static_cast<std::size_t>(c.job.worker);
    idle_[w] = true;
    if (!c.ok) {
      on_failure(c);
      return std::nullopt;
    }
    failures_in_row_[w] = 0;
    Individual ind = std::move(c.job.ind);
    ind.fitness = static_cast<double>(c.result.fitness);
    ind.steps = c.result.steps;
    ++acc_.evaluations;
    (ind.role == Role::RL ? acc_.rl_individuals : acc_.es_individuals) += 1;
    if (cfg_.episodic()) last_episode_steps_ = std::max<std::uint64_t>(ind.steps, 1);
    if (c.trained) critic_->absorb(FlatParams{ind.z, cfg_.actor_spec()}, c.grad_steps);
    add_steps(ind.steps, c.result.transitions);
    acc_.best_fitness = std::max(acc_.best_fitness, ind.fitness);
    return ind;
  }

  void on_failure(const Completion& c) {
    const auto w = static_cast<std::size_t>(c.job.worker);
    ++acc_.failures;
    const bool retire = c.fatal || ++failures_in_row_[w] >= opt_.max_consecutive_failures;
    if (retire) alive_[w] = false;
    log({{"event", "failure"},
         {"worker_id", c.job.worker},
         {"reason", c.error},
         {"retired", retire},
         {"event_time", now()},
         {"total_steps", acc_.total_steps}});
    if (std::none_of(alive_.begin(), alive_.end(), [](bool a) { return a; }))
      throw TransportError("every worker has failed; last error: " + c.error);
  }

  std::uint64_t record_individual(const Vec& z) {
    return opt_.log ? opt_.log->individual(z) : acc_.evaluations - 1;
  }

  void async_loop() {
    while (true) {
      for (int w = 0; w < workers_ && !budget_spent(); ++w) {
        const auto i = static_cast<std::size_t>(w);
        if (alive_[i] && idle_[i]) dispatch(w, make_job());
      }
      if (exec_->in_flight() == 0) break;
      complete_async(exec_->wait());
      while (!budget_spent() && exec_->ready()) complete_async(exec_->wait());
      if (budget_spent()) break;
    }
  }

  void complete_async(Completion c) {
    auto ind = absorb_completion(c);
    if (!ind) return;
    const std::uint64_t k = record_individual(ind->z);
    const UpdateRecord rec = owner_->update(*ind);
    ++acc_.updates;
    if (rec.degenerate) ++acc_.degenerate_updates;
    (ind->role == Role::RL ? acc_.rl_p_sum : acc_.es_p_sum) += rec.p;
    const std::string hash = mu_hash(owner_->distribution().mu);
    acc_.mu_hashes.push_back(hash);
    if (cfg_.mean.rule == MeanRule::FullMove && rec.p == 1.0) {
      fitness_mu_ = ind->fitness;
      refreshed_hash_ = hash;
      if (!testing()) check_target(fitness_mu_);
    }
    log({{"event", "update"},
         {"update", acc_.updates},
         {"individual", k},
         {"event_time", now()},
         {"total_steps", acc_.total_steps},
         {"worker_id", c.job.worker},
         {"role", to_string(ind->role)},
         {"fitness", ind->fitness},
         {"steps", ind->steps},
         {"trained", c.trained},
         {"p", rec.p},
         {"n", rec.n ? nlohmann::json(*rec.n) : nlohmann::json(nullptr)},
         {"degenerate", rec.degenerate},
         {"sigma2_mean", rec.sigma2_mean},
         {"mode", to_string(cfg_.mode)},
         {"mu_hash", hash}});
    if (owner_->refresh_due()) refresh();
    maybe_test();
    push_curve_point();
  }

  void sync_loop() {
    const std::size_t population = cfg_.population;
    while (!budget_spent()) {
      std::deque<Job> pending;
      for (std::size_t i = 0; i < population; ++i) pending.push_back(make_job());
      std::vector<Individual> members;
      std::uint64_t first = std::numeric_limits<std::uint64_t>::max();
      while (!pending.empty() || exec_->in_flight() > 0) {
        for (int w = 0; w < workers_ && !pending.empty(); ++w) {
          const auto i = static_cast<std::size_t>(w);
          if (!alive_[i] || !idle_[i]) continue;
          dispatch(w, std::move(pending.front()));
          pending.pop_front();
        }
        if (exec_->in_flight() == 0) break;
        Completion c = exec_->wait();
        auto ind = absorb_completion(c);
        if (!ind) continue;
        const std::uint64_t k = record_individual(ind->z);
        first = std::min(first, k);
        log({{"event", "eval"},
             {"individual", k},
             {"generation", acc_.generations},
             {"event_time", now()},
             {"total_steps", acc_.total_steps},
             {"worker_id", c.job.worker},
             {"role", to_string(ind->role)},
             {"fitness", ind->fitness},
             {"steps", ind->steps},
             {"trained", c.trained},
             {"p", nullptr},
             {"n", nullptr},
             {"mode", to_string(cfg_.mode)}});
        members.push_back(std::move(*ind));
      }
      if (members.empty()) continue;
      owner_->update_generation(members);
      ++acc_.updates;
      const std::string hash = mu_hash(owner_->distribution().mu);
      acc_.mu_hashes.push_back(hash);
      log({{"event", "generation"},
           {"generation", acc_.generations},
           {"first", first},
           {"count", members.size()},
           {"event_time", now()},
           {"total_steps", acc_.total_steps},
           {"sigma2_mean", owner_->distribution().sigma2.mean()},
           {"mode", to_string(cfg_.mode)},
           {"mu_hash", hash}});
      ++acc_.generations;
      if (cfg_.episodic() && cfg_.target_fitness && !testing()) refresh_sync();
      maybe_test();
      push_curve_point();
    }
  }

  void refresh_sync() {
    if (auto f = evaluate_mean(owner_->distribution().mu)) record_refresh(*f);
  }

  RunResult finish() {
    exec_->finish(acc_);
    if (testing() && !acc_.steps_to_target) run_test();
    if (critic_) {
      critic_->stop();
      acc_.critic_steps = critic_->steps_done();
    }
    acc_.idle.resize(acc_.busy.size());
    for (std::size_t w = 0; w < acc_.busy.size(); ++w)
      acc_.idle[w] = std::max(0.0, acc_.makespan - acc_.busy[w]);
    acc_.final_fitness_mu = monitored_mean_fitness();
    if (!std::isfinite(acc_.best_fitness)) acc_.best_fitness = kNaN;
    log({{"event", "end"},
         {"total_steps", acc_.total_steps},
         {"makespan", acc_.makespan},
         {"updates", acc_.updates},
         {"evaluations", acc_.evaluations},
         {"refreshes", acc_.refreshes},
         {"failures", acc_.failures},
         {"mu_hash", mu_hash(owner_->distribution().mu)}});
    return {acc_, owner_->distribution(), r_used_};
  }

  ExperimentConfig cfg_;
  EngineOptions opt_;
  WorkerSpec spec_;
  bool serial_ = false;
  int workers_ = 1;
  RunAccounting acc_;
  RoleCounter counter_;
  Rng rng_sample_, rng_role_, rng_batches_;
  std::uint64_t last_episode_steps_ = 1;
  std::uint64_t dispatches_ = 0;
  std::vector<bool> idle_, alive_;
  std::vector<int> failures_in_row_;
  std::unique_ptr<Executor> exec_;
  std::unique_ptr<InProcessChannel> local_;
  std::unique_ptr<ReplayBuffer> buffer_;
  std::unique_ptr<CriticDriver> critic_;
  std::optional<DistributionOwner> owner_;
  double fitness_mu_ = kNaN;
  double test_return_ = kNaN;
  std::uint64_t next_test_ = 0;
  double r_used_ = 0.0;
  std::string refreshed_hash_;
  bool stop_ = false;
};

}  // namespace

PopulationDistribution initial_distribution(const ExperimentConfig& cfg) {
  Vec mu0;
  if (cfg.episodic()) {
    Rng rng(derive_seed(cfg.seed, kStreamInitActor));
    mu0 = FlatParams::init(cfg.actor_spec(), rng).data;
  } else {
    mu0 = Vec::Constant(static_cast<Eigen::Index>(cfg.dim), cfg.mu_init);
  }
  quantize_f32(mu0);
  return PopulationDistribution::create(std::move(mu0), cfg.sigma2_init, cfg.epsilon);
}

double test_return(const ExperimentConfig& cfg, const Vec& actor) {
  WorkerService worker(cfg.worker_spec());
  worker.handle(SetActorWeights{actor});
  double sum = 0.0;
  for (std::size_t k = 0; k < cfg.test_episodes; ++k) {
    const auto reply =
        worker.handle(EvaluateRequest{k + 1, derive_seed(cfg.seed, kStreamTest, k), 0.0f, false});
    sum += static_cast<double>(std::get<EvaluateResult>(*reply).fitness);
  }
  return sum / static_cast<double>(cfg.test_episodes);
}

std::string mu_hash(const Vec& mu) {
  return fnv1a_hex(std::string_view(reinterpret_cast<const char*>(mu.data()),
                                    static_cast<std::size_t>(mu.size()) * sizeof(double)));
}

RunResult run_async(const ExperimentConfig& cfg, const EngineOptions& options) {
  if (cfg.mode != ScheduleMode::ParallelAsync)
    throw ConfigError("run.mode: run_async needs parallel-async");
  return Engine(cfg, options).run();
}

RunResult run_sync(const ExperimentConfig& cfg, const EngineOptions& options) {
  if (cfg.mode == ScheduleMode::ParallelAsync)
    throw ConfigError("run.mode: run_sync needs serial-sync or parallel-sync");
  return Engine(cfg, options).run();
}

RunResult run_experiment(const ExperimentConfig& cfg, const EngineOptions& options) {
  return Engine(cfg, options).run();
}

}  // namespace aesrl
