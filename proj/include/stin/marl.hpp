#ifndef STIN_MARL_HPP_
#define STIN_MARL_HPP_

// Centralized training with decentralized execution. Agents share one
// recurrent Q network; the learner trains it through a VDN sum, a QMIX
// monotonic mixer, or independently per agent (IQL).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <limits>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "stin/env.hpp"
#include "stin/error.hpp"
#include "stin/mixer.hpp"
#include "stin/neural.hpp"

namespace stin {

// Seed derivation so that every (seed, stream, index) gets its own RNG.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream,
                                 std::uint64_t index = 0) {
  return splitmix64(splitmix64(splitmix64(seed) ^ stream) + index);
}

enum SeedStream : std::uint64_t {
  kInitStream = 1,
  kTrainEnvStream = 2,
  kExploreStream = 3,
  kReplayStream = 4,
  kEvalEnvStream = 5,
  kEvalPolicyStream = 6,
};

struct TrainerConfig {
  std::size_t episodes = 1000;
  std::size_t batch_size = 64;
  std::size_t buffer_capacity = 5000;
  double epsilon_start = 1.0;
  double epsilon_end = 0.05;
  std::size_t epsilon_anneal_episodes = 500;
  double tau = 0.005;
  double learning_rate = 1e-4;
  double rms_decay = 0.99;
  double rms_epsilon = 1e-5;
  double grad_clip = 10.0;
  std::size_t hidden_size = 64;
  std::size_t mixer_embed = 32;
  std::size_t updates_per_episode = 1;
  std::uint64_t seed = 0;
  // When set, every training episode replays this one environment instance.
  std::optional<std::uint64_t> env_seed;
  // Written before a divergence error is raised.
  std::string divergence_checkpoint;

  void check() const {
    auto fail = [](const std::string& m) { throw RangeError(m); };
    if (batch_size < 1) fail("batch_size must be >= 1");
    if (buffer_capacity < batch_size) fail("batch_size exceeds buffer_capacity");
    if (!(epsilon_start >= 0.0 && epsilon_start <= 1.0)) {
      fail("epsilon_start must lie in [0, 1]");
    }
    if (!(epsilon_end >= 0.0 && epsilon_end <= 1.0)) {
      fail("epsilon_end must lie in [0, 1]");
    }
    if (!(tau > 0.0 && tau <= 1.0)) fail("tau must lie in (0, 1]");
    if (!(learning_rate > 0.0)) fail("learning_rate must be > 0");
    if (!(rms_decay >= 0.0 && rms_decay < 1.0)) fail("rms_decay must lie in [0, 1)");
    if (!(rms_epsilon > 0.0)) fail("rms_epsilon must be > 0");
    if (!(grad_clip > 0.0)) fail("grad_clip must be > 0");
    if (hidden_size < 1) fail("hidden_size must be >= 1");
    if (mixer_embed < 1) fail("mixer_embed must be >= 1");
    if (updates_per_episode < 1) fail("updates_per_episode must be >= 1");
  }
};

inline TrainerConfig checked(TrainerConfig cfg) {
  cfg.check();
  return cfg;
}

// Linear from epsilon_start to epsilon_end over the anneal window.
inline double epsilon_at(const TrainerConfig& cfg, std::size_t episode) {
  if (cfg.epsilon_anneal_episodes == 0 ||
      episode >= cfg.epsilon_anneal_episodes) {
    return cfg.epsilon_end;
  }
  const double frac = static_cast<double>(episode) /
                      static_cast<double>(cfg.epsilon_anneal_episodes);
  return cfg.epsilon_start + frac * (cfg.epsilon_end - cfg.epsilon_start);
}

inline double td_target(double reward, double gamma, double next_q_tot_max,
                        bool terminal) {
  return terminal ? reward : reward + gamma * next_q_tot_max;
}

// (1/X) * sum (y - q)^2
inline double td_loss(std::span<const double> y, std::span<const double> q) {
  if (y.size() != q.size()) throw ShapeError("target/prediction size mismatch");
  if (y.empty()) throw ShapeError("empty batch");
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double d = y[i] - q[i];
    s += d * d;
  }
  return s / static_cast<double>(y.size());
}

// Masked argmax, lowest index on ties.
inline std::size_t greedy_action(std::span<const double> q,
                                 const std::vector<bool>& mask) {
  if (q.size() != mask.size()) throw ShapeError("q/mask length mismatch");
  std::size_t best = q.size();
  for (std::size_t a = 0; a < q.size(); ++a) {
    if (!mask[a]) continue;
    if (best == q.size() || q[a] > q[best]) best = a;
  }
  if (best == q.size()) throw DomainError("action mask has no valid entry");
  return best;
}

template <typename Rng>
std::size_t random_action(const std::vector<bool>& mask, Rng& rng) {
  std::vector<std::size_t> allowed;
  for (std::size_t a = 0; a < mask.size(); ++a) {
    if (mask[a]) allowed.push_back(a);
  }
  if (allowed.empty()) throw DomainError("action mask has no valid entry");
  std::uniform_int_distribution<std::size_t> pick(0, allowed.size() - 1);
  return allowed[pick(rng)];
}

template <typename Rng>
std::size_t epsilon_greedy(std::span<const double> q,
                           const std::vector<bool>& mask, double epsilon,
                           Rng& rng) {
  if (std::none_of(mask.begin(), mask.end(), [](bool b) { return b; })) {
    throw DomainError("action mask has no valid entry");
  }
  if (epsilon > 0.0) {
    std::uniform_real_distribution<double> coin(0.0, 1.0);
    if (coin(rng) < epsilon) return random_action(mask, rng);
  }
  return greedy_action(q, mask);
}

// Single-agent decision: advances the hidden state one step and picks an
// epsilon-greedy action.
template <typename Rng>
std::pair<std::size_t, Vector> select_action(
    const ParameterSet& params, const AgentNetwork& net,
    const Observation& observation, const Vector& hidden,
    const std::vector<bool>& mask, double epsilon, Rng& rng) {
  const Matrix x = Eigen::Map<const Matrix>(
      observation.data(), static_cast<Eigen::Index>(observation.size()), 1);
  auto [q, h] = agent_step(params, net, x, hidden);
  const std::size_t a = epsilon_greedy(
      std::span<const double>(q.data(), static_cast<std::size_t>(q.size())),
      mask, epsilon, rng);
  return {a, Vector(h.col(0))};
}

struct EpisodeRecord {
  std::uint64_t id = 0;
  std::vector<Matrix> observations;  // per step, obs x agents
  std::vector<Vector> states;        // per step, global state
  std::vector<std::vector<std::size_t>> actions;  // per step, per agent
  std::vector<std::vector<std::uint8_t>> masks;   // per step, agents x K
  std::vector<double> rewards;
  std::vector<double> l_sums;

  std::size_t length() const { return rewards.size(); }
};

// FIFO ring of whole episodes with uniform sampling without replacement.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
    if (capacity == 0) throw RangeError("replay capacity must be >= 1");
  }

  std::size_t size() const { return episodes_.size(); }
  std::size_t capacity() const { return capacity_; }
  const EpisodeRecord& operator[](std::size_t i) const { return episodes_[i]; }

  void store(EpisodeRecord episode) {
    if (episodes_.size() == capacity_) episodes_.pop_front();
    episodes_.push_back(std::move(episode));
  }

  template <typename Rng>
  std::vector<const EpisodeRecord*> sample(std::size_t batch, Rng& rng) const {
    if (batch > episodes_.size()) {
      throw RangeError("replay buffer holds fewer episodes than the batch");
    }
    std::vector<std::size_t> idx(episodes_.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::vector<const EpisodeRecord*> out;
    out.reserve(batch);
    for (std::size_t i = 0; i < batch; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, idx.size() - 1);
      std::swap(idx[i], idx[pick(rng)]);
      out.push_back(&episodes_[idx[i]]);
    }
    return out;
  }

 private:
  std::size_t capacity_;
  std::deque<EpisodeRecord> episodes_;
};

// Parameter layout for one scheme: the shared agent network plus, for QMIX,
// the mixer. Online and target copies share this layout.
struct NetworkLayout {
  ParameterSet params;
  AgentNetwork agent;
  std::optional<QmixMixer> mixer;
};

inline NetworkLayout make_layout(MixerKind kind, std::size_t obs_size,
                                 std::size_t actions, std::size_t agents,
                                 std::size_t state_size,
                                 const TrainerConfig& cfg) {
  NetworkLayout l;
  l.agent = add_agent_network(l.params, static_cast<Eigen::Index>(obs_size),
                              static_cast<Eigen::Index>(cfg.hidden_size),
                              static_cast<Eigen::Index>(actions));
  if (kind == MixerKind::kQmixMonotonic) {
    l.mixer = add_qmix_mixer(l.params, static_cast<Eigen::Index>(agents),
                             static_cast<Eigen::Index>(state_size),
                             static_cast<Eigen::Index>(cfg.mixer_embed));
  }
  return l;
}

inline NetworkLayout make_layout(MixerKind kind, const EnvConfig& env,
                                 const TrainerConfig& cfg) {
  Environment probe(env);
  return make_layout(kind, probe.observation_size(), probe.num_actions(),
                     probe.num_agents(), probe.state_size(), cfg);
}

// Per-column chosen values: out(i, b) = q(a_ib, b*agents + i).
inline Matrix gather_chosen(const Matrix& q, const std::vector<const EpisodeRecord*>& batch,
                            std::size_t t, Eigen::Index agents) {
  const auto n_batch = static_cast<Eigen::Index>(batch.size());
  Matrix out(agents, n_batch);
  for (Eigen::Index b = 0; b < n_batch; ++b) {
    const auto& acts = batch[b]->actions[t];
    for (Eigen::Index i = 0; i < agents; ++i) {
      out(i, b) = q(static_cast<Eigen::Index>(acts[i]), b * agents + i);
    }
  }
  return out;
}

inline Matrix masked_max(const Matrix& q,
                         const std::vector<const EpisodeRecord*>& batch,
                         std::size_t t, Eigen::Index agents) {
  const auto n_batch = static_cast<Eigen::Index>(batch.size());
  const Eigen::Index k = q.rows();
  Matrix out(agents, n_batch);
  for (Eigen::Index b = 0; b < n_batch; ++b) {
    const auto& mask = batch[b]->masks[t];
    for (Eigen::Index i = 0; i < agents; ++i) {
      double best = -std::numeric_limits<double>::infinity();
      for (Eigen::Index a = 0; a < k; ++a) {
        if (mask[static_cast<std::size_t>(i * k + a)]) {
          best = std::max(best, q(a, b * agents + i));
        }
      }
      out(i, b) = best;
    }
  }
  return out;
}

// Output-side gradients of the per-agent (IQL) loss: agent i's entry only
// depends on its own prediction and target.
inline Matrix iql_output_grad(const Matrix& chosen, const Matrix& y,
                              double scale) {
  return 2.0 * scale * (chosen - y);
}

// Output-side gradients of the VDN joint loss.
inline Matrix vdn_output_grad(const Matrix& chosen, const Matrix& y_tot,
                              double scale) {
  const Matrix dq_tot = 2.0 * scale * (vdn_mix(chosen) - y_tot);
  return vdn_backward(dq_tot, chosen.rows());
}

// Owns online/target parameters and performs one TD update per call.
class Learner {
 public:
  Learner(MixerKind kind, std::size_t obs_size, std::size_t actions,
          std::size_t agents, std::size_t state_size, double gamma,
          const TrainerConfig& cfg)
      : kind_(kind),
        cfg_(cfg),
        gamma_(gamma),
        agents_(static_cast<Eigen::Index>(agents)),
        online_(make_layout(kind, obs_size, actions, agents, state_size, cfg)),
        target_(online_) {
    std::mt19937_64 rng(derive_seed(cfg.seed, kInitStream));
    online_.params.init_uniform(rng);
    soft_update(target_.params, online_.params, 1.0);
    optimizer_ = RmsProp(online_.params, {cfg.learning_rate, cfg.rms_decay,
                                          cfg.rms_epsilon});
  }

  MixerKind kind() const { return kind_; }
  const NetworkLayout& online() const { return online_; }
  NetworkLayout& online() { return online_; }
  const NetworkLayout& target() const { return target_; }

  // Loss and gradients (into the online set) for a batch of episodes.
  double compute_gradients(const std::vector<const EpisodeRecord*>& batch) {
    if (batch.empty()) throw ShapeError("empty batch");
    const std::size_t steps = batch[0]->length();
    for (const auto* e : batch) {
      if (e->length() != steps) throw ShapeError("episodes differ in length");
    }
    const auto n_batch = static_cast<Eigen::Index>(batch.size());
    const Eigen::Index cols = n_batch * agents_;
    const auto obs = batch[0]->observations[0].rows();

    std::vector<Matrix> inputs(steps, Matrix(obs, cols));
    for (std::size_t t = 0; t < steps; ++t) {
      for (Eigen::Index b = 0; b < n_batch; ++b) {
        inputs[t].middleCols(b * agents_, agents_) = batch[b]->observations[t];
      }
    }

    online_.params.zero_grad();
    SequenceTape tape(online_.params, online_.agent);
    const std::vector<Matrix> q = tape.forward(inputs);

    // Target network bootstraps from its own unrolled hidden state.
    std::vector<Matrix> next_max(steps);
    {
      Matrix h = Matrix::Zero(target_.agent.hidden_size(), cols);
      for (std::size_t t = 0; t < steps; ++t) {
        auto [qt, hn] = agent_step(target_.params, target_.agent, inputs[t], h);
        h = std::move(hn);
        next_max[t] = masked_max(qt, batch, t, agents_);
      }
    }

    std::vector<Matrix> chosen(steps);
    for (std::size_t t = 0; t < steps; ++t) {
      chosen[t] = gather_chosen(q[t], batch, t, agents_);
    }

    std::vector<Matrix> dchosen(steps);
    double loss = 0.0;
    switch (kind_) {
      case MixerKind::kVdnSum:
        loss = vdn_loss(batch, chosen, next_max, dchosen);
        break;
      case MixerKind::kNoneIql:
        loss = iql_loss(batch, chosen, next_max, dchosen);
        break;
      case MixerKind::kQmixMonotonic:
        loss = qmix_loss(batch, chosen, next_max, dchosen);
        break;
    }

    std::vector<Matrix> dq(steps);
    for (std::size_t t = 0; t < steps; ++t) {
      dq[t] = Matrix::Zero(q[t].rows(), cols);
      for (Eigen::Index b = 0; b < n_batch; ++b) {
        const auto& acts = batch[b]->actions[t];
        for (Eigen::Index i = 0; i < agents_; ++i) {
          dq[t](static_cast<Eigen::Index>(acts[i]), b * agents_ + i) =
              dchosen[t](i, b);
        }
      }
    }
    tape.backward(dq);
    return loss;
  }

  // One optimizer step; returns the pre-update loss.
  double update(const std::vector<const EpisodeRecord*>& batch) {
    const double loss = compute_gradients(batch);
    if (!std::isfinite(loss)) throw DivergenceError("non-finite loss");
    clip_grad_norm(online_.params, cfg_.grad_clip);
    optimizer_.step(online_.params);
    soft_update(target_.params, online_.params, cfg_.tau);
    return loss;
  }

 private:
  double vdn_loss(const std::vector<const EpisodeRecord*>& batch,
                  const std::vector<Matrix>& chosen,
                  const std::vector<Matrix>& next_max,
                  std::vector<Matrix>& dchosen) const {
    const std::size_t steps = chosen.size();
    const auto n_batch = static_cast<Eigen::Index>(batch.size());
    const double scale = 1.0 / static_cast<double>(steps * batch.size());
    double loss = 0.0;
    for (std::size_t t = 0; t < steps; ++t) {
      const bool terminal = t + 1 == steps;
      Matrix y(1, n_batch);
      const Matrix next_tot = terminal ? Matrix::Zero(1, n_batch)
                                       : Matrix(vdn_mix(next_max[t + 1]));
      for (Eigen::Index b = 0; b < n_batch; ++b) {
        y(0, b) = td_target(batch[b]->rewards[t], gamma_, next_tot(0, b),
                            terminal);
      }
      loss += (vdn_mix(chosen[t]) - y).squaredNorm() * scale;
      dchosen[t] = vdn_output_grad(chosen[t], y, scale);
    }
    return loss;
  }

  double iql_loss(const std::vector<const EpisodeRecord*>& batch,
                  const std::vector<Matrix>& chosen,
                  const std::vector<Matrix>& next_max,
                  std::vector<Matrix>& dchosen) const {
    const std::size_t steps = chosen.size();
    const auto n_batch = static_cast<Eigen::Index>(batch.size());
    const double scale =
        1.0 / static_cast<double>(steps * batch.size() *
                                  static_cast<std::size_t>(agents_));
    double loss = 0.0;
    for (std::size_t t = 0; t < steps; ++t) {
      const bool terminal = t + 1 == steps;
      Matrix y(agents_, n_batch);
      for (Eigen::Index b = 0; b < n_batch; ++b) {
        for (Eigen::Index i = 0; i < agents_; ++i) {
          y(i, b) = td_target(batch[b]->rewards[t], gamma_,
                              terminal ? 0.0 : next_max[t + 1](i, b), terminal);
        }
      }
      loss += (chosen[t] - y).squaredNorm() * scale;
      dchosen[t] = iql_output_grad(chosen[t], y, scale);
    }
    return loss;
  }

  double qmix_loss(const std::vector<const EpisodeRecord*>& batch,
                   const std::vector<Matrix>& chosen,
                   const std::vector<Matrix>& next_max,
                   std::vector<Matrix>& dchosen) {
    const std::size_t steps = chosen.size();
    const auto n_batch = static_cast<Eigen::Index>(batch.size());
    const auto total = static_cast<Eigen::Index>(steps) * n_batch;
    const QmixMixer& mix = *online_.mixer;
    Matrix q_all(agents_, total);
    Matrix next_all(agents_, total);
    Matrix s_all(mix.state_size, total);
    Matrix s_next(mix.state_size, total);
    for (std::size_t t = 0; t < steps; ++t) {
      const bool terminal = t + 1 == steps;
      const auto off = static_cast<Eigen::Index>(t) * n_batch;
      q_all.middleCols(off, n_batch) = chosen[t];
      next_all.middleCols(off, n_batch) =
          terminal ? Matrix(Matrix::Zero(agents_, n_batch)) : next_max[t + 1];
      for (Eigen::Index b = 0; b < n_batch; ++b) {
        s_all.col(off + b) = batch[b]->states[t];
        s_next.col(off + b) = batch[b]->states[terminal ? t : t + 1];
      }
    }
    QmixCache cache;
    const Matrix q_tot = qmix_forward(online_.params, mix, q_all, s_all, &cache);
    const Matrix next_tot =
        qmix_forward(target_.params, *target_.mixer, next_all, s_next);
    Matrix y(1, total);
    for (std::size_t t = 0; t < steps; ++t) {
      const bool terminal = t + 1 == steps;
      for (Eigen::Index b = 0; b < n_batch; ++b) {
        const auto c = static_cast<Eigen::Index>(t) * n_batch + b;
        y(0, c) = td_target(batch[b]->rewards[t], gamma_, next_tot(0, c),
                            terminal);
      }
    }
    const double scale = 1.0 / static_cast<double>(total);
    const double loss = (q_tot - y).squaredNorm() * scale;
    const Matrix dq_tot = 2.0 * scale * (q_tot - y);
    const Matrix dq = qmix_backward(online_.params, mix, cache, dq_tot);
    for (std::size_t t = 0; t < steps; ++t) {
      dchosen[t] = dq.middleCols(static_cast<Eigen::Index>(t) * n_batch, n_batch);
    }
    return loss;
  }

  MixerKind kind_;
  TrainerConfig cfg_;
  double gamma_;
  Eigen::Index agents_;
  NetworkLayout online_;
  NetworkLayout target_;
  RmsProp optimizer_;
};

// Joint-action source for rollouts and evaluation.
class Policy {
 public:
  virtual ~Policy() = default;
  virtual void begin_episode(const Environment& env) { (void)env; }
  virtual JointAction act(const Environment& env,
                          const std::vector<Observation>& obs,
                          std::mt19937_64& rng) = 0;
};

// Shared recurrent Q network, epsilon-greedy over masked actions.
class NetworkPolicy : public Policy {
 public:
  NetworkPolicy(const ParameterSet& params, const AgentNetwork& net,
                double epsilon = 0.0)
      : params_(&params), net_(net), epsilon_(epsilon) {}

  void set_epsilon(double e) { epsilon_ = e; }

  void begin_episode(const Environment& env) override {
    if (static_cast<Eigen::Index>(env.observation_size()) != net_.input_size() ||
        static_cast<Eigen::Index>(env.num_actions()) != net_.num_actions()) {
      throw ShapeError("network does not match the environment");
    }
    hidden_ = Matrix::Zero(net_.hidden_size(),
                           static_cast<Eigen::Index>(env.num_agents()));
  }

  JointAction act(const Environment& env, const std::vector<Observation>& obs,
                  std::mt19937_64& rng) override {
    const auto n = static_cast<Eigen::Index>(obs.size());
    Matrix x(net_.input_size(), n);
    for (Eigen::Index i = 0; i < n; ++i) {
      x.col(i) = Eigen::Map<const Vector>(obs[i].data(), net_.input_size());
    }
    auto [q, h] = agent_step(*params_, net_, x, hidden_);
    hidden_ = std::move(h);
    JointAction a(obs.size());
    for (Eigen::Index i = 0; i < n; ++i) {
      a[i] = epsilon_greedy(
          std::span<const double>(q.col(i).data(),
                                  static_cast<std::size_t>(q.rows())),
          env.action_mask(i), epsilon_, rng);
    }
    return a;
  }

 private:
  const ParameterSet* params_;
  AgentNetwork net_;
  double epsilon_;
  Matrix hidden_;
};

// Each user picks a uniformly random unmasked target every slot.
class RandomPolicy : public Policy {
 public:
  JointAction act(const Environment& env, const std::vector<Observation>& obs,
                  std::mt19937_64& rng) override {
    JointAction a(obs.size());
    for (std::size_t i = 0; i < obs.size(); ++i) {
      a[i] = random_action(env.action_mask(i), rng);
    }
    return a;
  }
};

class LocalPolicy : public Policy {
 public:
  JointAction act(const Environment&, const std::vector<Observation>& obs,
                  std::mt19937_64&) override {
    return JointAction(obs.size(), kLocalTarget);
  }
};

// Replays a fixed assignment every slot.
class FixedPolicy : public Policy {
 public:
  explicit FixedPolicy(JointAction assignment)
      : assignment_(std::move(assignment)) {}
  JointAction act(const Environment&, const std::vector<Observation>&,
                  std::mt19937_64&) override {
    return assignment_;
  }

 private:
  JointAction assignment_;
};

struct EpisodeMetrics {
  std::size_t episode = 0;
  double ret = 0.0;         // discounted return
  double mean_delay = 0.0;  // mean L_sum per slot
  double loss = 0.0;        // last update loss, 0 before training starts
  double epsilon = 0.0;
};

struct Rollout {
  EpisodeRecord record;
  double ret = 0.0;
  double mean_delay = 0.0;
  std::vector<std::size_t> tier_counts;  // local, end-side, cloud
};

// Plays one full episode from an already reset environment.
inline Rollout play_episode(Environment& env, std::vector<Observation> obs,
                            Policy& policy, std::mt19937_64& rng) {
  Rollout out;
  out.tier_counts.assign(3, 0);
  const std::size_t n = env.num_agents();
  const std::size_t k = env.num_actions();
  const auto obs_size = static_cast<Eigen::Index>(env.observation_size());
  policy.begin_episode(env);
  bool done = false;
  while (!done) {
    Matrix o(obs_size, static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i) {
      o.col(static_cast<Eigen::Index>(i)) =
          Eigen::Map<const Vector>(obs[i].data(), obs_size);
    }
    const std::vector<double> g = env.global_state(obs);
    std::vector<std::uint8_t> mask(n * k);
    for (std::size_t i = 0; i < n; ++i) {
      const auto m = env.action_mask(i);
      for (std::size_t a = 0; a < k; ++a) mask[i * k + a] = m[a] ? 1 : 0;
    }
    const JointAction action = policy.act(env, obs, rng);
    StepResult r = env.step(action);
    for (std::size_t a : r.executed_actions) {
      const Tier tier = env.state().snapshot.tier(a);
      ++out.tier_counts[tier == Tier::kLocal ? 0 : tier == Tier::kEndSide ? 1 : 2];
    }
    out.record.observations.push_back(std::move(o));
    out.record.states.push_back(
        Eigen::Map<const Vector>(g.data(), static_cast<Eigen::Index>(g.size())));
    out.record.actions.push_back(action);
    out.record.masks.push_back(std::move(mask));
    out.record.rewards.push_back(r.reward);
    out.record.l_sums.push_back(r.l_sum);
    obs = std::move(r.observations);
    done = r.done;
  }
  out.ret = discounted_return(out.record.rewards, env.config().gamma);
  double s = 0.0;
  for (double v : out.record.l_sums) s += v;
  out.mean_delay = s / static_cast<double>(out.record.l_sums.size());
  return out;
}

struct TrainResult {
  NetworkLayout layout;
  std::vector<EpisodeMetrics> history;
};

// Epsilon-greedy rollouts into the replay buffer, batched sequence replay
// with BPTT, soft target updates. Deterministic per seed.
class Trainer {
 public:
  Trainer(EnvConfig env_cfg, TrainerConfig cfg, MixerKind kind)
      : env_(std::move(env_cfg)),
        cfg_(checked(std::move(cfg))),
        learner_(kind, env_.observation_size(),
                 env_.num_actions(), env_.num_agents(), env_.state_size(),
                 env_.config().gamma, cfg_),
        buffer_(cfg_.buffer_capacity),
        explore_rng_(derive_seed(cfg_.seed, kExploreStream)),
        replay_rng_(derive_seed(cfg_.seed, kReplayStream)) {}

  const Learner& learner() const { return learner_; }
  const std::vector<EpisodeMetrics>& history() const { return history_; }
  const ReplayBuffer& buffer() const { return buffer_; }

  EpisodeMetrics run_episode() {
    const std::size_t e = history_.size();
    const std::uint64_t env_seed =
        cfg_.env_seed ? *cfg_.env_seed
                      : derive_seed(cfg_.seed, kTrainEnvStream, e);
    auto obs = env_.reset(env_seed);
    const double eps = epsilon_at(cfg_, e);
    NetworkPolicy policy(learner_.online().params, learner_.online().agent, eps);
    Rollout r = play_episode(env_, std::move(obs), policy, explore_rng_);
    r.record.id = e;
    buffer_.store(std::move(r.record));

    EpisodeMetrics m;
    m.episode = e;
    m.ret = r.ret;
    m.mean_delay = r.mean_delay;
    m.epsilon = eps;
    m.loss = history_.empty() ? 0.0 : last_loss_;
    if (buffer_.size() >= cfg_.batch_size) {
      for (std::size_t u = 0; u < cfg_.updates_per_episode; ++u) {
        const auto batch = buffer_.sample(cfg_.batch_size, replay_rng_);
        double loss = 0.0;
        try {
          loss = learner_.update(batch);
        } catch (const DivergenceError&) {
          save_divergence();
          throw;
        }
        last_loss_ = loss;
      }
      m.loss = last_loss_;
    }
    history_.push_back(m);
    return m;
  }

  TrainResult run() {
    while (history_.size() < cfg_.episodes) run_episode();
    return {learner_.online(), history_};
  }

 private:
  void save_divergence() const {
    if (!cfg_.divergence_checkpoint.empty()) {
      save_checkpoint(cfg_.divergence_checkpoint, learner_.online().params,
                      "diverged");
    }
  }

  Environment env_;
  TrainerConfig cfg_;
  Learner learner_;
  ReplayBuffer buffer_;
  std::mt19937_64 explore_rng_;
  std::mt19937_64 replay_rng_;
  std::vector<EpisodeMetrics> history_;
  double last_loss_ = 0.0;
};

inline TrainResult train(const EnvConfig& env_cfg, const TrainerConfig& cfg,
                         MixerKind kind) {
  Trainer t(env_cfg, cfg, kind);
  return t.run();
}

struct EvalMetrics {
  std::size_t episodes = 0;
  double mean_return = 0.0;
  double std_return = 0.0;
  double mean_delay = 0.0;  // mean L_sum per slot
  double std_delay = 0.0;   // across episodes
  double frac_local = 0.0;
  double frac_end = 0.0;
  double frac_cloud = 0.0;
  std::vector<double> episode_delays;
};

inline double mean_of(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

// Sample standard deviation; 0 for fewer than two values.
inline double stddev_of(std::span<const double> v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

// Rolls out `episodes` fresh instances. Environment seeds depend only on
// (seed, episode), so different policies face identical instances.
inline EvalMetrics evaluate(Policy& policy, const EnvConfig& env_cfg,
                            std::size_t episodes, std::uint64_t seed) {
  if (episodes == 0) throw RangeError("evaluation needs at least one episode");
  Environment env(env_cfg);
  std::mt19937_64 rng(derive_seed(seed, kEvalPolicyStream));
  EvalMetrics m;
  m.episodes = episodes;
  std::vector<double> returns;
  std::vector<std::size_t> tiers(3, 0);
  for (std::size_t e = 0; e < episodes; ++e) {
    auto obs = env.reset(derive_seed(seed, kEvalEnvStream, e));
    const Rollout r = play_episode(env, std::move(obs), policy, rng);
    returns.push_back(r.ret);
    m.episode_delays.push_back(r.mean_delay);
    for (std::size_t t = 0; t < 3; ++t) tiers[t] += r.tier_counts[t];
  }
  m.mean_return = mean_of(returns);
  m.std_return = stddev_of(returns);
  m.mean_delay = mean_of(m.episode_delays);
  m.std_delay = stddev_of(m.episode_delays);
  const double total = static_cast<double>(tiers[0] + tiers[1] + tiers[2]);
  m.frac_local = static_cast<double>(tiers[0]) / total;
  m.frac_end = static_cast<double>(tiers[1]) / total;
  m.frac_cloud = static_cast<double>(tiers[2]) / total;
  return m;
}

// Greedy evaluation of a trained layout.
inline EvalMetrics evaluate(const NetworkLayout& layout,
                            const EnvConfig& env_cfg, std::size_t episodes,
                            std::uint64_t seed) {
  NetworkPolicy policy(layout.params, layout.agent, 0.0);
  return evaluate(policy, env_cfg, episodes, seed);
}

}  // namespace stin

#endif  // STIN_MARL_HPP_
