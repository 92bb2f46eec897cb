#include <gtest/gtest.h>

#include <array>
#include <cmath>
#include <random>
#include <vector>

#include "stin/marl.hpp"
#include "support.hpp"

namespace stin {
namespace {

std::vector<bool> all_true(std::size_t k) { return std::vector<bool>(k, true); }

TEST(TdTarget, HandExamples) {
  EXPECT_NEAR(td_target(0.5, 0.9, 1.0, false), 1.4, 1.4 * 1e-12);
  EXPECT_EQ(td_target(0.5, 0.9, 123.0, true), 0.5);
  EXPECT_EQ(td_target(0.5, 0.0, 123.0, false), 0.5);
}

TEST(TdLoss, HandExamples) {
  const std::vector<double> y{1.0, 2.0}, zero{0.0, 0.0};
  EXPECT_NEAR(td_loss(y, zero), 2.5, 2.5 * 1e-12);
  EXPECT_EQ(td_loss(y, y), 0.0);
  const std::vector<double> y2{2.0, 4.0};
  EXPECT_EQ(td_loss(y2, zero), 4.0 * td_loss(y, zero));
  EXPECT_THROW(td_loss({}, {}), ShapeError);
}

TEST(EpsilonSchedule, LinearAnneal) {
  TrainerConfig cfg;
  EXPECT_EQ(epsilon_at(cfg, 0), 1.0);
  EXPECT_NEAR(epsilon_at(cfg, 250), 0.525, 1e-12);
  EXPECT_EQ(epsilon_at(cfg, 500), 0.05);
  EXPECT_EQ(epsilon_at(cfg, 999), 0.05);
}

TEST(SelectAction, GreedyAndMasked) {
  const std::vector<double> q{1.0, 3.0, 2.0};
  std::mt19937_64 rng(1);
  EXPECT_EQ(epsilon_greedy(q, all_true(3), 0.0, rng), 1u);
  EXPECT_EQ(epsilon_greedy(q, {true, false, true}, 0.0, rng), 2u);
  EXPECT_EQ(greedy_action(std::vector<double>{2.0, 2.0, 1.0}, all_true(3)), 0u);
  EXPECT_THROW(epsilon_greedy(q, {false, false, false}, 0.0, rng), DomainError);
}

TEST(SelectAction, UniformExplorationFrequencies) {
  const std::vector<double> q{1.0, 3.0, 2.0, 9.0};
  const std::vector<bool> mask{true, true, false, true};
  std::mt19937_64 rng(2);
  std::array<int, 4> counts{};
  const int n = 100000;
  for (int i = 0; i < n; ++i) ++counts[epsilon_greedy(q, mask, 1.0, rng)];
  EXPECT_EQ(counts[2], 0);
  const double p = 1.0 / 3.0;
  const double sigma = std::sqrt(n * p * (1 - p));
  for (int a : {0, 1, 3}) EXPECT_LT(std::abs(counts[a] - n * p), 3 * sigma);
}

TEST(SelectAction, ArgmaxInvariantUnderPositiveAffineMaps) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-5, 5), pos(0.1, 10);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<double> q(5), t(5);
    for (auto& v : q) v = u(rng);
    const double a = pos(rng), b = u(rng);
    for (int i = 0; i < 5; ++i) t[i] = a * q[i] + b;
    EXPECT_EQ(greedy_action(q, all_true(5)), greedy_action(t, all_true(5)));
  }
}

TEST(SelectAction, AdvancesHiddenState) {
  std::mt19937_64 rng(4);
  ParameterSet p;
  const auto net = add_agent_network(p, 6, 5, 4);
  p.init_uniform(rng);
  const Observation obs(6, 0.5);
  const auto [a, h] = select_action(p, net, obs, Vector::Zero(5), all_true(4), 0.0, rng);
  EXPECT_LT(a, 4u);
  EXPECT_EQ(h.size(), 5);
  EXPECT_FALSE(h.isZero(0.0));
}

EpisodeRecord tagged(std::uint64_t id) {
  EpisodeRecord e;
  e.id = id;
  return e;
}

TEST(Replay, FifoEviction) {
  ReplayBuffer buf(3);
  for (std::uint64_t i = 0; i < 7; ++i) buf.store(tagged(i));
  ASSERT_EQ(buf.size(), 3u);
  EXPECT_EQ(buf[0].id, 4u);
  EXPECT_EQ(buf[1].id, 5u);
  EXPECT_EQ(buf[2].id, 6u);
}

TEST(Replay, SamplesDistinctEpisodesOnlyWhenEnoughStored) {
  ReplayBuffer buf(10);
  std::mt19937_64 rng(5);
  buf.store(tagged(0));
  EXPECT_THROW(buf.sample(2, rng), RangeError);
  for (std::uint64_t i = 1; i < 10; ++i) buf.store(tagged(i));
  const auto batch = buf.sample(10, rng);
  std::vector<bool> seen(10, false);
  for (const auto* e : batch) {
    EXPECT_FALSE(seen[e->id]);
    seen[e->id] = true;
  }
}

EnvConfig tiny_env() {
  EnvConfig cfg;
  cfg.num_users = 3;
  cfg.num_end_nodes = 1;
  cfg.episode_len = 4;
  return cfg;
}

TrainerConfig tiny_trainer() {
  TrainerConfig t;
  t.episodes = 6;
  t.batch_size = 3;
  t.buffer_capacity = 10;
  t.epsilon_anneal_episodes = 4;
  t.hidden_size = 5;
  t.mixer_embed = 4;
  t.seed = 11;
  return t;
}

std::vector<EpisodeRecord> random_episodes(const EnvConfig& cfg, std::size_t n) {
  Environment env(cfg);
  RandomPolicy policy;
  std::mt19937_64 rng(6);
  std::vector<EpisodeRecord> out;
  for (std::size_t e = 0; e < n; ++e) {
    out.push_back(play_episode(env, env.reset(e), policy, rng).record);
  }
  return out;
}

// Full learner loss (all mixers) against central differences with the
// target network held fixed.
class LearnerGradients : public ::testing::TestWithParam<MixerKind> {};

TEST_P(LearnerGradients, MatchFiniteDifferences) {
  const EnvConfig env_cfg = tiny_env();
  const Environment probe(env_cfg);
  TrainerConfig t = tiny_trainer();
  Learner learner(GetParam(), probe.observation_size(), probe.num_actions(),
                  probe.num_agents(), probe.state_size(), env_cfg.gamma, t);
  // Move online away from target so bootstrap terms are non-trivial.
  std::mt19937_64 rng(7);
  learner.online().params.init_uniform(rng);
  const auto episodes = random_episodes(env_cfg, 3);
  std::vector<const EpisodeRecord*> batch;
  for (const auto& e : episodes) batch.push_back(&e);

  learner.compute_gradients(batch);
  ParameterSet& p = learner.online().params;
  std::vector<double> analytic;
  for (std::size_t i = 0; i < p.scalar_count(); ++i) analytic.push_back(p.grad_scalar(i));
  double worst = 0.0;
  const double h = 1e-5;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    double& theta = p.scalar(i);
    const double saved = theta;
    theta = saved + h;
    const double up = learner.compute_gradients(batch);
    theta = saved - h;
    const double down = learner.compute_gradients(batch);
    theta = saved;
    worst = std::max(worst, testing::relative_error(analytic[i], (up - down) / (2 * h)));
  }
  EXPECT_LT(worst, 1e-4);
}

INSTANTIATE_TEST_SUITE_P(AllMixers, LearnerGradients,
                         ::testing::Values(MixerKind::kVdnSum,
                                           MixerKind::kNoneIql,
                                           MixerKind::kQmixMonotonic));

TEST(Iql, OutputGradientIsPerAgent) {
  std::mt19937_64 rng(8);
  const Matrix chosen = testing::random_matrix(rng, 4, 3);
  Matrix y = testing::random_matrix(rng, 4, 3);
  const Matrix g0 = iql_output_grad(chosen, y, 0.1);
  y.row(2).array() += 5.0;
  Matrix perturbed_chosen = chosen;
  perturbed_chosen.row(2).array() -= 1.0;
  const Matrix g1 = iql_output_grad(perturbed_chosen, y, 0.1);
  for (Eigen::Index i : {0, 1, 3}) EXPECT_EQ(g0.row(i), g1.row(i));
  EXPECT_NE(g0.row(2), g1.row(2));
  // VDN couples agents through the shared joint error.
  const Matrix v0 = vdn_output_grad(chosen, Matrix::Zero(1, 3), 0.1);
  const Matrix v1 = vdn_output_grad(perturbed_chosen, Matrix::Zero(1, 3), 0.1);
  EXPECT_NE(v0.row(0), v1.row(0));
}

TEST(Iql, LossIsMeanOfPerAgentTdErrors) {
  const EnvConfig env_cfg = tiny_env();
  const Environment probe(env_cfg);
  Learner iql(MixerKind::kNoneIql, probe.observation_size(), probe.num_actions(),
              probe.num_agents(), probe.state_size(), env_cfg.gamma, tiny_trainer());
  const auto episodes = random_episodes(env_cfg, 2);
  std::vector<const EpisodeRecord*> batch{&episodes[0], &episodes[1]};
  const double loss = iql.compute_gradients(batch);

  // Independent recomputation from network outputs.
  const auto& online = iql.online();
  const auto& target = iql.target();
  double total = 0.0;
  std::size_t count = 0;
  for (const auto* ep : batch) {
    const auto n = static_cast<Eigen::Index>(probe.num_agents());
    Matrix h = Matrix::Zero(online.agent.hidden_size(), n);
    Matrix ht = h;
    std::vector<Matrix> q, qt;
    for (std::size_t t = 0; t < ep->length(); ++t) {
      auto [a, b] = agent_step(online.params, online.agent, ep->observations[t], h);
      auto [c, d] = agent_step(target.params, target.agent, ep->observations[t], ht);
      q.push_back(a);
      qt.push_back(c);
      h = b;
      ht = d;
    }
    for (std::size_t t = 0; t < ep->length(); ++t) {
      for (Eigen::Index i = 0; i < n; ++i) {
        const double chosen = q[t](static_cast<Eigen::Index>(ep->actions[t][i]), i);
        double next = 0.0;
        const bool terminal = t + 1 == ep->length();
        if (!terminal) {
          next = -1e300;
          for (Eigen::Index a = 0; a < qt[t + 1].rows(); ++a) {
            if (ep->masks[t + 1][i * qt[t + 1].rows() + a]) {
              next = std::max(next, qt[t + 1](a, i));
            }
          }
        }
        const double y = td_target(ep->rewards[t], env_cfg.gamma, next, terminal);
        total += (y - chosen) * (y - chosen);
        ++count;
      }
    }
  }
  EXPECT_NEAR(loss, total / static_cast<double>(count), 1e-10);
}

TEST(Train, DeterministicPerSeed) {
  for (MixerKind kind : {MixerKind::kVdnSum, MixerKind::kNoneIql, MixerKind::kQmixMonotonic}) {
    const auto a = train(tiny_env(), tiny_trainer(), kind);
    const auto b = train(tiny_env(), tiny_trainer(), kind);
    ASSERT_EQ(a.history.size(), 6u);
    for (std::size_t e = 0; e < 6; ++e) {
      EXPECT_EQ(a.history[e].ret, b.history[e].ret);
      EXPECT_EQ(a.history[e].loss, b.history[e].loss);
      EXPECT_EQ(a.history[e].epsilon, b.history[e].epsilon);
    }
    EXPECT_GT(a.history.back().loss, 0.0);
    for (std::size_t i = 0; i < a.layout.params.size(); ++i) {
      EXPECT_EQ(a.layout.params[i].value, b.layout.params[i].value);
    }
  }
}

TEST(Train, MetricsFollowSchedule) {
  const auto r = train(tiny_env(), tiny_trainer(), MixerKind::kVdnSum);
  EXPECT_EQ(r.history[0].epsilon, 1.0);
  EXPECT_EQ(r.history[5].epsilon, 0.05);
  EXPECT_EQ(r.history[0].loss, 0.0);
}

TEST(Evaluate, ZeroEpisodesRejected) {
  RandomPolicy p;
  EXPECT_THROW(evaluate(p, tiny_env(), 0, 1), RangeError);
}

TEST(Evaluate, AllLocalMatchesClosedForm) {
  EnvConfig cfg = tiny_env();
  LocalPolicy local;
  const auto m = evaluate(local, cfg, 4, 9);
  // Local delay does not depend on position, so each slot costs the same.
  double expected = 0.0;
  Environment env(cfg);
  for (std::size_t e = 0; e < 4; ++e) {
    env.reset(derive_seed(9, kEvalEnvStream, e));
    double sum = 0.0;
    for (const auto& u : env.state().snapshot.users) sum += local_delay(u);
    expected += sum;
  }
  EXPECT_NEAR(m.mean_delay, expected / 4.0, 1e-12);
  EXPECT_EQ(m.frac_local, 1.0);
}

TEST(Evaluate, RandomPolicyUsesEveryTier) {
  RandomPolicy rd;
  const auto m = evaluate(rd, EnvConfig{}, 3, 1);
  EXPECT_GT(m.frac_end, 0.0);
  EXPECT_GT(m.frac_cloud, 0.0);
  EXPECT_NEAR(m.frac_local + m.frac_end + m.frac_cloud, 1.0, 1e-12);
  EXPECT_GT(m.std_delay, 0.0);
}

TEST(Evaluate, NetworkMismatchRejected) {
  TrainerConfig t = tiny_trainer();
  const auto layout = make_layout(MixerKind::kVdnSum, tiny_env(), t);
  EXPECT_THROW(evaluate(layout, EnvConfig{}, 1, 1), ShapeError);
}

TEST(Seeds, DerivedStreamsDiffer) {
  EXPECT_NE(derive_seed(1, kTrainEnvStream, 0), derive_seed(1, kEvalEnvStream, 0));
  EXPECT_NE(derive_seed(1, kTrainEnvStream, 0), derive_seed(1, kTrainEnvStream, 1));
  EXPECT_EQ(derive_seed(5, kReplayStream, 3), derive_seed(5, kReplayStream, 3));
}

}  // namespace
}  // namespace stin
