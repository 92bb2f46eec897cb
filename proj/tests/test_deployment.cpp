#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "stin/deployment.hpp"
#include "support.hpp"

namespace stin {
namespace {

using testing::make_user;
using testing::random_snapshot;

SystemSnapshot one_node_snapshot(std::size_t users, std::size_t capacity,
                                 double node_hz) {
  SystemSnapshot s;
  for (std::size_t i = 0; i < users; ++i) {
    s.users.push_back(make_user(8e6, 100, 2e9));
    s.end_gains.push_back(1e-9);
    s.satellite_gains.push_back(s.path.g_is);
  }
  EndSideNode n;
  n.total_cpu_hz = node_hz;
  n.capacity = capacity;
  s.end_nodes.push_back(n);
  return s;
}

DeploymentMatrix rows(std::initializer_list<std::initializer_list<int>> r) {
  DeploymentMatrix m(r.size(), r.begin()->size());
  std::size_t i = 0;
  for (const auto& row : r) {
    std::size_t j = 0;
    for (int v : row) m(i, j++) = v;
    ++i;
  }
  return m;
}

TEST(Validate, OneHotRowPasses) {
  auto s = one_node_snapshot(1, 8, 4e9);
  s.end_nodes.resize(3, s.end_nodes[0]);
  s.end_gains.assign(3, 1e-9);
  EXPECT_TRUE(validate(rows({{1, 0, 0, 0, 0}}), s).empty());
}

TEST(Validate, DoubleRowReportsSingleTarget) {
  auto s = one_node_snapshot(1, 8, 4e9);
  s.end_nodes.resize(3, s.end_nodes[0]);
  s.end_gains.assign(3, 1e-9);
  const auto v = validate(rows({{1, 1, 0, 0, 0}}), s);
  ASSERT_EQ(v.size(), 1u);
  EXPECT_EQ(v[0].constraint, Constraint::kSingleTarget);
  EXPECT_EQ(v[0].index, 0u);
  EXPECT_EQ(v[0].magnitude, 2.0);
  EXPECT_EQ(std::string(to_string(v[0].constraint)), "single_target");
}

TEST(Validate, CapacityOverflowReported) {
  const auto s = one_node_snapshot(2, 1, 4e9);
  const auto v = validate(rows({{0, 1, 0}, {0, 1, 0}}), s);
  ASSERT_EQ(v.size(), 1u);
  EXPECT_EQ(v[0].constraint, Constraint::kCapacity);
  EXPECT_EQ(v[0].index, 1u);
  EXPECT_EQ(v[0].magnitude, 2.0);
}

TEST(Validate, NonBinaryEntryReported) {
  const auto s = one_node_snapshot(1, 8, 4e9);
  const auto v = validate(rows({{2, 0, 0}}), s);
  ASSERT_FALSE(v.empty());
  EXPECT_EQ(v[0].constraint, Constraint::kBinary);
}

TEST(Validate, ShapeMismatchIsStructural) {
  const auto s = one_node_snapshot(2, 8, 4e9);
  EXPECT_THROW(validate(DeploymentMatrix(3, 3), s), StructuralError);
  EXPECT_THROW(validate(DeploymentMatrix(2, 4), s), StructuralError);
}

TEST(Allocate, EvenSplit) {
  const auto s = one_node_snapshot(2, 8, 4e9);
  const auto plan = allocate(rows({{0, 1, 0}, {0, 1, 0}}), s);
  EXPECT_EQ(plan.allocated_hz[0], 2e9);
  EXPECT_EQ(plan.allocated_hz[1], 2e9);
  EXPECT_EQ(plan.occupancy[1], 2u);
}

TEST(Allocate, SoleOccupantAndLocal) {
  auto s = one_node_snapshot(2, 8, 4e9);
  s.users[0].cpu_hz = 3e9;
  const auto plan = allocate(rows({{1, 0, 0}, {0, 1, 0}}), s);
  EXPECT_EQ(plan.allocated_hz[0], 3e9);
  EXPECT_EQ(plan.allocated_hz[1], 4e9);
}

TEST(Allocate, InvalidMatrixRejected) {
  const auto s = one_node_snapshot(2, 1, 4e9);
  EXPECT_THROW(allocate(rows({{0, 1, 0}, {0, 1, 0}}), s), InvalidMatrixError);
}

TEST(TotalDelay, SingleLocalUser) {
  const auto s = one_node_snapshot(1, 8, 4e9);
  EXPECT_NEAR(total_delay(rows({{1, 0, 0}}), s), 0.4, 0.4 * 1e-12);
}

TEST(TotalDelay, IndependentLocalUsersAdd) {
  auto s = one_node_snapshot(2, 8, 4e9);
  s.users[1] = make_user(1.6e7, 50, 5e8);
  EXPECT_NEAR(total_delay(rows({{1, 0, 0}, {1, 0, 0}}), s), 2.0, 2.0 * 1e-12);
}

TEST(TotalDelay, SharingDoublesComputeDelay) {
  const auto s = one_node_snapshot(2, 8, 4e9);
  const auto alone = user_delays(allocate(rows({{0, 1, 0}, {1, 0, 0}}), s), s);
  const auto shared = user_delays(allocate(rows({{0, 1, 0}, {0, 1, 0}}), s), s);
  const double rate = s.end_rate(0, 0);
  const double comm = s.users[0].data_size_bits / rate;
  EXPECT_NEAR(shared[0] - comm, 2.0 * (alone[0] - comm), 1e-12);
}

TEST(Oracle, PrefersFastLocalOverSlowLinks) {
  SystemSnapshot s;
  const double n0 = s.channel.noise_psd_w_per_hz;
  const double w = s.channel.bandwidth_hz;
  // Gain that yields exactly 1e6 bit/s at 0.2 W.
  const double g = (std::exp2(1e6 / w) - 1.0) * w * n0 / 0.2;
  for (int i = 0; i < 2; ++i) {
    s.users.push_back(make_user(8e5, 100, 2e9));
    s.end_gains.push_back(g);
    s.satellite_gains.push_back(s.path.g_is);
  }
  EndSideNode n;
  n.total_cpu_hz = 20e9;
  n.capacity = 8;
  s.end_nodes.push_back(n);
  EXPECT_NEAR(s.end_rate(0, 0), 1e6, 1e-3);
  const auto best = brute_force_optimal(s);
  EXPECT_EQ(best.assignment, (std::vector<std::size_t>{0, 0}));
  EXPECT_NEAR(best.delay, 0.08, 1e-12);
  EXPECT_EQ(best.matrix, DeploymentMatrix::from_assignment({0, 0}, 3));
}

TEST(Oracle, SingletonSpace) {
  SystemSnapshot s;
  s.users.push_back(make_user(8e6, 100, 2e9));
  s.satellite_gains.push_back(s.path.g_is);
  // No end nodes leaves local and cloud; with a near-zero cloud budget only
  // local is sensible, and it is the sole minimizer.
  s.path.cloud_cpu_hz = 1.0;
  const auto best = brute_force_optimal(s);
  EXPECT_EQ(best.assignment, (std::vector<std::size_t>{0}));
}

TEST(Oracle, TooLargeInstanceRejected) {
  std::mt19937_64 rng(1);
  const auto s = random_snapshot(rng, 11, 3);  // 5^11 > 1e7
  EXPECT_THROW(brute_force_optimal(s), InstanceTooLargeError);
  EXPECT_THROW(brute_force_optimal(random_snapshot(rng, 4, 3), 100),
               InstanceTooLargeError);
}

// Odometer over every assignment of `users` into `targets`.
template <typename Fn>
void for_each_assignment(std::size_t users, std::size_t targets, Fn fn) {
  std::vector<std::size_t> a(users, 0);
  while (true) {
    fn(a);
    std::size_t i = users;
    while (i > 0) {
      --i;
      if (++a[i] < targets) break;
      a[i] = 0;
      if (i == 0) return;
    }
  }
}

TEST(Oracle, NoFeasibleAssignmentBeatsIt) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const auto s = random_snapshot(rng, 4, 1, 2);  // 3 targets, tight capacity
    const auto best = brute_force_optimal(s);
    EXPECT_TRUE(validate(best.matrix, s).empty());
    EXPECT_EQ(total_delay(best.matrix, s), best.delay);
    for_each_assignment(4, 3, [&](const std::vector<std::size_t>& a) {
      const auto m = DeploymentMatrix::from_assignment(a, 3);
      if (!validate(m, s).empty()) return;
      const double d = total_delay(m, s);
      EXPECT_LE(best.delay, d);
      if (d == best.delay) {
        EXPECT_LE(best.assignment, a);  // lexicographic tie-break
      }
    });
  }
}

TEST(Oracle, ParallelMatchesSequential) {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 10; ++trial) {
    const auto s = random_snapshot(rng, 5, 3, 2);
    const auto seq = brute_force_optimal(s, kDefaultEnumerationCap, 1);
    const auto par = brute_force_optimal(s, kDefaultEnumerationCap, 4);
    EXPECT_EQ(seq.assignment, par.assignment);
    EXPECT_EQ(seq.delay, par.delay);
  }
}

TEST(Oracle, TieBreaksLexicographically) {
  // Two identical users and two identical nodes: {1,2} and {2,1} tie.
  SystemSnapshot s;
  for (int i = 0; i < 2; ++i) {
    s.users.push_back(make_user(8e6, 150, 5e8));
    s.satellite_gains.push_back(1e-20);
  }
  EndSideNode n;
  n.total_cpu_hz = 20e9;
  n.capacity = 1;
  s.end_nodes = {n, n};
  s.end_gains.assign(4, 1e-8);
  const auto best = brute_force_optimal(s);
  EXPECT_EQ(best.assignment, (std::vector<std::size_t>{1, 2}));
}

TEST(DeploymentProperties, PermutationEquivariant) {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<std::size_t> pick(0, 4);
  for (int trial = 0; trial < 50; ++trial) {
    const auto s = random_snapshot(rng, 6, 3);
    std::vector<std::size_t> a(6);
    for (auto& v : a) v = pick(rng);
    std::vector<std::size_t> perm(6);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    SystemSnapshot p = s;
    std::vector<std::size_t> pa(6);
    for (std::size_t i = 0; i < 6; ++i) {
      p.users[i] = s.users[perm[i]];
      p.satellite_gains[i] = s.satellite_gains[perm[i]];
      for (std::size_t j = 0; j < 3; ++j) {
        p.end_gains[i * 3 + j] = s.end_gains[perm[i] * 3 + j];
      }
      pa[i] = a[perm[i]];
    }
    const auto m = DeploymentMatrix::from_assignment(a, 5);
    const auto pm = DeploymentMatrix::from_assignment(pa, 5);
    const auto d = user_delays(allocate(m, s), s);
    const auto pd = user_delays(allocate(pm, p), p);
    for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(pd[i], d[perm[i]]);
    EXPECT_NEAR(total_delay(pm, p), total_delay(m, s), 1e-12);
  }
}

TEST(DeploymentProperties, AllocationWithinBudgets) {
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<std::size_t> pick(0, 4);
  for (int trial = 0; trial < 200; ++trial) {
    const auto s = random_snapshot(rng, 8, 3);
    std::vector<std::size_t> a(8);
    for (auto& v : a) v = pick(rng);
    const auto plan = allocate(DeploymentMatrix::from_assignment(a, 5), s);
    std::vector<double> used(5, 0.0);
    for (std::size_t i = 0; i < 8; ++i) used[a[i]] += plan.allocated_hz[i];
    for (std::size_t t = 1; t < 5; ++t) {
      EXPECT_LE(used[t], s.target_budget_hz(t) * (1 + 1e-12));
    }
  }
}

TEST(DeploymentProperties, ExtraOccupantNeverHelps) {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 100; ++trial) {
    const auto s = random_snapshot(rng, 5, 2);
    for (std::size_t target = 1; target < 4; ++target) {
      std::vector<std::size_t> a = {target, target, 0, 0, 0};
      std::vector<std::size_t> b = {target, target, target, 0, 0};
      const auto da = user_delays(allocate(DeploymentMatrix::from_assignment(a, 4), s), s);
      const auto db = user_delays(allocate(DeploymentMatrix::from_assignment(b, 4), s), s);
      EXPECT_GE(db[0], da[0]);
      EXPECT_GE(db[1], da[1]);
    }
  }
}

TEST(Json, SnapshotAndMatrixRoundTrip) {
  std::mt19937_64 rng(8);
  const auto s = random_snapshot(rng, 3, 2);
  const nlohmann::json j = s;
  const auto back = j.get<SystemSnapshot>();
  EXPECT_EQ(back.users.size(), 3u);
  EXPECT_EQ(back.end_gains, s.end_gains);
  EXPECT_EQ(back.users[1].data_size_bits, s.users[1].data_size_bits);
  EXPECT_EQ(brute_force_optimal(back).assignment, brute_force_optimal(s).assignment);
  const auto m = DeploymentMatrix::from_assignment({0, 3, 1}, 4);
  const nlohmann::json jm = m;
  EXPECT_EQ(jm.get<DeploymentMatrix>(), m);
}

TEST(Json, InvalidSnapshotRejected) {
  std::mt19937_64 rng(8);
  nlohmann::json j = random_snapshot(rng, 3, 2);
  j["end_gains"].erase(0);
  EXPECT_THROW(j.get<SystemSnapshot>(), StructuralError);
}

}  // namespace
}  // namespace stin
