#ifndef STIN_TESTS_SUPPORT_HPP_
#define STIN_TESTS_SUPPORT_HPP_

// Shared fixtures for unit and acceptance tests: hand-built entities, small
// random snapshots, and a central finite-difference gradient checker.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "stin/deployment.hpp"
#include "stin/mixer.hpp"
#include "stin/neural.hpp"

namespace stin::testing {

inline User make_user(double data_bits, double workload, double cpu_hz) {
  User u;
  u.data_size_bits = data_bits;
  u.workload_density = workload;
  u.cpu_hz = cpu_hz;
  return u;
}

// Small instance with random positions and parameters drawn from the
// default ranges.
inline SystemSnapshot random_snapshot(std::mt19937_64& rng, std::size_t users,
                                      std::size_t nodes,
                                      std::size_t capacity = 8) {
  std::uniform_real_distribution<double> pos(0.0, 500.0);
  std::uniform_real_distribution<double> data(0.5, 2.0);
  std::uniform_real_distribution<double> mu(50.0, 150.0);
  std::uniform_real_distribution<double> cpu(0.5, 20.0);
  std::normal_distribution<double> shadow(0.0, 4.0);
  SystemSnapshot s;
  for (std::size_t i = 0; i < users; ++i) {
    User u = make_user(data(rng) * kBitsPerMegabyte, mu(rng), cpu(rng) * 1e9);
    u.id = i;
    u.position = {pos(rng), pos(rng)};
    s.users.push_back(u);
  }
  for (std::size_t j = 0; j < nodes; ++j) {
    EndSideNode n;
    n.id = j;
    n.position = {pos(rng), pos(rng)};
    n.total_cpu_hz = 20e9;
    n.capacity = capacity;
    s.end_nodes.push_back(n);
  }
  for (std::size_t i = 0; i < users; ++i) {
    for (std::size_t j = 0; j < nodes; ++j) {
      const double d = distance(s.users[i].position, s.end_nodes[j].position);
      s.end_gains.push_back(channel_gain(d, s.channel, shadow(rng)));
    }
    s.satellite_gains.push_back(s.path.g_is);
  }
  return s;
}

struct GradCheck {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
};

// Relative error |a - n| / max(|a|, |n|, floor). The floor keeps
// vanishing gradients from dividing round-off by round-off.
inline double relative_error(double analytic, double numeric,
                             double floor = 1e-6) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / scale;
}

// Compares grads already accumulated in `p` against central differences of
// `loss`, which must evaluate without touching gradients.
inline GradCheck check_gradients(ParameterSet& p,
                                 const std::function<double()>& loss,
                                 double h = 1e-5) {
  GradCheck out;
  for (std::size_t i = 0; i < p.scalar_count(); ++i) {
    double& theta = p.scalar(i);
    const double saved = theta;
    theta = saved + h;
    const double up = loss();
    theta = saved - h;
    const double down = loss();
    theta = saved;
    const double numeric = (up - down) / (2.0 * h);
    out.max_rel_error =
        std::max(out.max_rel_error, relative_error(p.grad_scalar(i), numeric));
    ++out.checked;
  }
  return out;
}

inline Matrix random_matrix(std::mt19937_64& rng, Eigen::Index rows,
                            Eigen::Index cols, double scale = 1.0) {
  std::uniform_real_distribution<double> u(-scale, scale);
  Matrix m(rows, cols);
  for (Eigen::Index c = 0; c < cols; ++c) {
    for (Eigen::Index r = 0; r < rows; ++r) m(r, c) = u(rng);
  }
  return m;
}

// Full agent network unrolled over `steps`; loss = sum_t <C_t, Q_t>.
inline GradCheck agent_network_gradcheck(std::mt19937_64& rng,
                                         Eigen::Index input, Eigen::Index hidden,
                                         Eigen::Index actions,
                                         Eigen::Index batch,
                                         std::size_t steps) {
  ParameterSet p;
  const AgentNetwork net = add_agent_network(p, input, hidden, actions);
  p.init_uniform(rng);
  std::vector<Matrix> xs, cs;
  for (std::size_t t = 0; t < steps; ++t) {
    xs.push_back(random_matrix(rng, input, batch));
    cs.push_back(random_matrix(rng, actions, batch));
  }
  auto loss = [&]() {
    Matrix h = Matrix::Zero(hidden, batch);
    double l = 0.0;
    for (std::size_t t = 0; t < steps; ++t) {
      auto [q, hn] = agent_step(p, net, xs[t], h);
      h = std::move(hn);
      l += (q.array() * cs[t].array()).sum();
    }
    return l;
  };
  p.zero_grad();
  SequenceTape tape(p, net);
  tape.forward(xs);
  tape.backward(cs);
  return check_gradients(p, loss);
}

// QMIX mixer; loss = <c, Q_tot>. Checks hypernetwork parameters and the
// gradient with respect to the agent values.
inline GradCheck qmix_gradcheck(std::mt19937_64& rng, Eigen::Index agents,
                                Eigen::Index state, Eigen::Index embed,
                                Eigen::Index batch) {
  ParameterSet p;
  const QmixMixer m = add_qmix_mixer(p, agents, state, embed);
  p.init_uniform(rng);
  Matrix q = random_matrix(rng, agents, batch, 2.0);
  const Matrix s = random_matrix(rng, state, batch);
  const Matrix c = random_matrix(rng, 1, batch);
  auto loss = [&]() { return (qmix_forward(p, m, q, s).array() * c.array()).sum(); };
  p.zero_grad();
  QmixCache cache;
  qmix_forward(p, m, q, s, &cache);
  const Matrix dq = qmix_backward(p, m, cache, c);
  GradCheck out = check_gradients(p, loss);
  const double h = 1e-5;
  for (Eigen::Index b = 0; b < batch; ++b) {
    for (Eigen::Index i = 0; i < agents; ++i) {
      const double saved = q(i, b);
      q(i, b) = saved + h;
      const double up = loss();
      q(i, b) = saved - h;
      const double down = loss();
      q(i, b) = saved;
      out.max_rel_error = std::max(
          out.max_rel_error, relative_error(dq(i, b), (up - down) / (2 * h)));
      ++out.checked;
    }
  }
  return out;
}

// Smallest finite-difference slope dQ_tot/dQ_i over random states.
inline double qmix_min_slope(std::mt19937_64& rng, Eigen::Index agents,
                             Eigen::Index state, Eigen::Index embed,
                             std::size_t samples) {
  ParameterSet p;
  const QmixMixer m = add_qmix_mixer(p, agents, state, embed);
  p.init_uniform(rng);
  double min_slope = std::numeric_limits<double>::infinity();
  const double h = 1e-6;
  for (std::size_t n = 0; n < samples; ++n) {
    const Matrix s = random_matrix(rng, state, 1);
    Matrix q = random_matrix(rng, agents, 1, 5.0);
    for (Eigen::Index i = 0; i < agents; ++i) {
      const double saved = q(i, 0);
      q(i, 0) = saved + h;
      const double up = qmix_forward(p, m, q, s)(0, 0);
      q(i, 0) = saved - h;
      const double down = qmix_forward(p, m, q, s)(0, 0);
      q(i, 0) = saved;
      min_slope = std::min(min_slope, (up - down) / (2 * h));
    }
  }
  return min_slope;
}

}  // namespace stin::testing

#endif  // STIN_TESTS_SUPPORT_HPP_
