#ifndef STIN_ENV_HPP_
#define STIN_ENV_HPP_

// Time-slotted multi-agent environment. Each user is an agent choosing one
// deployment target per slot; all agents share the reward.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <ostream>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "stin/deployment.hpp"
#include "stin/error.hpp"
#include "stin/model.hpp"

namespace stin {

struct EnvConfig {
  std::size_t num_users = 20;
  std::size_t num_end_nodes = 3;
  double area_m = 500.0;
  std::size_t episode_len = 20;
  double alpha = 0.7;
  double beta = 0.3;
  double phi = 0.1;
  double gamma = 0.9;
  double mobility_sigma_m = 5.0;
  double data_size_min_mb = 0.5;
  double data_size_max_mb = 2.0;
  double workload_min = 50.0;
  double workload_max = 150.0;
  double cpu_min_ghz = 0.5;
  double cpu_max_ghz = 20.0;
  double tx_power_w = 0.2;
  double end_node_cpu_ghz = 20.0;
  std::size_t end_node_capacity = 8;
  // Freeze positions and shadowing after reset.
  bool static_channel = false;
  ChannelParams channel;
  SatelliteCloudPath path;

  std::size_t num_targets() const { return num_end_nodes + 2; }

  void check() const {
    auto fail = [](const std::string& m) { throw RangeError(m); };
    if (num_users < 1) fail("num_users must be >= 1");
    if (!(area_m > 0.0)) fail("area_m must be > 0");
    if (episode_len < 1) fail("episode_len must be >= 1");
    if (!(alpha >= 0.0) || !(beta >= 0.0) || !(alpha + beta > 0.0)) {
      fail("alpha and beta must be >= 0 with alpha + beta > 0");
    }
    if (!(phi >= 0.0)) fail("phi must be >= 0");
    if (!(gamma > 0.0 && gamma <= 1.0)) fail("gamma must lie in (0, 1]");
    if (!(mobility_sigma_m >= 0.0)) fail("mobility_sigma_m must be >= 0");
    if (!(data_size_min_mb > 0.0 && data_size_min_mb <= data_size_max_mb)) {
      fail("data size range must satisfy 0 < min <= max");
    }
    if (!(workload_min > 0.0 && workload_min <= workload_max)) {
      fail("workload range must satisfy 0 < min <= max");
    }
    if (!(cpu_min_ghz > 0.0 && cpu_min_ghz <= cpu_max_ghz)) {
      fail("cpu range must satisfy 0 < min <= max");
    }
    if (!(tx_power_w > 0.0 && tx_power_w <= 0.2)) {
      fail("tx_power_w must lie in (0, 0.2]");
    }
    if (!(end_node_cpu_ghz > 0.0)) fail("end_node_cpu_ghz must be > 0");
    if (end_node_capacity < 1) fail("end_node_capacity must be >= 1");
    try {
      channel.check();
      path.check();
    } catch (const DomainError& e) {
      fail(e.what());
    }
  }
};

using Observation = std::vector<double>;
using JointAction = std::vector<std::size_t>;

struct SystemState {
  SystemSnapshot snapshot;
  DeploymentMatrix current_matrix;
  std::size_t slot = 0;
};

struct StepResult {
  double reward = 0.0;
  std::vector<Observation> observations;
  DeploymentMatrix executed_matrix;
  JointAction executed_actions;
  std::vector<double> user_delays;
  double l_sum = 0.0;
  std::size_t remote_count = 0;
  bool done = false;
};

// R = alpha * (-L_sum) - beta * (phi * m)
inline double reward(double l_sum, std::size_t remote_count,
                     const EnvConfig& cfg) {
  const double delay_term = -l_sum;
  const double cost_term = cfg.phi * static_cast<double>(remote_count);
  return cfg.alpha * delay_term - cfg.beta * cost_term;
}

inline double discounted_return(std::span<const double> rewards,
                                double gamma) {
  double total = 0.0;
  double w = 1.0;
  for (double r : rewards) {
    total += w * r;
    w *= gamma;
  }
  return total;
}

class Environment {
 public:
  explicit Environment(EnvConfig cfg) : cfg_(std::move(cfg)) { cfg_.check(); }

  const EnvConfig& config() const { return cfg_; }
  const SystemState& state() const { return state_; }
  std::size_t num_agents() const { return cfg_.num_users; }
  std::size_t num_actions() const { return cfg_.num_targets(); }

  // own D, f, mu; rate per end node; satellite rate; residual capacity per
  // shared node (end nodes + cloud); one-hot previous action.
  std::size_t observation_size() const {
    const std::size_t e = cfg_.num_end_nodes;
    return 3 + e + 1 + (e + 1) + num_actions();
  }

  // Concatenated observations plus per-target occupancy fractions.
  std::size_t state_size() const {
    return num_agents() * observation_size() + num_actions();
  }

  std::vector<Observation> reset(std::uint64_t seed) {
    rng_.seed(seed);
    const std::size_t n = cfg_.num_users;
    const std::size_t e = cfg_.num_end_nodes;
    SystemSnapshot& s = state_.snapshot;
    s = SystemSnapshot{};
    s.channel = cfg_.channel;
    s.path = cfg_.path;
    s.users.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      User& u = s.users[i];
      u.id = i;
      u.position = {uniform(0.0, cfg_.area_m), uniform(0.0, cfg_.area_m)};
      u.data_size_bits =
          uniform(cfg_.data_size_min_mb, cfg_.data_size_max_mb) *
          kBitsPerMegabyte;
      u.workload_density = uniform(cfg_.workload_min, cfg_.workload_max);
      u.cpu_hz = uniform(cfg_.cpu_min_ghz, cfg_.cpu_max_ghz) * 1e9;
      u.tx_power_w = cfg_.tx_power_w;
    }
    s.end_nodes.resize(e);
    for (std::size_t j = 0; j < e; ++j) {
      EndSideNode& node = s.end_nodes[j];
      node.id = j;
      node.position = {uniform(0.0, cfg_.area_m), uniform(0.0, cfg_.area_m)};
      node.total_cpu_hz = cfg_.end_node_cpu_ghz * 1e9;
      node.capacity = cfg_.end_node_capacity;
    }
    shadowing_db_.assign(n * e, 0.0);
    draw_shadowing();
    s.satellite_gains.assign(n, s.path.g_is);
    refresh_gains();
    s.check();

    prev_actions_.assign(n, kLocalTarget);
    prev_occupancy_.assign(num_actions(), 0);
    prev_occupancy_[kLocalTarget] = n;
    state_.current_matrix =
        DeploymentMatrix::from_assignment(prev_actions_, num_actions());
    state_.slot = 0;
    rate_norm_ = shannon_rate(cfg_.channel.bandwidth_hz, cfg_.tx_power_w,
                              db_to_linear(cfg_.channel.ref_gain_db),
                              cfg_.channel.noise_psd_w_per_hz);
    return observations();
  }

  // End-node entries are masked when last slot's occupancy reached N_j.
  std::vector<bool> action_mask(std::size_t agent) const {
    if (agent >= num_agents()) throw StructuralError("agent out of range");
    std::vector<bool> mask(num_actions(), true);
    for (std::size_t j = 0; j < cfg_.num_end_nodes; ++j) {
      if (prev_occupancy_[1 + j] >= cfg_.end_node_capacity) mask[1 + j] = false;
    }
    return mask;
  }

  // Capacity overflow resolves in agent-index order; later agents that find
  // a full node execute locally.
  JointAction resolve_capacity(const JointAction& action) const {
    const std::size_t k = num_actions();
    if (action.size() != num_agents()) {
      std::ostringstream os;
      os << "joint action has " << action.size() << " entries, expected "
         << num_agents();
      throw StructuralError(os.str());
    }
    JointAction executed(action.size());
    std::vector<std::size_t> count(k, 0);
    const SystemSnapshot& s = state_.snapshot;
    for (std::size_t i = 0; i < action.size(); ++i) {
      std::size_t a = action[i];
      if (a >= k) throw StructuralError("action index out of range");
      if (a != kLocalTarget && count[a] >= s.target_capacity(a)) {
        a = kLocalTarget;
      }
      ++count[a];
      executed[i] = a;
    }
    return executed;
  }

  StepResult step(const JointAction& action) {
    if (state_.slot >= cfg_.episode_len) {
      throw StructuralError("step called on a finished episode");
    }
    StepResult out;
    out.executed_actions = resolve_capacity(action);
    out.executed_matrix = DeploymentMatrix::from_assignment(
        out.executed_actions, num_actions());
    const AllocationPlan plan = allocate(out.executed_matrix, state_.snapshot);
    out.user_delays = user_delays(plan, state_.snapshot);
    for (double d : out.user_delays) out.l_sum += d;
    out.remote_count = num_agents() - plan.occupancy[kLocalTarget];
    out.reward = reward(out.l_sum, out.remote_count, cfg_);

    state_.current_matrix = out.executed_matrix;
    prev_actions_ = out.executed_actions;
    prev_occupancy_ = plan.occupancy;
    if (!cfg_.static_channel) {
      move_users();
      draw_shadowing();
      refresh_gains();
    }
    ++state_.slot;
    out.done = state_.slot >= cfg_.episode_len;
    out.observations = observations();
    return out;
  }

  std::vector<Observation> observations() const {
    std::vector<Observation> out(num_agents());
    for (std::size_t i = 0; i < num_agents(); ++i) out[i] = observe(i);
    return out;
  }

  Observation observe(std::size_t agent) const {
    const SystemSnapshot& s = state_.snapshot;
    const User& u = s.users[agent];
    const std::size_t e = cfg_.num_end_nodes;
    Observation o;
    o.reserve(observation_size());
    o.push_back(unit(u.data_size_bits / (cfg_.data_size_max_mb * kBitsPerMegabyte)));
    o.push_back(unit(u.cpu_hz / (cfg_.cpu_max_ghz * 1e9)));
    o.push_back(unit(u.workload_density / cfg_.workload_max));
    for (std::size_t j = 0; j < e; ++j) {
      o.push_back(unit(s.end_rate(agent, j) / rate_norm_));
    }
    o.push_back(unit(s.uplink_rate(agent) / rate_norm_));
    for (std::size_t t = 1; t < num_actions(); ++t) {
      const double cap = static_cast<double>(s.target_capacity(t));
      o.push_back(unit((cap - static_cast<double>(prev_occupancy_[t])) / cap));
    }
    for (std::size_t a = 0; a < num_actions(); ++a) {
      o.push_back(prev_actions_[agent] == a ? 1.0 : 0.0);
    }
    return o;
  }

  std::vector<double> global_state(
      const std::vector<Observation>& observations) const {
    std::vector<double> g;
    g.reserve(state_size());
    for (const auto& o : observations) g.insert(g.end(), o.begin(), o.end());
    const double n = static_cast<double>(num_agents());
    for (std::size_t t = 0; t < num_actions(); ++t) {
      g.push_back(static_cast<double>(prev_occupancy_[t]) / n);
    }
    return g;
  }

  const JointAction& previous_actions() const { return prev_actions_; }

 private:
  static double unit(double v) { return std::clamp(v, 0.0, 1.0); }

  double uniform(double lo, double hi) {
    if (lo == hi) return lo;
    return std::uniform_real_distribution<double>(lo, hi)(rng_);
  }

  double gaussian(double sigma) {
    if (sigma == 0.0) return 0.0;
    return std::normal_distribution<double>(0.0, sigma)(rng_);
  }

  void draw_shadowing() {
    for (double& v : shadowing_db_) v = gaussian(cfg_.channel.shadowing_sigma_db);
  }

  void refresh_gains() {
    SystemSnapshot& s = state_.snapshot;
    const std::size_t e = s.end_nodes.size();
    s.end_gains.resize(s.users.size() * e);
    for (std::size_t i = 0; i < s.users.size(); ++i) {
      for (std::size_t j = 0; j < e; ++j) {
        const double d = distance(s.users[i].position, s.end_nodes[j].position);
        s.end_gains[i * e + j] =
            channel_gain(d, s.channel, shadowing_db_[i * e + j]);
      }
    }
  }

  // Gaussian displacement reflected at the area boundary.
  void move_users() {
    const double a = cfg_.area_m;
    auto reflect = [a](double v) {
      if (v < 0.0) v = -v;
      if (v > a) v = 2.0 * a - v;
      return std::clamp(v, 0.0, a);
    };
    for (User& u : state_.snapshot.users) {
      u.position.x = reflect(u.position.x + gaussian(cfg_.mobility_sigma_m));
      u.position.y = reflect(u.position.y + gaussian(cfg_.mobility_sigma_m));
    }
  }

  EnvConfig cfg_;
  SystemState state_;
  std::mt19937_64 rng_;
  std::vector<double> shadowing_db_;
  JointAction prev_actions_;
  std::vector<std::size_t> prev_occupancy_;
  double rate_norm_ = 1.0;
};

// Per-step trajectory CSV: slot, actions, per-user delays, L_sum, reward.
inline void write_trajectory_header(std::ostream& os, std::size_t agents) {
  os << "slot";
  for (std::size_t i = 0; i < agents; ++i) os << ",action_" << i;
  for (std::size_t i = 0; i < agents; ++i) os << ",delay_" << i;
  os << ",l_sum,reward\n";
}

inline void write_trajectory_row(std::ostream& os, std::size_t slot,
                                 const StepResult& r) {
  os << slot;
  for (std::size_t a : r.executed_actions) os << ',' << a;
  for (double d : r.user_delays) os << ',' << d;
  os << ',' << r.l_sum << ',' << r.reward << '\n';
}

}  // namespace stin

#endif  // STIN_ENV_HPP_
