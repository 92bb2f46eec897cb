#ifndef STIN_DEPLOYMENT_HPP_
#define STIN_DEPLOYMENT_HPP_

// User-to-target assignment, constraint checking, even-split compute
// allocation, total system delay and the exhaustive optimal oracle.
//
// Target columns are laid out as: 0 = local device, 1..E = end-side nodes,
// E+1 = cloud via the satellite.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "stin/error.hpp"
#include "stin/model.hpp"

namespace stin {

inline constexpr std::size_t kLocalTarget = 0;

enum class Tier { kLocal, kEndSide, kCloud };

// One time slot of the physical system.
struct SystemSnapshot {
  std::vector<User> users;
  std::vector<EndSideNode> end_nodes;
  SatelliteCloudPath path;
  ChannelParams channel;
  // Row-major users x end_nodes linear gains for this slot.
  std::vector<double> end_gains;
  // One user-to-satellite gain per user.
  std::vector<double> satellite_gains;

  std::size_t num_users() const { return users.size(); }
  std::size_t num_end_nodes() const { return end_nodes.size(); }
  std::size_t num_targets() const { return end_nodes.size() + 2; }
  std::size_t cloud_target() const { return end_nodes.size() + 1; }

  Tier tier(std::size_t target) const {
    if (target == kLocalTarget) return Tier::kLocal;
    if (target == cloud_target()) return Tier::kCloud;
    return Tier::kEndSide;
  }

  double end_gain(std::size_t user, std::size_t node) const {
    return end_gains[user * end_nodes.size() + node];
  }

  // Hosting limit of a shared target; the cloud never binds.
  std::size_t target_capacity(std::size_t target) const {
    if (target == cloud_target()) return users.size();
    return end_nodes.at(target - 1).capacity;
  }

  double target_budget_hz(std::size_t target) const {
    if (target == cloud_target()) return path.cloud_cpu_hz;
    return end_nodes.at(target - 1).total_cpu_hz;
  }

  double end_rate(std::size_t user, std::size_t node) const {
    return shannon_rate(channel.bandwidth_hz, users[user].tx_power_w,
                        end_gain(user, node), channel.noise_psd_w_per_hz);
  }

  double uplink_rate(std::size_t user) const {
    return shannon_rate(path.w_is_hz, users[user].tx_power_w,
                        satellite_gains[user], channel.noise_psd_w_per_hz);
  }

  double backhaul_rate() const {
    return satellite_backhaul_rate(path, channel.noise_psd_w_per_hz);
  }

  void check() const {
    if (end_gains.size() != users.size() * end_nodes.size()) {
      throw StructuralError("end_gains must hold users x end_nodes entries");
    }
    if (satellite_gains.size() != users.size()) {
      throw StructuralError("satellite_gains must hold one entry per user");
    }
    for (const auto& u : users) u.check();
    for (const auto& n : end_nodes) n.check();
    path.check();
    channel.check();
  }
};

// Binary users x targets matrix. Entries are stored as integers so that
// non-binary input can still be represented and reported by validate().
class DeploymentMatrix {
 public:
  DeploymentMatrix() = default;
  DeploymentMatrix(std::size_t rows, std::size_t cols)
      : rows_(rows), cols_(cols), entries_(rows * cols, 0) {}

  static DeploymentMatrix from_assignment(
      const std::vector<std::size_t>& targets, std::size_t cols) {
    DeploymentMatrix m(targets.size(), cols);
    for (std::size_t i = 0; i < targets.size(); ++i) {
      if (targets[i] >= cols) throw StructuralError("target out of range");
      m(i, targets[i]) = 1;
    }
    return m;
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }

  int& operator()(std::size_t r, std::size_t c) {
    return entries_[r * cols_ + c];
  }
  int operator()(std::size_t r, std::size_t c) const {
    return entries_[r * cols_ + c];
  }

  int row_sum(std::size_t r) const {
    int s = 0;
    for (std::size_t c = 0; c < cols_; ++c) s += (*this)(r, c);
    return s;
  }
  int col_sum(std::size_t c) const {
    int s = 0;
    for (std::size_t r = 0; r < rows_; ++r) s += (*this)(r, c);
    return s;
  }

  // Column of the single 1 in each row. Requires a one-hot matrix.
  std::vector<std::size_t> assignment() const {
    std::vector<std::size_t> out(rows_);
    for (std::size_t r = 0; r < rows_; ++r) {
      if (row_sum(r) != 1) throw InvalidMatrixError("row is not one-hot");
      for (std::size_t c = 0; c < cols_; ++c) {
        if ((*this)(r, c) == 1) out[r] = c;
      }
    }
    return out;
  }

  bool operator==(const DeploymentMatrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<int> entries_;
};

enum class Constraint { kBinary, kSingleTarget, kCapacity, kComputeBudget };

inline const char* to_string(Constraint c) {
  switch (c) {
    case Constraint::kBinary: return "binary";
    case Constraint::kSingleTarget: return "single_target";
    case Constraint::kCapacity: return "capacity";
    case Constraint::kComputeBudget: return "compute_budget";
  }
  return "?";
}

struct Violation {
  Constraint constraint;
  std::size_t index;  // user row for binary/single_target, target otherwise
  double magnitude;   // offending value (entry, row sum, count, or hz)
};

inline std::string describe(const Violation& v) {
  std::ostringstream os;
  os << to_string(v.constraint) << " at " << v.index << " (" << v.magnitude
     << ")";
  return os.str();
}

struct AllocationPlan {
  std::vector<std::size_t> target;   // per user
  std::vector<double> allocated_hz;  // per user, f_ij
  std::vector<std::size_t> occupancy;  // per target column
};

namespace detail {

inline void check_shape(const DeploymentMatrix& m, const SystemSnapshot& s) {
  if (m.rows() != s.num_users() || m.cols() != s.num_targets()) {
    std::ostringstream os;
    os << "matrix is " << m.rows() << "x" << m.cols() << ", snapshot needs "
       << s.num_users() << "x" << s.num_targets();
    throw StructuralError(os.str());
  }
}

inline AllocationPlan even_split(const std::vector<std::size_t>& targets,
                                 const SystemSnapshot& s) {
  AllocationPlan plan;
  plan.target = targets;
  plan.occupancy.assign(s.num_targets(), 0);
  for (std::size_t t : targets) ++plan.occupancy[t];
  plan.allocated_hz.resize(targets.size());
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const std::size_t t = targets[i];
    plan.allocated_hz[i] =
        t == kLocalTarget
            ? s.users[i].cpu_hz
            : s.target_budget_hz(t) / static_cast<double>(plan.occupancy[t]);
  }
  return plan;
}

}  // namespace detail

// Empty result iff every constraint holds.
inline std::vector<Violation> validate(const DeploymentMatrix& m,
                                       const SystemSnapshot& s) {
  detail::check_shape(m, s);
  std::vector<Violation> out;
  bool rows_ok = true;
  for (std::size_t r = 0; r < m.rows(); ++r) {
    for (std::size_t c = 0; c < m.cols(); ++c) {
      const int v = m(r, c);
      if (v != 0 && v != 1) {
        out.push_back({Constraint::kBinary, r, static_cast<double>(v)});
        rows_ok = false;
      }
    }
    const int sum = m.row_sum(r);
    if (sum != 1) {
      out.push_back({Constraint::kSingleTarget, r, static_cast<double>(sum)});
      rows_ok = false;
    }
  }
  for (std::size_t c = 1; c < m.cols(); ++c) {
    const int count = m.col_sum(c);
    if (count > static_cast<int>(s.target_capacity(c))) {
      out.push_back({Constraint::kCapacity, c, static_cast<double>(count)});
    }
  }
  // Compute budgets can only be evaluated on a well-formed assignment.
  if (rows_ok) {
    const auto plan = detail::even_split(m.assignment(), s);
    std::vector<double> used(m.cols(), 0.0);
    for (std::size_t i = 0; i < plan.target.size(); ++i) {
      used[plan.target[i]] += plan.allocated_hz[i];
    }
    for (std::size_t c = 1; c < m.cols(); ++c) {
      const double budget = s.target_budget_hz(c);
      if (used[c] > budget * (1.0 + 1e-12)) {
        out.push_back({Constraint::kComputeBudget, c, used[c]});
      }
    }
  }
  return out;
}

inline AllocationPlan allocate(const DeploymentMatrix& m,
                               const SystemSnapshot& s) {
  const auto violations = validate(m, s);
  if (!violations.empty()) {
    throw InvalidMatrixError("cannot allocate: " + describe(violations[0]));
  }
  return detail::even_split(m.assignment(), s);
}

// Delay of user i's twin on `target` with `allocated_hz` of compute.
inline double target_delay(const SystemSnapshot& s, std::size_t i,
                           std::size_t target, double allocated_hz) {
  const User& u = s.users[i];
  switch (s.tier(target)) {
    case Tier::kLocal:
      return local_delay(u);
    case Tier::kEndSide:
      return end_side_delay_at_rate(u, s.end_rate(i, target - 1),
                                    allocated_hz);
    case Tier::kCloud:
      return cloud_delay_at_rates(u, s.uplink_rate(i), s.backhaul_rate(),
                                  s.path.d_is_m, s.path.d_sc_m,
                                  s.path.light_speed, allocated_hz);
  }
  return 0.0;
}

inline std::vector<double> user_delays(const AllocationPlan& plan,
                                       const SystemSnapshot& s) {
  std::vector<double> out(plan.target.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = target_delay(s, i, plan.target[i], plan.allocated_hz[i]);
  }
  return out;
}

inline double total_delay(const DeploymentMatrix& m, const SystemSnapshot& s) {
  const auto d = user_delays(allocate(m, s), s);
  double sum = 0.0;
  for (double v : d) sum += v;
  return sum;
}

struct OracleResult {
  DeploymentMatrix matrix;
  std::vector<std::size_t> assignment;
  double delay = 0.0;
};

inline constexpr std::uint64_t kDefaultEnumerationCap = 10'000'000;

namespace detail {

// Per-user delay terms that do not depend on co-located users.
struct DelayTable {
  std::size_t users = 0;
  std::size_t targets = 0;
  std::vector<double> fixed;     // users x targets, transfer (+ local) part
  std::vector<double> cycles;    // per user workload
  std::vector<double> budget;    // per target
  std::vector<std::size_t> cap;  // per target
};

inline DelayTable make_delay_table(const SystemSnapshot& s) {
  DelayTable t;
  t.users = s.num_users();
  t.targets = s.num_targets();
  t.fixed.assign(t.users * t.targets, 0.0);
  t.cycles.resize(t.users);
  t.budget.assign(t.targets, 0.0);
  t.cap.assign(t.targets, 0);
  for (std::size_t c = 1; c < t.targets; ++c) {
    t.budget[c] = s.target_budget_hz(c);
    t.cap[c] = s.target_capacity(c);
  }
  const double backhaul = s.backhaul_rate();
  for (std::size_t i = 0; i < t.users; ++i) {
    const User& u = s.users[i];
    t.cycles[i] = u.workload_cycles();
    t.fixed[i * t.targets] = local_delay(u);
    for (std::size_t j = 0; j < s.num_end_nodes(); ++j) {
      const double r = s.end_rate(i, j);
      if (!(r > 0.0)) throw UnreachableError("unreachable node: zero rate");
      t.fixed[i * t.targets + 1 + j] = u.data_size_bits / r;
    }
    const double up = s.uplink_rate(i);
    if (!(up > 0.0)) throw UnreachableError("satellite unreachable");
    t.fixed[i * t.targets + s.cloud_target()] =
        u.data_size_bits / up + u.data_size_bits / backhaul +
        s.path.propagation_delay();
  }
  return t;
}

// Scans assignments whose first digit lies in [first_lo, first_hi).
inline void enumerate_range(const DelayTable& t, std::size_t first_lo,
                            std::size_t first_hi, double& best_delay,
                            std::vector<std::size_t>& best) {
  const std::size_t n = t.users;
  std::vector<std::size_t> digits(n, 0);
  std::vector<std::size_t> occ(t.targets, 0);
  digits[0] = first_lo;
  while (digits[0] < first_hi) {
    std::fill(occ.begin(), occ.end(), 0);
    for (std::size_t i = 0; i < n; ++i) ++occ[digits[i]];
    bool feasible = true;
    for (std::size_t c = 1; c < t.targets; ++c) {
      if (occ[c] > t.cap[c]) feasible = false;
    }
    if (feasible) {
      // Summing per user keeps the value identical to total_delay().
      double total = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t d = digits[i];
        double v = t.fixed[i * t.targets + d];
        if (d != kLocalTarget) {
          v += t.cycles[i] / (t.budget[d] / static_cast<double>(occ[d]));
        }
        total += v;
      }
      if (total < best_delay || (total == best_delay && digits < best)) {
        best_delay = total;
        best = digits;
      }
    }
    // Odometer increment, last user fastest.
    std::size_t pos = n;
    while (pos > 0) {
      --pos;
      if (++digits[pos] < t.targets || pos == 0) break;
      digits[pos] = 0;
    }
  }
}

}  // namespace detail

// Exhaustive search over every feasible assignment. Ties go to the
// lexicographically smallest assignment vector. `workers` > 1 splits the
// search on the first user's target; the result matches sequential search.
inline OracleResult brute_force_optimal(
    const SystemSnapshot& s, std::uint64_t cap = kDefaultEnumerationCap,
    unsigned workers = 1) {
  const std::size_t n = s.num_users();
  const std::size_t k = s.num_targets();
  if (n == 0) throw StructuralError("snapshot has no users");
  double space = std::pow(static_cast<double>(k), static_cast<double>(n));
  if (space > static_cast<double>(cap)) {
    std::ostringstream os;
    os << "instance too large: " << k << "^" << n << " assignments exceeds cap "
       << cap;
    throw InstanceTooLargeError(os.str());
  }
  const auto table = detail::make_delay_table(s);
  workers = std::max(1u, std::min<unsigned>(workers, static_cast<unsigned>(k)));

  std::vector<double> best_delay(workers,
                                 std::numeric_limits<double>::infinity());
  std::vector<std::vector<std::size_t>> best(workers);
  if (workers == 1) {
    detail::enumerate_range(table, 0, k, best_delay[0], best[0]);
  } else {
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < workers; ++w) {
      const std::size_t lo = k * w / workers;
      const std::size_t hi = k * (w + 1) / workers;
      pool.emplace_back([&, w, lo, hi] {
        detail::enumerate_range(table, lo, hi, best_delay[w], best[w]);
      });
    }
    for (auto& th : pool) th.join();
  }
  std::size_t arg = workers;
  for (std::size_t w = 0; w < workers; ++w) {
    if (best[w].empty()) continue;
    if (arg == workers || best_delay[w] < best_delay[arg] ||
        (best_delay[w] == best_delay[arg] && best[w] < best[arg])) {
      arg = w;
    }
  }
  if (arg == workers) throw InvalidMatrixError("no feasible assignment");
  OracleResult r;
  r.assignment = best[arg];
  r.delay = best_delay[arg];
  r.matrix = DeploymentMatrix::from_assignment(r.assignment, k);
  return r;
}

// JSON forms used by the oracle CLI.

inline void to_json(nlohmann::json& j, const Position& p) {
  j = nlohmann::json{{"x", p.x}, {"y", p.y}};
}
inline void from_json(const nlohmann::json& j, Position& p) {
  j.at("x").get_to(p.x);
  j.at("y").get_to(p.y);
}

inline void to_json(nlohmann::json& j, const User& u) {
  j = nlohmann::json{{"id", u.id},
                     {"position", u.position},
                     {"data_size_bits", u.data_size_bits},
                     {"cpu_hz", u.cpu_hz},
                     {"workload_density", u.workload_density},
                     {"tx_power_w", u.tx_power_w}};
}
inline void from_json(const nlohmann::json& j, User& u) {
  j.at("id").get_to(u.id);
  j.at("position").get_to(u.position);
  j.at("data_size_bits").get_to(u.data_size_bits);
  j.at("cpu_hz").get_to(u.cpu_hz);
  j.at("workload_density").get_to(u.workload_density);
  j.at("tx_power_w").get_to(u.tx_power_w);
}

inline void to_json(nlohmann::json& j, const EndSideNode& n) {
  j = nlohmann::json{{"id", n.id},
                     {"position", n.position},
                     {"total_cpu_hz", n.total_cpu_hz},
                     {"capacity", n.capacity}};
}
inline void from_json(const nlohmann::json& j, EndSideNode& n) {
  j.at("id").get_to(n.id);
  j.at("position").get_to(n.position);
  j.at("total_cpu_hz").get_to(n.total_cpu_hz);
  j.at("capacity").get_to(n.capacity);
}

inline void to_json(nlohmann::json& j, const SatelliteCloudPath& p) {
  j = nlohmann::json{{"d_is_m", p.d_is_m},       {"d_sc_m", p.d_sc_m},
                     {"w_is_hz", p.w_is_hz},     {"w_sc_hz", p.w_sc_hz},
                     {"p_sc_w", p.p_sc_w},       {"g_is", p.g_is},
                     {"g_sc", p.g_sc},           {"cloud_cpu_hz", p.cloud_cpu_hz},
                     {"light_speed", p.light_speed},
                     {"altitude_m", p.altitude_m}};
}
inline void from_json(const nlohmann::json& j, SatelliteCloudPath& p) {
  j.at("d_is_m").get_to(p.d_is_m);
  j.at("d_sc_m").get_to(p.d_sc_m);
  j.at("w_is_hz").get_to(p.w_is_hz);
  j.at("w_sc_hz").get_to(p.w_sc_hz);
  j.at("p_sc_w").get_to(p.p_sc_w);
  j.at("g_is").get_to(p.g_is);
  j.at("g_sc").get_to(p.g_sc);
  j.at("cloud_cpu_hz").get_to(p.cloud_cpu_hz);
  j.at("light_speed").get_to(p.light_speed);
  j.at("altitude_m").get_to(p.altitude_m);
}

inline void to_json(nlohmann::json& j, const ChannelParams& c) {
  j = nlohmann::json{{"bandwidth_hz", c.bandwidth_hz},
                     {"noise_psd_w_per_hz", c.noise_psd_w_per_hz},
                     {"pathloss_exponent", c.pathloss_exponent},
                     {"ref_gain_db", c.ref_gain_db},
                     {"shadowing_sigma_db", c.shadowing_sigma_db}};
}
inline void from_json(const nlohmann::json& j, ChannelParams& c) {
  j.at("bandwidth_hz").get_to(c.bandwidth_hz);
  j.at("noise_psd_w_per_hz").get_to(c.noise_psd_w_per_hz);
  j.at("pathloss_exponent").get_to(c.pathloss_exponent);
  j.at("ref_gain_db").get_to(c.ref_gain_db);
  j.at("shadowing_sigma_db").get_to(c.shadowing_sigma_db);
}

inline void to_json(nlohmann::json& j, const SystemSnapshot& s) {
  j = nlohmann::json{{"users", s.users},
                     {"end_nodes", s.end_nodes},
                     {"path", s.path},
                     {"channel", s.channel},
                     {"end_gains", s.end_gains},
                     {"satellite_gains", s.satellite_gains}};
}
inline void from_json(const nlohmann::json& j, SystemSnapshot& s) {
  j.at("users").get_to(s.users);
  j.at("end_nodes").get_to(s.end_nodes);
  j.at("path").get_to(s.path);
  j.at("channel").get_to(s.channel);
  j.at("end_gains").get_to(s.end_gains);
  j.at("satellite_gains").get_to(s.satellite_gains);
  s.check();
}

// Matrix is written as {"rows": I, "cols": K, "entries": [[...], ...]}.
inline void to_json(nlohmann::json& j, const DeploymentMatrix& m) {
  auto rows = nlohmann::json::array();
  for (std::size_t r = 0; r < m.rows(); ++r) {
    auto row = nlohmann::json::array();
    for (std::size_t c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  j = nlohmann::json{{"rows", m.rows()}, {"cols", m.cols()}, {"entries", rows}};
}
inline void from_json(const nlohmann::json& j, DeploymentMatrix& m) {
  const auto rows = j.at("rows").get<std::size_t>();
  const auto cols = j.at("cols").get<std::size_t>();
  const auto& e = j.at("entries");
  if (e.size() != rows) throw StructuralError("matrix row count mismatch");
  m = DeploymentMatrix(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    if (e[r].size() != cols) throw StructuralError("matrix col count mismatch");
    for (std::size_t c = 0; c < cols; ++c) m(r, c) = e[r][c].get<int>();
  }
}

}  // namespace stin

#endif  // STIN_DEPLOYMENT_HPP_
