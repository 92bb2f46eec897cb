#ifndef STIN_EXPERIMENT_HPP_
#define STIN_EXPERIMENT_HPP_

// Experiment configuration, orchestration and CSV emission: training runs,
// greedy evaluation, parameter sweeps and oracle comparisons.

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <cinttypes>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <future>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "stin/deployment.hpp"
#include "stin/env.hpp"
#include "stin/error.hpp"
#include "stin/marl.hpp"

namespace stin {

enum class Scheme { kProposed, kIql, kQmix, kRd };

inline const char* to_string(Scheme s) {
  switch (s) {
    case Scheme::kProposed: return "proposed";
    case Scheme::kIql: return "iql";
    case Scheme::kQmix: return "qmix";
    case Scheme::kRd: return "rd";
  }
  return "?";
}

inline Scheme parse_scheme(const std::string& name) {
  if (name == "proposed" || name == "vdn") return Scheme::kProposed;
  if (name == "iql") return Scheme::kIql;
  if (name == "qmix") return Scheme::kQmix;
  if (name == "rd") return Scheme::kRd;
  throw RangeError("unknown scheme '" + name + "'");
}

inline std::optional<MixerKind> mixer_for(Scheme s) {
  switch (s) {
    case Scheme::kProposed: return MixerKind::kVdnSum;
    case Scheme::kIql: return MixerKind::kNoneIql;
    case Scheme::kQmix: return MixerKind::kQmixMonotonic;
    case Scheme::kRd: return std::nullopt;
  }
  return std::nullopt;
}

struct SweepSpec {
  std::string parameter = "num_users";  // or data_size_mb
  std::vector<double> values{18, 20, 22, 24};
  std::vector<Scheme> schemes{Scheme::kProposed, Scheme::kIql, Scheme::kQmix,
                              Scheme::kRd};
  std::size_t episodes = 0;  // 0 keeps the trainer budget

  void check() const {
    if (parameter != "num_users" && parameter != "data_size_mb") {
      throw RangeError("sweep parameter must be num_users or data_size_mb");
    }
    if (values.empty()) throw RangeError("sweep needs at least one value");
    if (schemes.empty()) throw RangeError("sweep needs at least one scheme");
    for (double v : values) {
      if (parameter == "num_users" && !(v >= 1.0 && v == std::floor(v))) {
        throw RangeError("num_users sweep values must be positive integers");
      }
      if (parameter == "data_size_mb" && !(v > 0.0)) {
        throw RangeError("data_size_mb sweep values must be > 0");
      }
    }
  }
};

struct ExperimentConfig {
  EnvConfig env;
  TrainerConfig trainer;
  Scheme scheme = Scheme::kProposed;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  std::string output_dir = "out";
  std::size_t eval_episodes = 20;
  std::size_t oracle_instances = 30;
  std::size_t oracle_random_episodes = 20;
  unsigned jobs = 1;
  SweepSpec sweep;

  void check() const {
    env.check();
    trainer.check();
    sweep.check();
    if (seeds.empty()) throw RangeError("seeds must not be empty");
    if (eval_episodes < 1) throw RangeError("eval_episodes must be >= 1");
    if (jobs < 1) throw RangeError("jobs must be >= 1");
  }
};

namespace detail {

inline std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(s);
  while (std::getline(is, cur, ',')) {
    const auto b = cur.find_first_not_of(" \t");
    const auto e = cur.find_last_not_of(" \t");
    if (b != std::string::npos) out.push_back(cur.substr(b, e - b + 1));
  }
  return out;
}

inline double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ParseError(key + ": expected a number, got '" + v + "'");
  }
}

inline long long to_int(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const long long d = std::stoll(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ParseError(key + ": expected an integer, got '" + v + "'");
  }
}

inline std::size_t to_count(const std::string& key, const std::string& v) {
  const long long d = to_int(key, v);
  if (d < 0) throw RangeError(key + " must be non-negative, got " + v);
  return static_cast<std::size_t>(d);
}

inline bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ParseError(key + ": expected true or false, got '" + v + "'");
}

using Setter = std::function<void(ExperimentConfig&, const std::string&)>;
using Getter = std::function<std::string(const ExperimentConfig&)>;

struct Key {
  Setter set;
  Getter get;
};

#define STIN_DOUBLE(path, field)                                            \
  {path,                                                                    \
   {[](ExperimentConfig& c, const std::string& v) {                         \
      c.field = to_double(path, v);                                         \
    },                                                                      \
    [](const ExperimentConfig& c) { return fmt(c.field); }}}
#define STIN_COUNT(path, field)                                             \
  {path,                                                                    \
   {[](ExperimentConfig& c, const std::string& v) {                         \
      c.field = to_count(path, v);                                          \
    },                                                                      \
    [](const ExperimentConfig& c) { return std::to_string(c.field); }}}

// Every accepted key, "section.name". Anything else is rejected.
inline const std::map<std::string, Key>& key_table() {
  static const std::map<std::string, Key> table = {
      STIN_COUNT("env.num_users", env.num_users),
      STIN_COUNT("env.num_end_nodes", env.num_end_nodes),
      STIN_DOUBLE("env.area_m", env.area_m),
      STIN_COUNT("env.episode_len", env.episode_len),
      STIN_DOUBLE("env.alpha", env.alpha),
      STIN_DOUBLE("env.beta", env.beta),
      STIN_DOUBLE("env.phi", env.phi),
      STIN_DOUBLE("env.gamma", env.gamma),
      STIN_DOUBLE("env.mobility_sigma_m", env.mobility_sigma_m),
      STIN_DOUBLE("env.data_size_min_mb", env.data_size_min_mb),
      STIN_DOUBLE("env.data_size_max_mb", env.data_size_max_mb),
      STIN_DOUBLE("env.workload_min", env.workload_min),
      STIN_DOUBLE("env.workload_max", env.workload_max),
      STIN_DOUBLE("env.cpu_min_ghz", env.cpu_min_ghz),
      STIN_DOUBLE("env.cpu_max_ghz", env.cpu_max_ghz),
      STIN_DOUBLE("env.tx_power_w", env.tx_power_w),
      STIN_DOUBLE("env.end_node_cpu_ghz", env.end_node_cpu_ghz),
      STIN_COUNT("env.end_node_capacity", env.end_node_capacity),
      {"env.static_channel",
       {[](ExperimentConfig& c, const std::string& v) {
          c.env.static_channel = to_bool("env.static_channel", v);
        },
        [](const ExperimentConfig& c) {
          return std::string(c.env.static_channel ? "true" : "false");
        }}},
      STIN_DOUBLE("channel.bandwidth_hz", env.channel.bandwidth_hz),
      {"channel.noise_dbm_per_hz",
       {[](ExperimentConfig& c, const std::string& v) {
          c.env.channel.noise_psd_w_per_hz =
              dbm_per_hz_to_w_per_hz(to_double("channel.noise_dbm_per_hz", v));
        },
        [](const ExperimentConfig& c) {
          return fmt(10.0 * std::log10(c.env.channel.noise_psd_w_per_hz) +
                     30.0);
        }}},
      STIN_DOUBLE("channel.pathloss_exponent", env.channel.pathloss_exponent),
      STIN_DOUBLE("channel.ref_gain_db", env.channel.ref_gain_db),
      STIN_DOUBLE("channel.shadowing_sigma_db", env.channel.shadowing_sigma_db),
      STIN_DOUBLE("satellite.d_is_m", env.path.d_is_m),
      STIN_DOUBLE("satellite.d_sc_m", env.path.d_sc_m),
      STIN_DOUBLE("satellite.w_is_hz", env.path.w_is_hz),
      STIN_DOUBLE("satellite.w_sc_hz", env.path.w_sc_hz),
      STIN_DOUBLE("satellite.p_sc_w", env.path.p_sc_w),
      STIN_DOUBLE("satellite.g_is", env.path.g_is),
      STIN_DOUBLE("satellite.g_sc", env.path.g_sc),
      STIN_DOUBLE("satellite.cloud_cpu_hz", env.path.cloud_cpu_hz),
      STIN_DOUBLE("satellite.altitude_m", env.path.altitude_m),
      STIN_COUNT("trainer.episodes", trainer.episodes),
      STIN_COUNT("trainer.batch", trainer.batch_size),
      STIN_COUNT("trainer.buffer_capacity", trainer.buffer_capacity),
      STIN_DOUBLE("trainer.epsilon_start", trainer.epsilon_start),
      STIN_DOUBLE("trainer.epsilon_end", trainer.epsilon_end),
      STIN_COUNT("trainer.epsilon_anneal_episodes",
                 trainer.epsilon_anneal_episodes),
      STIN_DOUBLE("trainer.tau", trainer.tau),
      STIN_DOUBLE("trainer.learning_rate", trainer.learning_rate),
      STIN_DOUBLE("trainer.rms_decay", trainer.rms_decay),
      STIN_DOUBLE("trainer.rms_epsilon", trainer.rms_epsilon),
      STIN_DOUBLE("trainer.grad_clip", trainer.grad_clip),
      STIN_COUNT("trainer.hidden_size", trainer.hidden_size),
      STIN_COUNT("trainer.mixer_embed", trainer.mixer_embed),
      STIN_COUNT("trainer.updates_per_episode", trainer.updates_per_episode),
      {"experiment.scheme",
       {[](ExperimentConfig& c, const std::string& v) {
          c.scheme = parse_scheme(v);
        },
        [](const ExperimentConfig& c) {
          return std::string(to_string(c.scheme));
        }}},
      {"experiment.seeds",
       {[](ExperimentConfig& c, const std::string& v) {
          c.seeds.clear();
          for (const auto& s : split_list(v)) {
            const long long d = to_int("experiment.seeds", s);
            if (d < 0) throw RangeError("experiment.seeds must be >= 0");
            c.seeds.push_back(static_cast<std::uint64_t>(d));
          }
        },
        [](const ExperimentConfig& c) {
          std::string out;
          for (std::size_t i = 0; i < c.seeds.size(); ++i) {
            out += (i ? "," : "") + std::to_string(c.seeds[i]);
          }
          return out;
        }}},
      {"experiment.output_dir",
       {[](ExperimentConfig& c, const std::string& v) { c.output_dir = v; },
        [](const ExperimentConfig& c) { return c.output_dir; }}},
      STIN_COUNT("experiment.eval_episodes", eval_episodes),
      STIN_COUNT("experiment.oracle_instances", oracle_instances),
      STIN_COUNT("experiment.oracle_random_episodes", oracle_random_episodes),
      {"experiment.jobs",
       {[](ExperimentConfig& c, const std::string& v) {
          c.jobs = static_cast<unsigned>(to_count("experiment.jobs", v));
        },
        [](const ExperimentConfig& c) { return std::to_string(c.jobs); }}},
      {"sweep.parameter",
       {[](ExperimentConfig& c, const std::string& v) {
          c.sweep.parameter = v;
        },
        [](const ExperimentConfig& c) { return c.sweep.parameter; }}},
      {"sweep.values",
       {[](ExperimentConfig& c, const std::string& v) {
          c.sweep.values.clear();
          for (const auto& s : split_list(v)) {
            c.sweep.values.push_back(to_double("sweep.values", s));
          }
        },
        [](const ExperimentConfig& c) {
          std::string out;
          for (std::size_t i = 0; i < c.sweep.values.size(); ++i) {
            out += (i ? "," : "") + fmt(c.sweep.values[i]);
          }
          return out;
        }}},
      {"sweep.schemes",
       {[](ExperimentConfig& c, const std::string& v) {
          c.sweep.schemes.clear();
          for (const auto& s : split_list(v)) {
            c.sweep.schemes.push_back(parse_scheme(s));
          }
        },
        [](const ExperimentConfig& c) {
          std::string out;
          for (std::size_t i = 0; i < c.sweep.schemes.size(); ++i) {
            out += std::string(i ? "," : "") + to_string(c.sweep.schemes[i]);
          }
          return out;
        }}},
      STIN_COUNT("sweep.episodes", sweep.episodes),
  };
  return table;
}

#undef STIN_DOUBLE
#undef STIN_COUNT

}  // namespace detail

// Applies one "section.key" override.
inline void set_config_value(ExperimentConfig& cfg, const std::string& key,
                             const std::string& value) {
  const auto& table = detail::key_table();
  const auto it = table.find(key);
  if (it == table.end()) throw UnknownKeyError("unknown config key '" + key + "'");
  it->second.set(cfg, value);
}

// Sectioned key = value text (INI). Missing keys keep their defaults.
inline ExperimentConfig parse_config(std::istream& is,
                                     const std::string& origin = "<config>") {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  try {
    pt::ini_parser::read_ini(is, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ParseError(origin + ": " + e.what());
  }
  ExperimentConfig cfg;
  for (const auto& [section, body] : tree) {
    if (body.empty()) {
      throw UnknownKeyError("key '" + section + "' outside of a section");
    }
    for (const auto& [key, value] : body) {
      set_config_value(cfg, section + "." + key, value.data());
    }
  }
  cfg.check();
  return cfg;
}

inline ExperimentConfig parse_config_text(const std::string& text) {
  std::istringstream is(text);
  return parse_config(is);
}

inline ExperimentConfig load_config(const std::string& path) {
  if (!std::filesystem::exists(path)) {
    throw MissingFileError("config file not found: " + path);
  }
  std::ifstream is(path);
  if (!is) throw MissingFileError("cannot open config file: " + path);
  return parse_config(is, path);
}

// Canonical resolved form; also the input of config_hash().
inline std::string config_to_text(const ExperimentConfig& cfg) {
  std::string out;
  std::string section;
  for (const auto& [key, entry] : detail::key_table()) {
    const auto dot = key.find('.');
    const std::string sec = key.substr(0, dot);
    if (sec != section) {
      out += (section.empty() ? "" : "\n") + ("[" + sec + "]\n");
      section = sec;
    }
    out += key.substr(dot + 1) + " = " + entry.get(cfg) + "\n";
  }
  return out;
}

// FNV-1a over the canonical text, as 16 hex digits.
inline std::string config_hash(const ExperimentConfig& cfg) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : config_to_text(cfg)) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016" PRIx64, h);
  return buf;
}

namespace detail {

inline std::ofstream open_csv(const std::filesystem::path& path,
                              const std::string& hash,
                              const std::string& header) {
  std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw MissingFileError("cannot write " + path.string());
  os << "# config_hash=" << hash << '\n' << header << '\n';
  return os;
}

// Runs fn(i) for i in [0, n) on up to `jobs` threads; results keep order.
template <typename T, typename Fn>
std::vector<T> run_jobs(std::size_t n, unsigned jobs, Fn fn) {
  std::vector<T> out(n);
  if (jobs <= 1) {
    for (std::size_t i = 0; i < n; ++i) out[i] = fn(i);
    return out;
  }
  std::size_t next = 0;
  while (next < n) {
    std::vector<std::future<T>> batch;
    const std::size_t end = std::min(n, next + jobs);
    for (std::size_t i = next; i < end; ++i) {
      batch.push_back(std::async(std::launch::async, fn, i));
    }
    for (std::size_t i = next; i < end; ++i) out[i] = batch[i - next].get();
    next = end;
  }
  return out;
}

}  // namespace detail

struct SeedRun {
  std::uint64_t seed = 0;
  std::vector<EpisodeMetrics> history;
  std::optional<NetworkLayout> layout;  // empty for rd
  std::string error;                    // non-empty when the run failed
};

struct TrainingReport {
  Scheme scheme = Scheme::kProposed;
  std::vector<SeedRun> runs;
  std::vector<std::filesystem::path> files;
};

// Random-policy rollouts standing in for training, so rd produces the same
// per-episode metrics shape without touching any network.
inline std::vector<EpisodeMetrics> random_history(const EnvConfig& env_cfg,
                                                  std::size_t episodes,
                                                  std::uint64_t seed) {
  Environment env(env_cfg);
  RandomPolicy policy;
  std::mt19937_64 rng(derive_seed(seed, kExploreStream));
  std::vector<EpisodeMetrics> out;
  for (std::size_t e = 0; e < episodes; ++e) {
    auto obs = env.reset(derive_seed(seed, kTrainEnvStream, e));
    const Rollout r = play_episode(env, std::move(obs), policy, rng);
    out.push_back({e, r.ret, r.mean_delay, 0.0, 1.0});
  }
  return out;
}

inline SeedRun train_one(const ExperimentConfig& cfg, Scheme scheme,
                         std::uint64_t seed) {
  SeedRun run;
  run.seed = seed;
  try {
    const auto kind = mixer_for(scheme);
    if (!kind) {
      run.history = random_history(cfg.env, cfg.trainer.episodes, seed);
    } else {
      TrainerConfig t = cfg.trainer;
      t.seed = seed;
      TrainResult r = train(cfg.env, t, *kind);
      run.history = std::move(r.history);
      run.layout = std::move(r.layout);
    }
  } catch (const Error& e) {
    run.error = e.kind() + ": " + e.what();
  }
  return run;
}

// Per-seed metrics CSVs, an across-seed aggregate, and one checkpoint per
// trained seed. rd writes no checkpoints.
inline TrainingReport run_training(const ExperimentConfig& cfg,
                                   const std::filesystem::path& out_dir) {
  cfg.check();
  const std::string hash = config_hash(cfg);
  const std::string name = to_string(cfg.scheme);
  TrainingReport report;
  report.scheme = cfg.scheme;
  report.runs = detail::run_jobs<SeedRun>(
      cfg.seeds.size(), cfg.jobs,
      [&](std::size_t i) { return train_one(cfg, cfg.scheme, cfg.seeds[i]); });

  std::vector<const SeedRun*> ok;
  for (const SeedRun& run : report.runs) {
    const auto path =
        out_dir / ("train_" + name + "_seed" + std::to_string(run.seed) + ".csv");
    auto os = detail::open_csv(path, hash, "episode,return,mean_delay,loss,epsilon");
    for (const auto& m : run.history) {
      os << m.episode << ',' << detail::fmt(m.ret) << ','
         << detail::fmt(m.mean_delay) << ',' << detail::fmt(m.loss) << ','
         << detail::fmt(m.epsilon) << '\n';
    }
    if (!run.error.empty()) os << "# status=failed " << run.error << '\n';
    report.files.push_back(path);
    if (run.layout) {
      const auto ckpt =
          out_dir / (name + "_seed" + std::to_string(run.seed) + ".params.json");
      save_checkpoint(ckpt.string(), run.layout->params, hash);
      report.files.push_back(ckpt);
    }
    if (run.error.empty()) ok.push_back(&run);
  }

  const auto agg_path = out_dir / ("train_" + name + "_mean.csv");
  auto os = detail::open_csv(agg_path, hash,
                             "episode,mean_return,mean_delay,std_return,std_delay,seeds");
  const std::size_t episodes = ok.empty() ? 0 : ok[0]->history.size();
  for (std::size_t e = 0; e < episodes; ++e) {
    std::vector<double> rets, delays;
    for (const auto* run : ok) {
      rets.push_back(run->history[e].ret);
      delays.push_back(run->history[e].mean_delay);
    }
    os << e << ',' << detail::fmt(mean_of(rets)) << ','
       << detail::fmt(mean_of(delays)) << ',' << detail::fmt(stddev_of(rets))
       << ',' << detail::fmt(stddev_of(delays)) << ',' << ok.size() << '\n';
  }
  if (ok.size() != report.runs.size()) {
    os << "# status=partial " << ok.size() << "/" << report.runs.size()
       << " seeds succeeded\n";
  }
  report.files.push_back(agg_path);
  for (const SeedRun& run : report.runs) {
    if (!run.error.empty()) {
      throw DivergenceError("training seed " + std::to_string(run.seed) +
                            " failed (" + run.error + "); partial outputs in " +
                            out_dir.string());
    }
  }
  return report;
}

// Evaluation seed stream kept apart from the training instances.
inline std::uint64_t eval_seed_for(std::uint64_t seed) {
  return derive_seed(seed, kEvalEnvStream, 0xE7A1);
}

inline EvalMetrics evaluate_scheme(const ExperimentConfig& cfg, Scheme scheme,
                                   const NetworkLayout* layout,
                                   std::uint64_t seed) {
  if (scheme == Scheme::kRd) {
    RandomPolicy p;
    return evaluate(p, cfg.env, cfg.eval_episodes, eval_seed_for(seed));
  }
  if (!layout) throw ConfigError("trained scheme needs network parameters");
  return evaluate(*layout, cfg.env, cfg.eval_episodes, eval_seed_for(seed));
}

struct EvaluationRow {
  std::uint64_t seed = 0;
  EvalMetrics metrics;
};

inline void write_evaluation(const std::filesystem::path& path,
                             const std::string& hash,
                             const std::vector<EvaluationRow>& rows) {
  auto os = detail::open_csv(
      path, hash,
      "seed,episodes,mean_return,std_return,mean_delay,std_delay,frac_local,"
      "frac_end,frac_cloud");
  for (const auto& r : rows) {
    const auto& m = r.metrics;
    os << r.seed << ',' << m.episodes << ',' << detail::fmt(m.mean_return)
       << ',' << detail::fmt(m.std_return) << ',' << detail::fmt(m.mean_delay)
       << ',' << detail::fmt(m.std_delay) << ',' << detail::fmt(m.frac_local)
       << ',' << detail::fmt(m.frac_end) << ',' << detail::fmt(m.frac_cloud)
       << '\n';
  }
}

// Layout for `scheme` filled from a checkpoint file.
inline NetworkLayout load_layout(const ExperimentConfig& cfg, Scheme scheme,
                                 const std::string& checkpoint) {
  const auto kind = mixer_for(scheme);
  if (!kind) throw ConfigError("rd has no network parameters");
  NetworkLayout layout = make_layout(*kind, cfg.env, cfg.trainer);
  load_checkpoint(checkpoint, layout.params);
  return layout;
}

// One greedy episode written slot by slot as trajectory CSV.
inline void write_policy_trajectory(Policy& policy, const EnvConfig& env_cfg,
                                    std::uint64_t seed,
                                    const std::filesystem::path& path,
                                    const std::string& hash) {
  std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw MissingFileError("cannot write " + path.string());
  os << "# config_hash=" << hash << '\n';
  Environment env(env_cfg);
  std::mt19937_64 rng(derive_seed(seed, kEvalPolicyStream));
  auto obs = env.reset(derive_seed(eval_seed_for(seed), kEvalEnvStream, 0));
  policy.begin_episode(env);
  write_trajectory_header(os, env.num_agents());
  for (std::size_t slot = 0;; ++slot) {
    const JointAction a = policy.act(env, obs, rng);
    StepResult r = env.step(a);
    write_trajectory_row(os, slot, r);
    if (r.done) break;
    obs = std::move(r.observations);
  }
}

struct SweepRow {
  double value = 0.0;
  Scheme scheme = Scheme::kProposed;
  double mean_delay = 0.0;
  double std_delay = 0.0;  // across seeds
  std::vector<double> seed_delays;
  std::string status = "ok";
};

inline ExperimentConfig sweep_cell_config(const ExperimentConfig& base,
                                          const SweepSpec& spec,
                                          double value) {
  ExperimentConfig c = base;
  if (spec.parameter == "num_users") {
    c.env.num_users = static_cast<std::size_t>(value);
  } else {
    c.env.data_size_min_mb = value;
    c.env.data_size_max_mb = value;
  }
  if (spec.episodes > 0) {
    c.trainer.episodes = spec.episodes;
    if (c.trainer.epsilon_anneal_episodes > spec.episodes) {
      c.trainer.epsilon_anneal_episodes = spec.episodes / 2;
    }
  }
  c.env.check();
  return c;
}

// One row per value x scheme: greedy evaluation delay averaged over seeds.
// A failing cell is reported and the sweep continues.
inline std::vector<SweepRow> run_sweep(const SweepSpec& spec,
                                       const ExperimentConfig& base) {
  spec.check();
  struct Cell {
    double value;
    Scheme scheme;
  };
  std::vector<Cell> cells;
  for (double v : spec.values) {
    for (Scheme s : spec.schemes) cells.push_back({v, s});
  }
  const std::size_t n_seeds = base.seeds.size();
  struct Result {
    double delay = 0.0;
    std::string error;
  };
  auto results = detail::run_jobs<Result>(
      cells.size() * n_seeds, base.jobs, [&](std::size_t job) {
        const Cell& cell = cells[job / n_seeds];
        const std::uint64_t seed = base.seeds[job % n_seeds];
        Result r;
        try {
          const ExperimentConfig c = sweep_cell_config(base, spec, cell.value);
          SeedRun run;
          if (cell.scheme != Scheme::kRd) {
            run = train_one(c, cell.scheme, seed);
            if (!run.error.empty()) {
              r.error = run.error;
              return r;
            }
          }
          const NetworkLayout* layout = run.layout ? &*run.layout : nullptr;
          r.delay = evaluate_scheme(c, cell.scheme, layout, seed).mean_delay;
        } catch (const Error& e) {
          r.error = e.kind() + ": " + e.what();
        }
        return r;
      });
  std::vector<SweepRow> rows;
  for (std::size_t c = 0; c < cells.size(); ++c) {
    SweepRow row;
    row.value = cells[c].value;
    row.scheme = cells[c].scheme;
    for (std::size_t s = 0; s < n_seeds; ++s) {
      const Result& r = results[c * n_seeds + s];
      if (!r.error.empty()) {
        row.status = "failed " + r.error;
        row.seed_delays.clear();
        break;
      }
      row.seed_delays.push_back(r.delay);
    }
    if (row.status == "ok") {
      row.mean_delay = mean_of(row.seed_delays);
      row.std_delay = stddev_of(row.seed_delays);
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

inline void write_sweep(const std::filesystem::path& path,
                        const std::string& hash, const SweepSpec& spec,
                        const std::vector<SweepRow>& rows) {
  auto os = detail::open_csv(path, hash,
                             spec.parameter + ",scheme,mean_delay,std_delay,seeds,status");
  for (const auto& r : rows) {
    os << detail::fmt(r.value) << ',' << to_string(r.scheme) << ','
       << detail::fmt(r.mean_delay) << ',' << detail::fmt(r.std_delay) << ','
       << r.seed_delays.size() << ',' << r.status << '\n';
  }
}

struct OracleInstance {
  std::uint64_t instance_seed = 0;
  double optimal_delay = 0.0;
  double trained_delay = 0.0;
  double random_delay = 0.0;
};

struct OracleReport {
  std::vector<OracleInstance> instances;
  double mean_optimal = 0.0;
  double mean_trained = 0.0;
  double mean_random = 0.0;
  double trained_gap = 0.0;  // (mean trained - mean optimal) / mean optimal
  double random_gap = 0.0;
  double mean_trained_gap = 0.0;  // mean of per-instance gaps
  double mean_random_gap = 0.0;
};

// Policy delay on one fixed instance, averaged over `episodes` rollouts.
inline double instance_delay(Policy& policy, const EnvConfig& env_cfg,
                             std::uint64_t instance_seed, std::size_t episodes,
                             std::uint64_t seed) {
  Environment env(env_cfg);
  std::mt19937_64 rng(derive_seed(seed, kEvalPolicyStream));
  double total = 0.0;
  for (std::size_t e = 0; e < episodes; ++e) {
    auto obs = env.reset(instance_seed);
    total += play_episode(env, std::move(obs), policy, rng).mean_delay;
  }
  return total / static_cast<double>(episodes);
}

inline std::uint64_t oracle_instance_seed(std::uint64_t seed, std::size_t i) {
  return derive_seed(seed, kEvalEnvStream, 0x0AC1E000 + i);
}

// Per instance: trains the configured scheme on that static instance, then
// compares its greedy delay and the random policy's against the exhaustive
// optimum. `policy_override` replaces training (used for oracle-vs-oracle).
inline OracleReport run_oracle_compare(
    const ExperimentConfig& base, std::size_t instance_count,
    std::uint64_t seed, bool use_oracle_policy = false) {
  ExperimentConfig cfg = base;
  cfg.env.static_channel = true;
  cfg.check();
  if (instance_count == 0) throw RangeError("need at least one instance");
  const auto kind = mixer_for(cfg.scheme);
  auto rows = detail::run_jobs<OracleInstance>(
      instance_count, cfg.jobs, [&](std::size_t i) {
        OracleInstance row;
        row.instance_seed = oracle_instance_seed(seed, i);
        Environment env(cfg.env);
        env.reset(row.instance_seed);
        const OracleResult best =
            brute_force_optimal(env.state().snapshot);
        row.optimal_delay = best.delay;

        if (use_oracle_policy) {
          FixedPolicy p(best.assignment);
          row.trained_delay = instance_delay(p, cfg.env, row.instance_seed, 1, seed);
        } else if (kind) {
          TrainerConfig t = cfg.trainer;
          t.seed = derive_seed(seed, kInitStream, i);
          t.env_seed = row.instance_seed;
          const TrainResult r = train(cfg.env, t, *kind);
          NetworkPolicy p(r.layout.params, r.layout.agent, 0.0);
          row.trained_delay = instance_delay(p, cfg.env, row.instance_seed, 1, seed);
        } else {
          RandomPolicy p;
          row.trained_delay = instance_delay(p, cfg.env, row.instance_seed,
                                             cfg.oracle_random_episodes, seed);
        }
        RandomPolicy rp;
        row.random_delay = instance_delay(rp, cfg.env, row.instance_seed,
                                          cfg.oracle_random_episodes, seed);
        return row;
      });
  OracleReport rep;
  rep.instances = std::move(rows);
  std::vector<double> opt, tr, rd, gt, gr;
  for (const auto& r : rep.instances) {
    opt.push_back(r.optimal_delay);
    tr.push_back(r.trained_delay);
    rd.push_back(r.random_delay);
    gt.push_back((r.trained_delay - r.optimal_delay) / r.optimal_delay);
    gr.push_back((r.random_delay - r.optimal_delay) / r.optimal_delay);
  }
  rep.mean_optimal = mean_of(opt);
  rep.mean_trained = mean_of(tr);
  rep.mean_random = mean_of(rd);
  rep.trained_gap = (rep.mean_trained - rep.mean_optimal) / rep.mean_optimal;
  rep.random_gap = (rep.mean_random - rep.mean_optimal) / rep.mean_optimal;
  rep.mean_trained_gap = mean_of(gt);
  rep.mean_random_gap = mean_of(gr);
  return rep;
}

inline void write_oracle(const std::filesystem::path& path,
                         const std::string& hash, const OracleReport& rep) {
  auto os = detail::open_csv(
      path, hash,
      "instance,instance_seed,optimal_delay,trained_delay,random_delay,"
      "trained_gap,random_gap");
  for (std::size_t i = 0; i < rep.instances.size(); ++i) {
    const auto& r = rep.instances[i];
    os << i << ',' << r.instance_seed << ',' << detail::fmt(r.optimal_delay)
       << ',' << detail::fmt(r.trained_delay) << ','
       << detail::fmt(r.random_delay) << ','
       << detail::fmt((r.trained_delay - r.optimal_delay) / r.optimal_delay)
       << ','
       << detail::fmt((r.random_delay - r.optimal_delay) / r.optimal_delay)
       << '\n';
  }
  os << "mean,," << detail::fmt(rep.mean_optimal) << ','
     << detail::fmt(rep.mean_trained) << ',' << detail::fmt(rep.mean_random)
     << ',' << detail::fmt(rep.trained_gap) << ','
     << detail::fmt(rep.random_gap) << '\n';
}

}  // namespace stin

#endif  // STIN_EXPERIMENT_HPP_
