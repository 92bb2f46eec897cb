// Command-line driver: train, evaluate, sweep and oracle subcommands.
//
// Every subcommand accepts --config, --seed, --out and --scheme. Failures
// print one JSON object {"error": <kind>, "message": <text>} on stderr and
// exit with status 1 (2 for command-line usage errors).

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "stin/deployment.hpp"
#include "stin/experiment.hpp"

namespace fs = std::filesystem;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string scheme;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "INI config file (defaults if omitted)");
  cmd->add_option("--seed", c.seed, "run a single seed instead of the config list");
  cmd->add_option("--out", c.out, "output directory");
  cmd->add_option("--scheme", c.scheme, "proposed | iql | qmix | rd");
  cmd->add_option("--set", c.overrides, "section.key=value override (repeatable)");
}

stin::ExperimentConfig resolve(const Common& c) {
  stin::ExperimentConfig cfg =
      c.config.empty() ? stin::ExperimentConfig{} : stin::load_config(c.config);
  for (const std::string& kv : c.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) {
      throw stin::ParseError("override must be section.key=value: " + kv);
    }
    stin::set_config_value(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (c.seed) cfg.seeds = {*c.seed};
  if (!c.scheme.empty()) cfg.scheme = stin::parse_scheme(c.scheme);
  if (!c.out.empty()) cfg.output_dir = c.out;
  cfg.check();
  return cfg;
}

void print_json(const nlohmann::json& j) { std::cout << j.dump() << '\n'; }

int cmd_train(const Common& c) {
  const auto cfg = resolve(c);
  const auto report = stin::run_training(cfg, cfg.output_dir);
  nlohmann::json files = nlohmann::json::array();
  for (const auto& f : report.files) files.push_back(f.string());
  print_json({{"status", "ok"},
              {"scheme", stin::to_string(cfg.scheme)},
              {"config_hash", stin::config_hash(cfg)},
              {"files", files}});
  return 0;
}

int cmd_evaluate(const Common& c, const std::string& checkpoint,
                 bool trajectory) {
  const auto cfg = resolve(c);
  const std::string hash = stin::config_hash(cfg);
  const fs::path out = cfg.output_dir;
  std::optional<stin::NetworkLayout> layout;
  if (cfg.scheme != stin::Scheme::kRd) {
    if (checkpoint.empty()) {
      throw stin::ConfigError("--checkpoint is required for trained schemes");
    }
    layout = stin::load_layout(cfg, cfg.scheme, checkpoint);
  }
  std::vector<stin::EvaluationRow> rows;
  for (std::uint64_t seed : cfg.seeds) {
    rows.push_back(
        {seed, stin::evaluate_scheme(cfg, cfg.scheme,
                                     layout ? &*layout : nullptr, seed)});
  }
  const std::string name = stin::to_string(cfg.scheme);
  const fs::path csv = out / ("eval_" + name + ".csv");
  stin::write_evaluation(csv, hash, rows);
  nlohmann::json files = {csv.string()};
  if (trajectory) {
    const fs::path traj = out / ("trajectory_" + name + ".csv");
    stin::RandomPolicy random;
    std::optional<stin::NetworkPolicy> net;
    if (layout) net.emplace(layout->params, layout->agent, 0.0);
    stin::Policy& policy = net ? static_cast<stin::Policy&>(*net) : random;
    stin::write_policy_trajectory(policy, cfg.env, cfg.seeds.front(), traj,
                                  hash);
    files.push_back(traj.string());
  }
  std::vector<double> delays;
  for (const auto& r : rows) delays.push_back(r.metrics.mean_delay);
  print_json({{"status", "ok"},
              {"scheme", name},
              {"mean_delay", stin::mean_of(delays)},
              {"files", files}});
  return 0;
}

int cmd_sweep(const Common& c) {
  const auto cfg = resolve(c);
  const auto rows = stin::run_sweep(cfg.sweep, cfg);
  const fs::path csv =
      fs::path(cfg.output_dir) / ("sweep_" + cfg.sweep.parameter + ".csv");
  stin::write_sweep(csv, stin::config_hash(cfg), cfg.sweep, rows);
  std::size_t failed = 0;
  for (const auto& r : rows) failed += r.status == "ok" ? 0 : 1;
  print_json({{"status", failed ? "partial" : "ok"},
              {"rows", rows.size()},
              {"failed", failed},
              {"files", {csv.string()}}});
  return 0;
}

// With --snapshot the exhaustive optimum of that snapshot is written as a
// matrix JSON; otherwise trained-versus-optimal comparison over instances.
int cmd_oracle(const Common& c, const std::string& snapshot_path,
               std::optional<std::size_t> instances) {
  const auto cfg = resolve(c);
  const fs::path out = cfg.output_dir;
  if (!snapshot_path.empty()) {
    std::ifstream is(snapshot_path);
    if (!is) throw stin::MissingFileError("snapshot not found: " + snapshot_path);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(is);
    } catch (const nlohmann::json::exception& e) {
      throw stin::ParseError(std::string("snapshot: ") + e.what());
    }
    stin::SystemSnapshot snap;
    try {
      snap = j.get<stin::SystemSnapshot>();
    } catch (const nlohmann::json::exception& e) {
      throw stin::ParseError(std::string("snapshot: ") + e.what());
    }
    const auto best = stin::brute_force_optimal(snap);
    fs::create_directories(out);
    const fs::path file = out / "oracle_matrix.json";
    std::ofstream os(file);
    nlohmann::json res = {{"matrix", best.matrix},
                          {"assignment", best.assignment},
                          {"delay", best.delay}};
    os << res.dump(2) << '\n';
    print_json({{"status", "ok"}, {"delay", best.delay}, {"files", {file.string()}}});
    return 0;
  }
  const std::size_t n = instances.value_or(cfg.oracle_instances);
  const auto rep = stin::run_oracle_compare(cfg, n, cfg.seeds.front());
  const fs::path csv =
      out / ("oracle_" + std::string(stin::to_string(cfg.scheme)) + ".csv");
  stin::write_oracle(csv, stin::config_hash(cfg), rep);
  print_json({{"status", "ok"},
              {"mean_optimal", rep.mean_optimal},
              {"trained_gap", rep.trained_gap},
              {"random_gap", rep.random_gap},
              {"files", {csv.string()}}});
  return 0;
}

void print_error(const std::string& kind, const std::string& message) {
  std::cerr << nlohmann::json{{"error", kind}, {"message", message}}.dump()
            << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Digital-twin placement simulator and MARL trainer"};
  app.require_subcommand(1);

  Common train_opts, eval_opts, sweep_opts, oracle_opts;
  auto* train = app.add_subcommand("train", "train a scheme over the seed list");
  add_common(train, train_opts);

  auto* eval = app.add_subcommand("evaluate", "greedy evaluation of a checkpoint");
  add_common(eval, eval_opts);
  std::string checkpoint;
  bool trajectory = false;
  eval->add_option("--checkpoint", checkpoint, "parameter checkpoint JSON");
  eval->add_flag("--trajectory", trajectory, "also dump a per-slot trajectory CSV");

  auto* sweep = app.add_subcommand("sweep", "value x scheme delay comparison");
  add_common(sweep, sweep_opts);

  auto* oracle = app.add_subcommand("oracle", "exhaustive optimum comparison");
  add_common(oracle, oracle_opts);
  std::string snapshot;
  std::optional<std::size_t> instances;
  oracle->add_option("--snapshot", snapshot, "solve one snapshot JSON");
  oracle->add_option("--instances", instances, "number of random instances");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    print_error("usage", e.what());
    return 2;
  }

  try {
    if (*train) return cmd_train(train_opts);
    if (*eval) return cmd_evaluate(eval_opts, checkpoint, trajectory);
    if (*sweep) return cmd_sweep(sweep_opts);
    if (*oracle) return cmd_oracle(oracle_opts, snapshot, instances);
  } catch (const stin::Error& e) {
    print_error(e.kind(), e.what());
    return 1;
  } catch (const std::exception& e) {
    print_error("internal", e.what());
    return 1;
  }
  return 1;
}
