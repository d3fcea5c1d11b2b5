// fedpob: run federated prompt-optimization bandit experiments.
//
//   fedpob run <config.json> [--out DIR]
//   fedpob sweep <config.json> --param n_agents|D --values v1,v2,... --repeats R [--out DIR]
//   fedpob summarize <trace.csv>
//   fedpob serve <config.json> --bind host:port
//   fedpob agent <config.json> --connect host:port --id K [--out DIR]
//
// Output root: --out, else $FEDPOB_OUTPUT_DIR, else the config's output_dir.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fedpob/experiment.hpp"

namespace fs = std::filesystem;
using namespace fedpob;

namespace {

fs::path output_root(const std::string& flag, const ExperimentConfig& cfg) {
  if (!flag.empty()) return flag;
  if (const char* env = std::getenv("FEDPOB_OUTPUT_DIR"); env != nullptr && *env != '\0') return env;
  return cfg.output_dir;
}

int cmd_run(const std::string& config_path, const std::string& out_flag) {
  ExperimentConfig cfg = load_config(config_path);
  cfg.output_dir = output_root(out_flag, cfg).string();
  const Experiment ex = prepare_experiment(cfg);
  const RunResult res = run_experiment(ex);
  write_run_outputs(ex.config.output_dir, ex.config, res);
  const RunSummary s = summarize_trace(res.trace);
  std::printf("%zu trace rows, best score %.6f, %llu comm rounds -> %s\n", res.trace.size(), s.federation_best,
              static_cast<unsigned long long>(s.comm_rounds), ex.config.output_dir.c_str());
  return 0;
}

std::vector<double> parse_values(const std::string& text) {
  std::vector<double> out;
  for (const auto& field : csv::split(text, 0)) {
    if (field == "inf") {
      out.push_back(std::numeric_limits<double>::infinity());
      continue;
    }
    const auto v = csv::parse_double(field);
    if (!v) throw ConfigError("--values: '" + field + "' is not a number");
    out.push_back(*v);
  }
  return out;
}

int cmd_sweep(const std::string& config_path, const std::string& param, const std::string& values,
              std::size_t repeats, const std::string& out_flag) {
  ExperimentConfig cfg = load_config(config_path);
  const fs::path dir = output_root(out_flag, cfg);
  const SweepResult s = sweep(cfg, parse_sweep_param(param), parse_values(values), repeats);
  fs::create_directories(dir);
  {
    std::ofstream out(dir / "sweep.csv", std::ios::binary);
    write_sweep(out, s);
  }
  {
    std::ofstream out(dir / "sweep_runs.csv", std::ios::binary);
    write_sweep_runs(out, s);
  }
  write_text(dir / "config.echo.json", config_to_json(cfg).dump(2) + "\n");
  std::printf("%-10s %14s %12s %14s\n", to_string(s.param), "mean_best", "se_best", "comm_rounds");
  for (const auto& r : s.rows) {
    std::printf("%-10g %14.6f %12.6f %14.2f\n", r.value, r.best.mean, r.best.se, r.comm_rounds.mean);
  }
  return 0;
}

int cmd_summarize(const std::string& trace_path) {
  const RunSummary s = summarize_trace(load_trace(trace_path));
  std::printf("%8s %8s %18s %18s %14s %12s %14s\n", "agent", "rounds", "final_best", "final_score", "regret_sum",
              "comm_rounds", "bytes");
  for (const auto& a : s.agents) {
    std::printf("%8u %8llu %18.10g %18.10g %14.6g %12llu %14llu\n", a.agent_id,
                static_cast<unsigned long long>(a.rounds), a.final_best_score, a.final_score, a.regret_sum,
                static_cast<unsigned long long>(a.comm_rounds), static_cast<unsigned long long>(a.payload_bytes));
  }
  std::printf("%8s %8s %18.10g %18.10g %14.6g %12llu %14llu\n", "all", "", s.federation_best,
              s.federation_final_score, s.regret_sum, static_cast<unsigned long long>(s.comm_rounds),
              static_cast<unsigned long long>(s.payload_bytes));
  std::printf("mean per-agent final best: %.10g\n", s.mean_agent_best);
  return 0;
}

std::uint32_t dim_for(const ExperimentConfig& cfg) {
  if (cfg.env == EnvMode::synthetic) return static_cast<std::uint32_t>(cfg.d);
  return static_cast<std::uint32_t>(load_arm_table(cfg.arm_table_path).dim);
}

int cmd_serve(const std::string& config_path, const std::string& bind) {
  const ExperimentConfig cfg = load_config(config_path);
  const std::uint32_t d = dim_for(cfg);
  const ServerRun run = serve(cfg.params, d, net::parse_address(bind),
                              std::chrono::milliseconds(cfg.startup_timeout_ms));
  std::printf("server finished: %llu comm rounds\n", static_cast<unsigned long long>(run.comm_rounds));
  return 0;
}

int cmd_agent(const std::string& config_path, const std::string& addr, std::uint32_t id,
              const std::string& out_flag) {
  ExperimentConfig cfg = load_config(config_path);
  cfg.output_dir = output_root(out_flag, cfg).string();
  const Experiment ex = prepare_experiment(cfg);
  if (id >= ex.views.size()) throw ConfigError("--id must be below n_agents");
  const AgentRun run = connect(ex.config.params, ex.env, ex.views[id], net::parse_address(addr),
                               std::chrono::milliseconds(cfg.startup_timeout_ms));
  fs::create_directories(ex.config.output_dir);
  write_trace_file(fs::path(ex.config.output_dir) / ("trace.agent" + std::to_string(id) + ".csv"), run.trace);
  std::printf("agent %u finished: %zu rounds\n", id, run.trace.size());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated prompt-optimization bandits"};
  app.require_subcommand(1);

  std::string config, out, param, values, trace, bind, addr;
  std::size_t repeats = 1;
  std::uint32_t id = 0;

  auto* run = app.add_subcommand("run", "Run one experiment");
  run->add_option("config", config, "Experiment config (JSON)")->required();
  run->add_option("--out", out, "Output directory");

  auto* sw = app.add_subcommand("sweep", "Sweep n_agents or D over seeded repeats");
  sw->add_option("config", config, "Experiment config (JSON)")->required();
  sw->add_option("--param", param, "n_agents or D")->required();
  sw->add_option("--values", values, "Comma-separated values")->required();
  sw->add_option("--repeats", repeats, "Repeats per value")->default_val(1);
  sw->add_option("--out", out, "Output directory");

  auto* sum = app.add_subcommand("summarize", "Print per-agent summary of a trace");
  sum->add_option("trace", trace, "trace.csv")->required();

  auto* srv = app.add_subcommand("serve", "Run the server of a socket federation");
  srv->add_option("config", config, "Experiment config (JSON)")->required();
  srv->add_option("--bind", bind, "host:port")->required();

  auto* ag = app.add_subcommand("agent", "Run one agent of a socket federation");
  ag->add_option("config", config, "Experiment config (JSON)")->required();
  ag->add_option("--connect", addr, "Server host:port")->required();
  ag->add_option("--id", id, "Agent id")->required();
  ag->add_option("--out", out, "Output directory");

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) return cmd_run(config, out);
    if (sw->parsed()) return cmd_sweep(config, param, values, repeats, out);
    if (sum->parsed()) return cmd_summarize(trace);
    if (srv->parsed()) return cmd_serve(config, bind);
    if (ag->parsed()) return cmd_agent(config, addr, id, out);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const ParseError& e) {
    std::fprintf(stderr, "parse error: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 1;
}
