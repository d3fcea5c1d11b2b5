#pragma once

// Config -> environment -> federation run -> files, plus parameter sweeps.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "fedpob/config.hpp"
#include "fedpob/env.hpp"
#include "fedpob/runtime.hpp"
#include "fedpob/trace.hpp"

namespace fedpob {

struct Experiment {
  ExperimentConfig config;  // d resolved
  Environment env;
  std::vector<AgentArmView> views;
};

inline Experiment prepare_experiment(ExperimentConfig cfg) {
  validate_config(cfg);
  Environment env = [&] {
    if (cfg.env == EnvMode::synthetic) {
      return Environment::synthetic(make_synthetic_instance(cfg.K, cfg.d, cfg.world_seed(), cfg.noise_sigma));
    }
    ArmTable table = load_arm_table(cfg.arm_table_path);
    if (cfg.d != 0 && cfg.d != table.dim) {
      throw DimensionMismatch("config d=" + std::to_string(cfg.d) + " but arm table has d=" + std::to_string(table.dim));
    }
    cfg.d = table.dim;
    return Environment::cached(std::move(table));
  }();
  auto views = partition_arms(env.table(), cfg.params.n_agents, cfg.shared_fraction, cfg.params.seed);
  return Experiment{std::move(cfg), std::move(env), std::move(views)};
}

inline RunResult run_experiment(const Experiment& ex, const AgentHooks& hooks = {}) {
  return run_federation(ex.config.params, ex.env, ex.views, ex.config.transport, hooks);
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

inline void write_trace_file(const std::filesystem::path& path, const std::vector<TraceRecord>& trace) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  write_trace(out, trace);
}

// trace.csv, summary.csv and config.echo.json under `dir`.
inline void write_run_outputs(const std::filesystem::path& dir, const ExperimentConfig& cfg, const RunResult& result) {
  std::filesystem::create_directories(dir);
  write_trace_file(dir / "trace.csv", result.trace);
  {
    std::ofstream out(dir / "summary.csv", std::ios::binary);
    if (!out) throw Error("cannot write summary.csv");
    write_summary(out, summarize_trace(result.trace));
  }
  write_text(dir / "config.echo.json", config_to_json(cfg).dump(2) + "\n");
}

enum class SweepParam { n_agents, D };

inline SweepParam parse_sweep_param(const std::string& name) {
  if (name == "n_agents") return SweepParam::n_agents;
  if (name == "D") return SweepParam::D;
  throw ConfigError("sweep parameter must be n_agents or D, got '" + name + "'");
}

inline const char* to_string(SweepParam p) { return p == SweepParam::n_agents ? "n_agents" : "D"; }

struct SweepRun {
  double value = 0.0;
  std::size_t repeat = 0;
  std::uint64_t seed = 0;
  RunSummary summary;
};

struct Stat {
  double mean = 0.0;
  double se = 0.0;  // sample standard deviation / sqrt(n); 0 for n = 1
};

inline Stat mean_and_se(const std::vector<double>& xs) {
  Stat s;
  if (xs.empty()) return s;
  for (double x : xs) s.mean += x;
  s.mean /= static_cast<double>(xs.size());
  if (xs.size() > 1) {
    double ss = 0.0;
    for (double x : xs) ss += (x - s.mean) * (x - s.mean);
    s.se = std::sqrt(ss / static_cast<double>(xs.size() - 1)) / std::sqrt(static_cast<double>(xs.size()));
  }
  return s;
}

struct SweepRow {
  double value = 0.0;
  std::size_t repeats = 0;
  std::uint64_t seed_first = 0;
  std::uint64_t seed_last = 0;
  Stat best;          // max over agents of final best_score_so_far
  Stat agent_best;    // mean over agents of final best_score_so_far
  Stat final_score;   // max over agents of the last round's score
  Stat agent_final;   // mean over agents of the last round's score
  Stat comm_rounds;
};

struct SweepResult {
  SweepParam param = SweepParam::D;
  std::vector<SweepRun> runs;  // sorted by (value, repeat)
  std::vector<SweepRow> rows;  // one per value, in the given order
};

inline ExperimentConfig with_value(ExperimentConfig cfg, SweepParam param, double value) {
  if (param == SweepParam::n_agents) {
    if (!(value >= 1.0) || value != std::floor(value)) throw ConfigError("n_agents sweep values must be positive integers");
    cfg.params.n_agents = static_cast<std::size_t>(value);
  } else {
    cfg.params.D = value;
  }
  return cfg;
}

// Repeat r of every value runs with master seed base + r.
inline SweepResult sweep(const ExperimentConfig& base, SweepParam param, const std::vector<double>& values,
                         std::size_t repeats) {
  if (repeats == 0) throw ConfigError("repeats must be >= 1");
  if (values.empty()) throw ConfigError("sweep needs at least one value");
  SweepResult out;
  out.param = param;
  for (double v : values) {
    SweepRow row;
    row.value = v;
    row.repeats = repeats;
    std::vector<double> best, agent_best, final_score, agent_final, comm;
    for (std::size_t r = 0; r < repeats; ++r) {
      ExperimentConfig cfg = with_value(base, param, v);
      cfg.params.seed = base.params.seed + r;
      const Experiment ex = prepare_experiment(cfg);
      const RunResult res = run_experiment(ex);
      SweepRun run{v, r, cfg.params.seed, summarize_trace(res.trace)};
      best.push_back(run.summary.federation_best);
      agent_best.push_back(run.summary.mean_agent_best);
      final_score.push_back(run.summary.federation_final_score);
      agent_final.push_back(run.summary.mean_final_score);
      comm.push_back(static_cast<double>(run.summary.comm_rounds));
      out.runs.push_back(std::move(run));
    }
    row.seed_first = base.params.seed;
    row.seed_last = base.params.seed + repeats - 1;
    row.best = mean_and_se(best);
    row.agent_best = mean_and_se(agent_best);
    row.final_score = mean_and_se(final_score);
    row.agent_final = mean_and_se(agent_final);
    row.comm_rounds = mean_and_se(comm);
    out.rows.push_back(row);
  }
  std::stable_sort(out.runs.begin(), out.runs.end(), [](const SweepRun& a, const SweepRun& b) {
    return a.value != b.value ? a.value < b.value : a.repeat < b.repeat;
  });
  return out;
}

inline void write_sweep(std::ostream& out, const SweepResult& s) {
  out << "param,value,repeats,seed_first,seed_last,mean_best,se_best,mean_agent_best,se_agent_best,"
         "mean_final_score,se_final_score,mean_agent_final_score,se_agent_final_score,mean_comm_rounds\n";
  for (const auto& r : s.rows) {
    out << to_string(s.param) << ',' << csv::format_double(r.value) << ',' << r.repeats << ',' << r.seed_first << ','
        << r.seed_last << ',' << csv::format_double(r.best.mean) << ',' << csv::format_double(r.best.se) << ','
        << csv::format_double(r.agent_best.mean) << ',' << csv::format_double(r.agent_best.se) << ','
        << csv::format_double(r.final_score.mean) << ',' << csv::format_double(r.final_score.se) << ','
        << csv::format_double(r.agent_final.mean) << ',' << csv::format_double(r.agent_final.se) << ','
        << csv::format_double(r.comm_rounds.mean) << '\n';
  }
}

inline void write_sweep_runs(std::ostream& out, const SweepResult& s) {
  out << "param,value,repeat,seed,best,mean_agent_best,final_score,mean_agent_final_score,comm_rounds,payload_bytes\n";
  for (const auto& r : s.runs) {
    out << to_string(s.param) << ',' << csv::format_double(r.value) << ',' << r.repeat << ',' << r.seed << ','
        << csv::format_double(r.summary.federation_best) << ',' << csv::format_double(r.summary.mean_agent_best)
        << ',' << csv::format_double(r.summary.federation_final_score) << ','
        << csv::format_double(r.summary.mean_final_score) << ',' << r.summary.comm_rounds << ','
        << r.summary.payload_bytes << '\n';
  }
}

}  // namespace fedpob
