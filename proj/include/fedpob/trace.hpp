#pragma once

// Per-(round, agent) experiment log and the summaries derived from it.
// Column order is fixed; plotting scripts read these files by name.

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <istream>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "fedpob/arm.hpp"
#include "fedpob/env.hpp"
#include "fedpob/errors.hpp"

namespace fedpob {

struct TraceRecord {
  std::uint64_t round = 0;
  std::uint32_t agent_id = 0;
  ArmId arm_id = 0;
  std::optional<ArmId> arm_id_2;  // preference runs only
  std::optional<int> outcome;     // preference runs only
  // Score-feedback runs: the observed (possibly noisy) score. Preference
  // runs: the score of the exploitation arm.
  double score = 0.0;
  double best_score_so_far = 0.0;
  double instant_regret = 0.0;
  std::uint64_t comm_rounds = 0;    // cumulative
  std::uint64_t payload_bytes = 0;  // cumulative, sent + received

  bool operator==(const TraceRecord&) const = default;
};

inline constexpr const char* kTraceHeader =
    "round,agent_id,arm_id,arm_id_2,outcome,score,best_score_so_far,instant_regret,comm_rounds,payload_bytes";

inline void sort_trace(std::vector<TraceRecord>& trace) {
  std::sort(trace.begin(), trace.end(), [](const TraceRecord& a, const TraceRecord& b) {
    return a.round != b.round ? a.round < b.round : a.agent_id < b.agent_id;
  });
}

inline void write_trace_row(std::ostream& out, const TraceRecord& r) {
  out << r.round << ',' << r.agent_id << ',' << r.arm_id << ',';
  if (r.arm_id_2) out << *r.arm_id_2;
  out << ',';
  if (r.outcome) out << *r.outcome;
  out << ',' << csv::format_double(r.score) << ',' << csv::format_double(r.best_score_so_far) << ','
      << csv::format_double(r.instant_regret) << ',' << r.comm_rounds << ',' << r.payload_bytes << '\n';
}

inline void write_trace(std::ostream& out, const std::vector<TraceRecord>& trace) {
  out << kTraceHeader << '\n';
  for (const auto& r : trace) write_trace_row(out, r);
}

inline std::vector<TraceRecord> read_trace(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw ParseError("trace: empty file");
  csv::strip_cr(line);
  if (line != kTraceHeader) throw ParseError("trace: unexpected header", 1);

  auto need_u64 = [](const std::string& f, std::size_t row, std::size_t col) {
    const auto v = csv::parse_int<std::uint64_t>(f);
    if (!v) throw ParseError("trace: expected an unsigned integer, got '" + f + "'", row, col);
    return *v;
  };
  auto need_double = [](const std::string& f, std::size_t row, std::size_t col) {
    const auto v = csv::parse_double(f);
    if (!v) throw ParseError("trace: expected a number, got '" + f + "'", row, col);
    return *v;
  };

  std::vector<TraceRecord> out;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    csv::strip_cr(line);
    if (line.empty()) continue;
    const auto f = csv::split(line, row);
    if (f.size() != 10) throw ParseError("trace: expected 10 fields, got " + std::to_string(f.size()), row);
    TraceRecord r;
    r.round = need_u64(f[0], row, 0);
    r.agent_id = static_cast<std::uint32_t>(need_u64(f[1], row, 1));
    r.arm_id = static_cast<ArmId>(need_u64(f[2], row, 2));
    if (!f[3].empty()) r.arm_id_2 = static_cast<ArmId>(need_u64(f[3], row, 3));
    if (!f[4].empty()) {
      const auto o = need_u64(f[4], row, 4);
      if (o > 1) throw ParseError("trace: outcome must be 0 or 1", row, 4);
      r.outcome = static_cast<int>(o);
    }
    r.score = need_double(f[5], row, 5);
    r.best_score_so_far = need_double(f[6], row, 6);
    r.instant_regret = need_double(f[7], row, 7);
    r.comm_rounds = need_u64(f[8], row, 8);
    r.payload_bytes = need_u64(f[9], row, 9);
    out.push_back(r);
  }
  if (out.empty()) throw ParseError("trace: no records");
  return out;
}

inline std::vector<TraceRecord> load_trace(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("trace: cannot open " + path);
  return read_trace(in);
}

struct AgentSummary {
  std::uint32_t agent_id = 0;
  std::uint64_t rounds = 0;
  double final_best_score = 0.0;
  double final_score = 0.0;
  double regret_sum = 0.0;
  std::uint64_t comm_rounds = 0;
  std::uint64_t payload_bytes = 0;
};

struct RunSummary {
  std::vector<AgentSummary> agents;  // ascending agent_id
  // Across agents: max and mean of final_best_score / final_score, total
  // regret and bytes, max comm rounds.
  double federation_best = 0.0;
  double federation_final_score = 0.0;
  double mean_agent_best = 0.0;
  double mean_final_score = 0.0;
  double regret_sum = 0.0;
  std::uint64_t comm_rounds = 0;
  std::uint64_t payload_bytes = 0;
};

inline RunSummary summarize_trace(const std::vector<TraceRecord>& trace) {
  if (trace.empty()) throw ParseError("trace: no records");
  std::map<std::uint32_t, AgentSummary> by_agent;
  for (const auto& r : trace) {
    auto [it, fresh] = by_agent.try_emplace(r.agent_id);
    auto& s = it->second;
    s.agent_id = r.agent_id;
    if (fresh || r.round >= s.rounds) {
      s.rounds = r.round;
      s.final_best_score = r.best_score_so_far;
      s.final_score = r.score;
      s.comm_rounds = r.comm_rounds;
      s.payload_bytes = r.payload_bytes;
    }
    s.regret_sum += r.instant_regret;
  }
  RunSummary out;
  out.federation_best = -std::numeric_limits<double>::infinity();
  out.federation_final_score = -std::numeric_limits<double>::infinity();
  for (auto& [id, s] : by_agent) {
    out.federation_best = std::max(out.federation_best, s.final_best_score);
    out.federation_final_score = std::max(out.federation_final_score, s.final_score);
    out.mean_agent_best += s.final_best_score;
    out.mean_final_score += s.final_score;
    out.regret_sum += s.regret_sum;
    out.comm_rounds = std::max(out.comm_rounds, s.comm_rounds);
    out.payload_bytes += s.payload_bytes;
    out.agents.push_back(s);
  }
  out.mean_agent_best /= static_cast<double>(out.agents.size());
  out.mean_final_score /= static_cast<double>(out.agents.size());
  return out;
}

inline constexpr const char* kSummaryHeader =
    "agent_id,rounds,final_best_score,final_score,regret_sum,comm_rounds,payload_bytes";

// One row per agent, then a row with agent_id "all" holding the
// across-agent aggregates (max best score, max final score, summed regret,
// max comm rounds, summed bytes).
inline void write_summary(std::ostream& out, const RunSummary& s) {
  out << kSummaryHeader << '\n';
  std::uint64_t rounds = 0;
  for (const auto& a : s.agents) {
    rounds = std::max(rounds, a.rounds);
    out << a.agent_id << ',' << a.rounds << ',' << csv::format_double(a.final_best_score) << ','
        << csv::format_double(a.final_score) << ',' << csv::format_double(a.regret_sum) << ','
        << a.comm_rounds << ',' << a.payload_bytes << '\n';
  }
  out << "all," << rounds << ',' << csv::format_double(s.federation_best) << ','
      << csv::format_double(s.federation_final_score) << ',' << csv::format_double(s.regret_sum) << ','
      << s.comm_rounds << ',' << s.payload_bytes << '\n';
}

}  // namespace fedpob
