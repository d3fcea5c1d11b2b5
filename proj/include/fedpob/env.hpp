#pragma once

// Feedback environments: a table of arms with known scores, either replayed
// as-is (cached mode) or treated as a noisy linear world (synthetic mode).

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <limits>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "fedpob/arm.hpp"
#include "fedpob/csv.hpp"
#include "fedpob/errors.hpp"
#include "fedpob/linalg.hpp"
#include "fedpob/pref_engine.hpp"
#include "fedpob/rng.hpp"

namespace fedpob {

struct ArmRecord {
  ArmId id = 0;
  std::string text;
  Vector embedding;
  double score = 0.0;
};

struct ArmTable {
  std::vector<ArmRecord> arms;  // arms[i].id == i
  Eigen::Index dim = 0;

  std::size_t size() const { return arms.size(); }

  const ArmRecord& at(ArmId id) const {
    if (id >= arms.size()) throw UnknownArm("unknown arm id " + std::to_string(id));
    return arms[id];
  }

  std::vector<Arm> arms_for(std::span<const ArmId> ids) const {
    std::vector<Arm> out;
    out.reserve(ids.size());
    for (ArmId id : ids) out.push_back(Arm{id, at(id).embedding});
    return out;
  }

  double max_score() const {
    double best = -std::numeric_limits<double>::infinity();
    for (const auto& a : arms) best = std::max(best, a.score);
    return best;
  }
};

// Header: arm_id,text,score,e0,...,e{d-1}
inline ArmTable parse_arm_table(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw ParseError("arm table: empty file");
  csv::strip_cr(line);
  if (line.rfind("\xEF\xBB\xBF", 0) == 0) line.erase(0, 3);
  const auto header = csv::split(line, 1);
  if (header.size() < 4 || header[0] != "arm_id" || header[1] != "text" || header[2] != "score") {
    throw ParseError("arm table: header must be arm_id,text,score,e0,...", 1);
  }
  const std::size_t d = header.size() - 3;
  for (std::size_t j = 0; j < d; ++j) {
    if (header[3 + j] != "e" + std::to_string(j)) {
      throw ParseError("arm table: expected header e" + std::to_string(j), 1, 3 + j);
    }
  }

  ArmTable table;
  table.dim = static_cast<Eigen::Index>(d);
  std::vector<ArmRecord> rows;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    csv::strip_cr(line);
    if (line.empty()) continue;
    auto fields = csv::split(line, row);
    if (fields.size() != header.size()) {
      throw DimensionMismatch("arm table: row " + std::to_string(row) + " has " +
                              std::to_string(fields.size()) + " fields, header has " +
                              std::to_string(header.size()));
    }
    ArmRecord rec;
    const auto id = csv::parse_int<ArmId>(fields[0]);
    if (!id) throw ParseError("arm table: bad arm_id '" + fields[0] + "'", row, 0);
    rec.id = *id;
    rec.text = std::move(fields[1]);
    const auto score = csv::parse_double(fields[2]);
    if (!score || !std::isfinite(*score)) {
      throw ParseError("arm table: bad score '" + fields[2] + "'", row, 2);
    }
    rec.score = *score;
    rec.embedding.resize(table.dim);
    for (std::size_t j = 0; j < d; ++j) {
      const auto v = csv::parse_double(fields[3 + j]);
      if (!v || !std::isfinite(*v)) {
        throw ParseError("arm table: bad value '" + fields[3 + j] + "' in column " + header[3 + j],
                         row, 3 + j);
      }
      rec.embedding[static_cast<Eigen::Index>(j)] = *v;
    }
    rows.push_back(std::move(rec));
  }
  if (rows.empty()) throw ParseError("arm table: no arms");

  std::vector<bool> seen(rows.size(), false);
  table.arms.resize(rows.size());
  for (auto& r : rows) {
    if (r.id >= rows.size()) {
      throw ParseError("arm table: arm ids must be dense from 0; found " + std::to_string(r.id));
    }
    if (seen[r.id]) throw DuplicateArmId("arm table: duplicate arm id " + std::to_string(r.id));
    seen[r.id] = true;
    const ArmId id = r.id;
    table.arms[id] = std::move(r);
  }
  return table;
}

inline ArmTable load_arm_table(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("arm table: cannot open " + path);
  return parse_arm_table(in);
}

inline void write_arm_table(std::ostream& out, const ArmTable& table) {
  out << "arm_id,text,score";
  for (Eigen::Index j = 0; j < table.dim; ++j) out << ",e" << j;
  out << '\n';
  for (const auto& a : table.arms) {
    out << a.id << ',' << csv::quote(a.text) << ',' << csv::format_double(a.score);
    for (Eigen::Index j = 0; j < table.dim; ++j) out << ',' << csv::format_double(a.embedding[j]);
    out << '\n';
  }
}

struct SyntheticWorld {
  Vector theta_star;
  double noise_sigma = 0.1;
  std::uint64_t rng_seed = 0;
};

struct SyntheticInstance {
  ArmTable table;
  SyntheticWorld world;
};

// K unit-norm embeddings and a unit-norm hidden parameter; each arm's stored
// score is its noiseless linear score.
inline SyntheticInstance make_synthetic_instance(std::size_t K, Eigen::Index d, std::uint64_t seed,
                                                 double noise_sigma) {
  if (K == 0 || d <= 0) throw ConfigError("synthetic world: K and d must be positive");
  RandomStream rng(seed, kGlobalStream, "synthetic-world");
  auto unit = [&] {
    Vector v(d);
    do {
      for (Eigen::Index j = 0; j < d; ++j) v[j] = rng.normal();
    } while (v.norm() == 0.0);
    return Vector(v / v.norm());
  };
  SyntheticInstance inst;
  inst.world.theta_star = unit();
  inst.world.noise_sigma = noise_sigma;
  inst.world.rng_seed = seed;
  inst.table.dim = d;
  inst.table.arms.reserve(K);
  for (std::size_t k = 0; k < K; ++k) {
    ArmRecord rec;
    rec.id = static_cast<ArmId>(k);
    rec.embedding = unit();
    rec.score = inst.world.theta_star.dot(rec.embedding);
    inst.table.arms.push_back(std::move(rec));
  }
  return inst;
}

struct AgentArmView {
  std::uint32_t agent_id = 0;
  std::vector<ArmId> arm_ids;  // ascending
};

// ceil(shared_fraction * K) arms go to every agent; the rest are dealt
// round-robin after a seeded shuffle.
inline std::vector<AgentArmView> partition_arms(const ArmTable& table, std::size_t n_agents,
                                                double shared_fraction, std::uint64_t seed) {
  if (n_agents == 0) throw ConfigError("partition_arms: need at least one agent");
  if (!(shared_fraction >= 0.0 && shared_fraction <= 1.0)) {
    throw ConfigError("partition_arms: shared_fraction must lie in [0, 1]");
  }
  const std::size_t K = table.size();
  const auto shared =
      std::min<std::size_t>(K, static_cast<std::size_t>(std::ceil(shared_fraction * K - 1e-9)));
  const std::size_t rest = K - shared;
  if (K == 0 || (rest > 0 && rest < n_agents) || (rest == 0 && shared == 0)) {
    throw InsufficientArms("partition_arms: " + std::to_string(K) + " arms cannot give " +
                           std::to_string(n_agents) + " agents a shared pool of " +
                           std::to_string(shared) + " plus non-empty exclusive pools");
  }

  std::vector<ArmId> order(K);
  for (std::size_t i = 0; i < K; ++i) order[i] = static_cast<ArmId>(i);
  RandomStream rng(seed, kGlobalStream, "partition");
  std::shuffle(order.begin(), order.end(), rng.engine());

  std::vector<AgentArmView> views(n_agents);
  for (std::size_t a = 0; a < n_agents; ++a) {
    views[a].agent_id = static_cast<std::uint32_t>(a);
    views[a].arm_ids.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(shared));
  }
  for (std::size_t i = shared; i < K; ++i) views[(i - shared) % n_agents].arm_ids.push_back(order[i]);
  for (auto& v : views) std::sort(v.arm_ids.begin(), v.arm_ids.end());
  return views;
}

enum class EnvMode { synthetic, cached };

class Environment {
 public:
  static Environment cached(ArmTable table) { return Environment(std::move(table), std::nullopt); }

  static Environment synthetic(SyntheticInstance inst) {
    return Environment(std::move(inst.table), std::move(inst.world));
  }

  EnvMode mode() const { return world_ ? EnvMode::synthetic : EnvMode::cached; }
  const ArmTable& table() const { return table_; }
  const std::optional<SyntheticWorld>& world() const { return world_; }

  // Noiseless score of an arm.
  double true_score(ArmId id) const { return table_.at(id).score; }

  // Synthetic: <theta*, u> plus Gaussian noise. Cached: the stored score;
  // the stream is left untouched.
  double score_feedback(ArmId id, RandomStream& rng) const {
    const double s = true_score(id);
    if (!world_ || world_->noise_sigma == 0.0) return s;
    return s + world_->noise_sigma * rng.normal();
  }

  double preference_probability(ArmId first, ArmId second) const {
    return pref::sigmoid(true_score(first) - true_score(second));
  }

  // 1 iff the first arm is preferred, drawn from the BTL model on noiseless
  // scores.
  int preference_feedback(ArmId first, ArmId second, RandomStream& rng) const {
    const double p = preference_probability(first, second);
    return rng.bernoulli(p) ? 1 : 0;
  }

  double view_best(std::span<const ArmId> view) const {
    double best = -std::numeric_limits<double>::infinity();
    for (ArmId id : view) best = std::max(best, true_score(id));
    return best;
  }

  double instant_regret(std::span<const ArmId> view, ArmId chosen) const {
    if (std::find(view.begin(), view.end(), chosen) == view.end()) {
      throw UnknownArm("instant_regret: arm " + std::to_string(chosen) + " is not in the agent's view");
    }
    return view_best(view) - true_score(chosen);
  }

 private:
  Environment(ArmTable table, std::optional<SyntheticWorld> world)
      : table_(std::move(table)), world_(std::move(world)) {}

  ArmTable table_;
  std::optional<SyntheticWorld> world_;
};

}  // namespace fedpob
