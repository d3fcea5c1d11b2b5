#pragma once

// Experiment configuration: one JSON document, validated field by field and
// echoed back fully resolved.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <set>
#include <string>

#include <json.hpp>

#include "fedpob/env.hpp"
#include "fedpob/errors.hpp"
#include "fedpob/runtime.hpp"

namespace fedpob {

struct ExperimentConfig {
  FederationParams params;
  EnvMode env = EnvMode::synthetic;
  std::int64_t d = 16;  // synthetic: required; cached: taken from the table
  double shared_fraction = 0.5;
  // synthetic only
  double noise_sigma = 0.1;
  std::size_t K = 100;
  std::optional<std::uint64_t> theta_star_seed;  // unset: follows the master seed
  // cached only
  std::string arm_table_path;
  Transport transport = Transport::inproc;
  std::string output_dir = "out";
  std::uint64_t startup_timeout_ms = 10000;

  std::uint64_t world_seed() const { return theta_star_seed.value_or(params.seed); }
};

namespace config_detail {

using nlohmann::json;

inline const std::set<std::string>& known_keys() {
  static const std::set<std::string> keys{
      "algo", "n_agents", "rounds", "d", "lambda", "nu", "D", "delta", "lr", "local_iters", "init_sigma",
      "shared_fraction", "noise_sigma", "env", "arm_table_path", "K", "theta_star_seed", "seed", "transport",
      "output_dir", "startup_timeout_ms"};
  return keys;
}

inline double get_real(const json& j, const char* key) {
  const json& v = j.at(key);
  if (v.is_number()) return v.get<double>();
  if (v.is_string()) {
    const auto s = v.get<std::string>();
    if (s == "inf" || s == "infinity") return std::numeric_limits<double>::infinity();
  }
  throw ConfigError(std::string("field '") + key + "' must be a number");
}

template <class Int>
Int get_uint(const json& j, const char* key) {
  const json& v = j.at(key);
  if (!v.is_number_integer() || v.get<std::int64_t>() < 0) {
    throw ConfigError(std::string("field '") + key + "' must be a non-negative integer");
  }
  return static_cast<Int>(v.get<std::uint64_t>());
}

inline std::string get_string(const json& j, const char* key) {
  const json& v = j.at(key);
  if (!v.is_string()) throw ConfigError(std::string("field '") + key + "' must be a string");
  return v.get<std::string>();
}

inline json real_to_json(double v) {
  if (std::isinf(v)) return "inf";
  return v;
}

}  // namespace config_detail

inline const char* to_string(Algo a) { return a == Algo::fedpob ? "fedpob" : "fedpob-pref"; }
inline const char* to_string(EnvMode m) { return m == EnvMode::synthetic ? "synthetic" : "cached"; }
inline const char* to_string(Transport t) { return t == Transport::inproc ? "inproc" : "socket"; }

inline void validate_config(const ExperimentConfig& c) {
  validate_params(c.params);
  if (!(c.shared_fraction >= 0.0 && c.shared_fraction <= 1.0)) throw ConfigError("shared_fraction must lie in [0, 1]");
  if (c.env == EnvMode::synthetic) {
    if (c.d <= 0) throw ConfigError("d must be >= 1");
    if (c.K == 0) throw ConfigError("K must be >= 1");
    if (!(c.noise_sigma >= 0.0) || !std::isfinite(c.noise_sigma)) throw ConfigError("noise_sigma must be >= 0");
  } else if (c.arm_table_path.empty()) {
    throw ConfigError("arm_table_path is required when env is cached");
  }
}

// `base_dir` resolves a relative arm_table_path.
inline ExperimentConfig parse_config(const nlohmann::json& j, const std::filesystem::path& base_dir = {}) {
  using namespace config_detail;
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (!known_keys().count(key)) throw ConfigError("unknown config field '" + key + "'");
  }

  ExperimentConfig c;
  try {
    if (j.contains("algo")) {
      const auto a = get_string(j, "algo");
      if (a == "fedpob") c.params.algo = Algo::fedpob;
      else if (a == "fedpob-pref") c.params.algo = Algo::fedpob_pref;
      else throw ConfigError("field 'algo' must be fedpob or fedpob-pref");
    }
    if (j.contains("env")) {
      const auto e = get_string(j, "env");
      if (e == "synthetic") c.env = EnvMode::synthetic;
      else if (e == "cached") c.env = EnvMode::cached;
      else throw ConfigError("field 'env' must be synthetic or cached");
    }
    if (j.contains("transport")) {
      const auto t = get_string(j, "transport");
      if (t == "inproc") c.transport = Transport::inproc;
      else if (t == "socket") c.transport = Transport::socket;
      else throw ConfigError("field 'transport' must be inproc or socket");
    }
    if (j.contains("n_agents")) c.params.n_agents = get_uint<std::size_t>(j, "n_agents");
    if (j.contains("rounds")) c.params.rounds = get_uint<std::uint64_t>(j, "rounds");
    if (j.contains("lambda")) c.params.lambda = get_real(j, "lambda");
    if (j.contains("nu")) c.params.nu = get_real(j, "nu");
    if (j.contains("D")) c.params.D = get_real(j, "D");
    if (j.contains("delta")) c.params.delta = get_real(j, "delta");
    if (j.contains("lr")) c.params.lr = get_real(j, "lr");
    if (j.contains("local_iters")) c.params.local_iters = get_uint<int>(j, "local_iters");
    if (j.contains("init_sigma")) c.params.init_sigma = get_real(j, "init_sigma");
    if (j.contains("seed")) c.params.seed = get_uint<std::uint64_t>(j, "seed");
    if (j.contains("shared_fraction")) c.shared_fraction = get_real(j, "shared_fraction");
    if (j.contains("output_dir")) c.output_dir = get_string(j, "output_dir");
    if (j.contains("startup_timeout_ms")) c.startup_timeout_ms = get_uint<std::uint64_t>(j, "startup_timeout_ms");

    const bool any_synth = j.contains("K") || j.contains("theta_star_seed") || j.contains("noise_sigma");
    if (c.env == EnvMode::synthetic) {
      if (j.contains("arm_table_path")) throw ConfigError("arm_table_path is only valid when env is cached");
      if (j.contains("d")) c.d = get_uint<std::int64_t>(j, "d");
      if (j.contains("K")) c.K = get_uint<std::size_t>(j, "K");
      if (j.contains("noise_sigma")) c.noise_sigma = get_real(j, "noise_sigma");
      if (j.contains("theta_star_seed")) c.theta_star_seed = get_uint<std::uint64_t>(j, "theta_star_seed");
    } else {
      if (any_synth) throw ConfigError("K, theta_star_seed and noise_sigma are only valid when env is synthetic");
      if (!j.contains("arm_table_path")) throw ConfigError("arm_table_path is required when env is cached");
      std::filesystem::path p = get_string(j, "arm_table_path");
      if (p.is_relative() && !base_dir.empty()) p = base_dir / p;
      c.arm_table_path = p.string();
      c.d = j.contains("d") ? get_uint<std::int64_t>(j, "d") : 0;
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  validate_config(c);
  return c;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config " + path + ": " + e.what());
  }
  return parse_config(j, std::filesystem::path(path).parent_path());
}

// Every field with its resolved value.
inline nlohmann::json config_to_json(const ExperimentConfig& c) {
  using config_detail::real_to_json;
  nlohmann::json j;
  j["algo"] = to_string(c.params.algo);
  j["n_agents"] = c.params.n_agents;
  j["rounds"] = c.params.rounds;
  j["d"] = c.d;
  j["lambda"] = c.params.lambda;
  j["nu"] = c.params.nu;
  j["D"] = real_to_json(c.params.D);
  j["delta"] = c.params.delta;
  j["lr"] = c.params.lr;
  j["local_iters"] = c.params.local_iters;
  j["init_sigma"] = c.params.init_sigma;
  j["shared_fraction"] = c.shared_fraction;
  j["env"] = to_string(c.env);
  if (c.env == EnvMode::synthetic) {
    j["K"] = c.K;
    j["noise_sigma"] = c.noise_sigma;
    j["theta_star_seed"] = c.world_seed();
  } else {
    j["arm_table_path"] = c.arm_table_path;
  }
  j["seed"] = c.params.seed;
  j["transport"] = to_string(c.transport);
  j["output_dir"] = c.output_dir;
  j["startup_timeout_ms"] = c.startup_timeout_ms;
  return j;
}

}  // namespace fedpob
