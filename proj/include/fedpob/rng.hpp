#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace fedpob {

inline constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline constexpr std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Seed for the (master seed, agent, purpose) stream. Streams never depend on
// the order in which agents are scheduled.
inline constexpr std::uint64_t stream_seed(std::uint64_t master, std::uint64_t agent,
                                           std::string_view purpose) {
  return splitmix64(splitmix64(splitmix64(master) ^ agent) ^ fnv1a(purpose));
}

// Agent id used for streams that belong to the run rather than to one agent.
inline constexpr std::uint64_t kGlobalStream = 0xffffffffULL;

class RandomStream {
 public:
  explicit RandomStream(std::uint64_t seed) : engine_(seed) {}

  RandomStream(std::uint64_t master, std::uint64_t agent, std::string_view purpose)
      : engine_(stream_seed(master, agent, purpose)) {}

  // Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double normal() { return gauss_(engine_); }

  bool bernoulli(double p) { return uniform() < p; }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> gauss_{0.0, 1.0};
};

}  // namespace fedpob
