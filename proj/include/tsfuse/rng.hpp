#pragma once

// Deterministic random numbers.
//
// All stochastic code in the project draws from Rng, which wraps a
// mersenne-twister engine but implements the value->distribution mappings
// itself (uniform, normal, bernoulli).  The standard library leaves those
// mappings implementation-defined, and we promise byte-identical artifacts
// for a given seed, so we cannot rely on them.
//
// derive_seed() gives every independent consumer (per-genome evaluation,
// per-cycle training, dropout, noise injection, ...) its own stream.  The
// derivation is a splitmix64 fold over the master seed and a list of tags,
// so results never depend on scheduling or thread count.

#include <cmath>
#include <cstdint>
#include <random>

namespace tsfuse {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

// Streams are identified by (master seed, tag...).  Tags are small role
// constants plus indices (cycle number, genome bits, epoch, ...).
template <class... Tags>
std::uint64_t derive_seed(std::uint64_t master, Tags... tags) {
  std::uint64_t h = splitmix64(master);
  ((h = splitmix64(h ^ static_cast<std::uint64_t>(tags))), ...);
  return h;
}

// Role constants used in derive_seed chains, kept in one place so streams
// can never collide by accident.
namespace seed_role {
constexpr std::uint64_t kFitness = 0x01;
constexpr std::uint64_t kInit = 0x02;
constexpr std::uint64_t kShuffle = 0x03;
constexpr std::uint64_t kDropout = 0x04;
constexpr std::uint64_t kNoise = 0x05;
constexpr std::uint64_t kSynth = 0x06;
constexpr std::uint64_t kOptimizer = 0x07;
constexpr std::uint64_t kCycle = 0x08;
constexpr std::uint64_t kLabelShuffle = 0x09;
}  // namespace seed_role

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  std::uint64_t next_u64() { return eng_(); }

  // Uniform in [0, 1).  53 random bits, so 0 is possible but 1 is not.
  double uniform01() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // Uniform integer in [0, n).  Rejection keeps it unbiased.
  std::uint64_t below(std::uint64_t n) {
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t v = next_u64();
    while (v >= limit) v = next_u64();
    return v % n;
  }

  bool bernoulli(double p) { return uniform01() < p; }

  // Box-Muller without caching the second value: one normal per two
  // uniforms, which keeps the stream position a simple function of the
  // number of calls.
  double normal() {
    double u1 = uniform01();
    while (u1 <= 0.0) u1 = uniform01();
    const double u2 = uniform01();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * 3.14159265358979323846 * u2);
  }

 private:
  std::mt19937_64 eng_;
};

}  // namespace tsfuse
