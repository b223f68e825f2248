#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

namespace homog {

/// SplitMix64 finalizer; used to derive independent stream seeds.
constexpr std::uint64_t splitmix64(std::uint64_t z) noexcept {
  z += 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// Seed for stream `salt` of path `index` under `master`. Depends only on the
/// three inputs, so results do not depend on which worker runs the path.
constexpr std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index,
                                    std::uint64_t salt = 0) noexcept {
  return splitmix64(splitmix64(master ^ splitmix64(salt + 0x632BE59BD9B4E019ULL)) + index);
}

// Stream salts. Keeping the chain on its own stream lets it be sampled lazily
// while still being independent of the Brownian draws.
inline constexpr std::uint64_t kChainStream = 1;
inline constexpr std::uint64_t kBrownianStream = 2;
inline constexpr std::uint64_t kAuxStream = 3;

/// mt19937_64 with platform-independent uniform/normal/exponential transforms
/// (the std:: distributions are implementation-defined).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  /// Uniform on (0, 1].
  double uniform_open0() { return 1.0 - uniform(); }

  /// Standard normal via Box-Muller; the second variate is cached.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double r = std::sqrt(-2.0 * std::log(uniform_open0()));
    const double theta = 2.0 * std::numbers::pi * uniform();
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  /// Exponential with the given rate (> 0).
  double exponential(double rate) { return -std::log(uniform_open0()) / rate; }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace homog
