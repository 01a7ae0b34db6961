#ifndef TENDUQ_RANDOM_HPP
#define TENDUQ_RANDOM_HPP

#include <cstdint>
#include <random>

namespace tenduq {

// One explicit generator threaded through every stochastic operation.
using Rng = std::mt19937_64;

/// Independent stream for sub-task `index` of a run seeded with `seed`.
inline Rng derive_stream(std::uint64_t seed, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32),
                    0x7e9du};
  return Rng(seq);
}

inline double uniform01(Rng& rng) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng); }

inline double standard_normal(Rng& rng) { return std::normal_distribution<double>(0.0, 1.0)(rng); }

}  // namespace tenduq

#endif  // TENDUQ_RANDOM_HPP
