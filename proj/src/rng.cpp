#include "triage/rng.hpp"

#include <limits>
#include <stdexcept>

namespace triage {

namespace {

std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

}  // namespace

std::uint64_t DeterministicRng::below(std::uint64_t bound) {
  if (bound == 0) throw std::invalid_argument("bound must be positive");
  constexpr std::uint64_t kMax = std::numeric_limits<std::uint64_t>::max();
  // Largest value such that [0, limit] holds a whole number of `bound` blocks.
  const std::uint64_t limit = kMax - (kMax % bound + 1) % bound;
  std::uint64_t x = 0;
  do {
    x = engine_();
  } while (x > limit);
  return x % bound;
}

std::uint64_t substream_seed(std::uint64_t seed, std::uint64_t index) noexcept {
  return splitmix64(splitmix64(seed) ^ splitmix64(index + 0x632BE59BD9B4E019ULL));
}

}  // namespace triage
