#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace triage {

/// mt19937_64 with rejection-sampled bounded draws. Unlike std::shuffle and
/// std::uniform_int_distribution its output sequence is fixed by the C++
/// standard, so splits and bootstrap samples agree across toolchains.
class DeterministicRng {
 public:
  static constexpr std::string_view kName = "mt19937_64+fisher-yates+rejection/v1";

  explicit DeterministicRng(std::uint64_t seed) : engine_(seed) {}

  /// Uniform in [0, bound).
  std::uint64_t below(std::uint64_t bound);

  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      auto j = static_cast<std::size_t>(below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

/// Seed for the `index`-th independent substream of `seed` (splitmix64 mix).
std::uint64_t substream_seed(std::uint64_t seed, std::uint64_t index) noexcept;

}  // namespace triage
