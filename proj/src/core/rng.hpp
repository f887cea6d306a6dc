#ifndef PROTORET_CORE_RNG_HPP
#define PROTORET_CORE_RNG_HPP

#include <array>
#include <cstdint>
#include <span>
#include <vector>

namespace protoret {

/// Deterministic pseudo-random generator used everywhere randomness is needed.
///
/// Algorithm (also documented in the README):
///   - state: xoshiro256** (Blackman & Vigna), 256-bit state
///   - seeding: the four state words come from successive splitmix64 steps
///     of the user seed, so any 64-bit seed (including 0) is usable
///   - bounded(n): Lemire's multiply-shift rejection method, bias-free
///   - uniform(): 53 high bits scaled to [0, 1)
///   - gaussian(): Box-Muller on two uniform draws, second value cached
///   - independent streams: derive_seed(base, stream) mixes the stream id
///     into the base seed with splitmix64
///
/// A generator instance is single-owner; all methods mutate state.
class Rng {
public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next_u64();

  /// Uniform integer in [0, n). n must be > 0.
  std::uint64_t bounded(std::uint64_t n);

  /// Uniform double in [0, 1).
  double uniform();

  /// Standard normal deviate.
  double gaussian();

  /// Stable seed derivation for independent streams (sweep cells,
  /// parallel episode generators).
  static std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);

  /// Fisher-Yates shuffle of the whole vector.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(bounded(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  /// Partial Fisher-Yates: after the call the first k elements of v are a
  /// uniform sample without replacement, in random order.
  template <typename T>
  void partial_shuffle(std::vector<T>& v, std::size_t k) {
    for (std::size_t i = 0; i < k && i + 1 < v.size(); ++i) {
      std::size_t j = i + static_cast<std::size_t>(bounded(v.size() - i));
      std::swap(v[i], v[j]);
    }
  }

private:
  std::array<std::uint64_t, 4> state_;
  double cached_gaussian_ = 0.0;
  bool has_cached_gaussian_ = false;
};

} // namespace protoret

#endif
