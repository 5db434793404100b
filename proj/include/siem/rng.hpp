#pragma once

#include <cstdint>
#include <limits>
#include <random>

namespace siem {

/// splitmix64 finalizer; a bijective avalanche mix of 64 bits.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z += 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// Stream tags keep the random streams of different consumers disjoint.
enum class Stream : std::uint64_t {
  mixture_sample = 1,
  forward_noise,
  ancestral_noise,
  prior,
  corruption_field,
  spectral_noise,
  xi_marginal,
  xi_dsm,
  network_init,
  training_batch,
  ratio_split,
  ratio_shuffle,
  experiment,
};

/// Counter-based generator. The output sequence is a pure function of the
/// key, so a stream derived from (seed, ids...) does not depend on the order
/// in which other streams were consumed.
class CounterRng {
 public:
  using result_type = std::uint64_t;

  explicit CounterRng(std::uint64_t key) noexcept : key_(mix64(key)) {}

  template <class... Ids>
  static CounterRng stream(std::uint64_t seed, Stream tag, Ids... ids) noexcept {
    std::uint64_t key = mix64(seed ^ 0x5851F42D4C957F2DULL);
    key = mix64(key ^ static_cast<std::uint64_t>(tag));
    ((key = mix64(key ^ static_cast<std::uint64_t>(ids))), ...);
    return CounterRng(key);
  }

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

  result_type operator()() noexcept {
    ++counter_;
    return mix64(key_ + counter_ * 0xD1B54A32D192ED03ULL);
  }

  /// Uniform on [0, 1).
  double uniform() noexcept { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

  double normal() { return normal_(*this); }

  std::size_t index(std::size_t n) noexcept {
    return static_cast<std::size_t>(uniform() * static_cast<double>(n)) % n;
  }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

}  // namespace siem
