#pragma once

#include <cstdint>
#include <random>

namespace nsqcd {

/// SplitMix64 finalizer; a bijective avalanche mix of a 64-bit word.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Seed of the substream identified by (master seed, stream index).
///
/// Substreams are a pure function of the pair, so trial i sees the same
/// draws no matter which worker runs it or in which order.
constexpr std::uint64_t substream_seed(std::uint64_t master, std::uint64_t index) noexcept {
  return mix64(mix64(master) ^ mix64(index + 0x632be59bd9b4e019ULL));
}

/**
 * A seeded random stream owned by exactly one worker.
 *
 * Wraps a 64-bit Mersenne twister seeded through substream_seed(). The k-th
 * draw of a stream is fully determined by (master seed, stream index, k).
 */
class RandomStream {
 public:
  using engine_type = std::mt19937_64;

  explicit RandomStream(std::uint64_t master_seed, std::uint64_t stream_index = 0)
      : engine_(substream_seed(master_seed, stream_index)) {}

  double normal(double mean, double stddev) {
    std::normal_distribution<double> dist(mean, stddev);
    return dist(engine_);
  }

  double gamma(double shape) {
    std::gamma_distribution<double> dist(shape, 1.0);
    return dist(engine_);
  }

  /// Beta(a, b) via the ratio of two independent gamma draws.
  double beta(double a, double b) {
    const double x = gamma(a);
    const double y = gamma(b);
    return x / (x + y);
  }

  double uniform(double lo, double hi) {
    std::uniform_real_distribution<double> dist(lo, hi);
    return dist(engine_);
  }

  /// Number of trials up to and including the first success.
  std::int64_t geometric(double p) {
    std::geometric_distribution<std::int64_t> dist(p);
    return dist(engine_) + 1;
  }

  engine_type& engine() noexcept { return engine_; }

 private:
  engine_type engine_;
};

}  // namespace nsqcd
