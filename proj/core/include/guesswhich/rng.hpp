#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace gw {

/// Seeded Mersenne-Twister stream. Identical seed and call sequence give
/// identical draws; `fork` derives independent child streams.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t position() const { return position_; }

  std::uint64_t next_u64();
  double uniform();                           // [0, 1)
  std::size_t uniform_index(std::size_t n);   // [0, n)
  double uniform_range(double lo, double hi);
  double normal(double mean, double stddev);
  /// Draws an index with probability proportional to `weights`.
  std::size_t categorical(std::span<const double> weights);

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[uniform_index(i)]);
    }
  }

  /// Child stream keyed by (seed, stream id); does not advance this stream.
  Rng fork(std::uint64_t stream) const;

 private:
  std::uint64_t seed_;
  std::uint64_t position_ = 0;
  std::mt19937_64 engine_;
};

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

}  // namespace gw
