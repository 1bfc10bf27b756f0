#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace oxygan {

// Deterministic RNG. mt19937_64 supplies the bit stream; the distributions
// are implemented here because the std ones are not pinned by the standard
// and would break bit-reproducibility across toolchains.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t next_u64() { return gen_(); }

  // [0, 1)
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // [0, n)
  std::uint64_t uniform_index(std::uint64_t n);

  bool bernoulli(double p) { return uniform() < p; }

  // Box-Muller; one value per call, the pair's second half is cached.
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  template <typename T>
  void shuffle(std::vector<T>& v) {  // Fisher-Yates
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(uniform_index(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  // Derives an independent stream; `tag` distinguishes consumers
  // (weight init vs dropout vs shuffling) under one master seed.
  static std::uint64_t derive(std::uint64_t seed, std::uint64_t tag);

 private:
  std::mt19937_64 gen_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace oxygan
