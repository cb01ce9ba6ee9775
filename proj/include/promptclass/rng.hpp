#ifndef PROMPTCLASS_RNG_HPP
#define PROMPTCLASS_RNG_HPP

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace promptclass {

// Deterministic RNG. All randomness in the project flows through this class;
// the raw mt19937_64 stream is mapped to doubles/ints by hand so results do
// not depend on the standard library's distribution implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  std::uint64_t next_u64() { return eng_(); }

  // Uniform in [0,1) with 53 bits of entropy.
  double uniform() {
    return static_cast<double>(eng_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0,n). n must be > 0.
  std::size_t uniform_int(std::size_t n) {
    return static_cast<std::size_t>(eng_() % n);
  }

  // Box-Muller with a cached spare so consecutive calls stay cheap.
  double normal(double mean = 0.0, double stddev = 1.0) {
    if (has_spare_) {
      has_spare_ = false;
      return mean + stddev * spare_;
    }
    double u1 = 0.0;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return mean + stddev * r * std::cos(a);
  }

  bool bernoulli(double p) { return uniform() < p; }

  // In-place Fisher-Yates.
  template <typename C>
  void shuffle(C& c) {
    for (std::size_t i = c.size(); i > 1; --i) {
      std::size_t j = uniform_int(i);
      std::swap(c[i - 1], c[j]);
    }
  }

  // k distinct indices out of [0,n), in ascending order.
  std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    shuffle(idx);
    idx.resize(k < n ? k : n);
    std::sort(idx.begin(), idx.end());
    return idx;
  }

 private:
  std::mt19937_64 eng_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace promptclass

#endif  // PROMPTCLASS_RNG_HPP
