#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <random>

namespace prefalign {

inline std::uint64_t split_mix64(std::uint64_t z) {
  z += 0x9E3779B97F4A7C15ull;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

// Child stream seed for replicate / step `index`: xor with the index, then
// mix so that adjacent indices give unrelated mt19937_64 states.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index) {
  return split_mix64(base ^ index);
}

// All sampling in the library goes through this wrapper rather than
// std::*_distribution so that streams are reproducible across standard
// library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform01() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  bool bernoulli(double p) { return uniform01() < p; }

  // Index into a probability vector by inverse CDF scan.
  int categorical(const Eigen::VectorXd& probs) {
    const double u = uniform01();
    double cum = 0.0;
    const int n = static_cast<int>(probs.size());
    for (int i = 0; i < n; ++i) {
      cum += probs[i];
      if (u < cum) return i;
    }
    return n - 1;  // guard against accumulated rounding
  }

  int uniform_int(int n) {
    const int v = static_cast<int>(uniform01() * static_cast<double>(n));
    return v >= n ? n - 1 : v;
  }

  // Marsaglia polar method; only used for low-rank feature generation.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u, v, s;
    do {
      u = 2.0 * uniform01() - 1.0;
      v = 2.0 * uniform01() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double f = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * f;
    has_spare_ = true;
    return u * f;
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace prefalign
