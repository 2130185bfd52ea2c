#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "foldattn/tensor.hpp"

namespace foldattn {

/// Seeded generator with platform-independent uniform/normal draws.
///
/// std::uniform_real_distribution and friends are implementation-defined, so
/// the conversions from raw 64-bit words are done here to keep seeded runs
/// bit-identical across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  /// Uniform in [0, 1).
  double uniform() { return double(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * 3.14159265358979323846 * u2;
    spare_ = radius * std::sin(angle);
    has_spare_ = true;
    return radius * std::cos(angle);
  }

  std::size_t index(std::size_t n) { return std::size_t(uniform() * double(n)) % n; }

  std::uint64_t next() { return engine_(); }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

template <typename T>
Tensor<T> random_uniform(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<T> out(std::move(shape));
  for (auto& v : out.data()) v = T(rng.uniform(lo, hi));
  return out;
}

template <typename T>
Tensor<T> random_normal(Shape shape, Rng& rng, double stddev = 1.0) {
  Tensor<T> out(std::move(shape));
  for (auto& v : out.data()) v = T(stddev * rng.normal());
  return out;
}

}  // namespace foldattn
