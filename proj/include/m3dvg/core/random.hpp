#ifndef M3DVG_CORE_RANDOM_HPP_
#define M3DVG_CORE_RANDOM_HPP_

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string_view>

#include "m3dvg/core/tensor.hpp"

namespace m3dvg {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// FNV-1a; stable across platforms, unlike std::hash.
inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  return splitmix64(a ^ splitmix64(b + 0x632be59bd9b4e019ULL));
}

// Portable random stream. The standard distributions are implementation
// defined, so uniform and normal draws are derived from raw engine output.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(splitmix64(seed)) {}

  std::uint64_t next_u64() { return engine_(); }

  // [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Box-Muller.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    do u1 = uniform(); while (u1 <= 0.0);
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double t = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(t);
    has_spare_ = true;
    return r * std::cos(t);
  }

  std::size_t index(std::size_t n) { return static_cast<std::size_t>(uniform() * n); }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

inline Tensor random_uniform(Shape shape, double lo, double hi, Rng& rng) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = rng.uniform(lo, hi);
  return Tensor(std::move(shape), std::move(v));
}

inline Tensor random_normal(Shape shape, double stddev, Rng& rng) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = stddev * rng.normal();
  return Tensor(std::move(shape), std::move(v));
}

// Parameter init: uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)).
inline Tensor init_param(Shape shape, std::size_t fan_in, Rng& rng) {
  double b = 1.0 / std::sqrt(static_cast<double>(fan_in));
  return random_uniform(std::move(shape), -b, b, rng);
}

}  // namespace m3dvg

#endif  // M3DVG_CORE_RANDOM_HPP_
