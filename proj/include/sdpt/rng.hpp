#ifndef SDPT_RNG_HPP
#define SDPT_RNG_HPP

#include <cmath>
#include <cstdint>

namespace sdpt {

// Counter-free splitmix64 generator. Uses only integer arithmetic and IEEE
// double multiplies for the uniform path, so identical seeds give identical
// sequences on every platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ull;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  // [0, 1) with 53 random bits.
  double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // [lo, hi] inclusive; hi >= lo.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
    return lo + static_cast<std::int64_t>(next_u64() % span);
  }

  // Box-Muller. Reproducible per platform; used for weight init only.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform01();
    double u2 = uniform01();
    while (u1 <= 0.0) u1 = uniform01();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  // Independent child stream; stable under reordering of other draws.
  Rng fork(std::uint64_t stream) const {
    std::uint64_t mixed = state_ ^ (0x9e3779b97f4a7c15ull + stream * 0xc2b2ae3d27d4eb4full);
    Rng child(mixed);
    child.next_u64();
    return child;
  }

 private:
  std::uint64_t state_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace sdpt

#endif
