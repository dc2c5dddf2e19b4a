#pragma once

#include <Eigen/Core>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace ilad {

using Vec2 = Eigen::Vector2d;

inline constexpr double kPi = 3.14159265358979323846;

// Wrap an angle to (-pi, pi].
inline double wrap_angle(double a) {
  a = std::fmod(a + kPi, 2.0 * kPi);
  if (a <= 0.0) a += 2.0 * kPi;
  return a - kPi;
}

inline double clamp(double x, double lo, double hi) {
  return x < lo ? lo : (x > hi ? hi : x);
}

// ---------------------------------------------------------------------------
// Errors. Preconditions and contract violations throw; recoverable planning
// outcomes are reported through return values instead.
// ---------------------------------------------------------------------------

struct InvalidArgument : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct InvalidGeometry : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct InvalidState : std::logic_error {
  using std::logic_error::logic_error;
};

struct NoGraspFound : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct GenerationFailed : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Unreachable : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Seeded RNG. Hand-rolled transforms keep every stream reproducible across
// platforms and across the serial/parallel execution paths.
// ---------------------------------------------------------------------------

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  uint64_t z = x;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

class Rng {
 public:
  explicit Rng(uint64_t seed) {
    // splitmix-expanded xoshiro256** state
    uint64_t s = seed;
    for (auto& w : state_) {
      s = splitmix64(s);
      w = s;
      s += 0x9E3779B97F4A7C15ULL;
    }
  }

  // Derive a child stream seed; used to hand independent streams to tasks.
  static uint64_t mix(uint64_t a, uint64_t b) {
    return splitmix64(splitmix64(a) ^ (b + 0x9E3779B97F4A7C15ULL));
  }

  uint64_t next_u64() {
    const uint64_t result = rotl(state_[1] * 5, 7) * 9;
    const uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  // Uniform in [0, 1).
  double uniform() { return (next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n).
  int uniform_int(int n) {
    return static_cast<int>(uniform() * static_cast<double>(n)) % n;
  }

  // Standard normal via Box-Muller; two uniforms per draw, no cached spare.
  double normal() {
    double u1 = 1.0 - uniform();  // (0, 1]
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * kPi * u2);
  }

 private:
  static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
  uint64_t state_[4];
};

// FNV-1a over raw bytes; used for parameter-block checksums and config hashes.
inline uint64_t hash_bytes(const void* data, size_t n, uint64_t h = 0xCBF29CE484222325ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001B3ULL;
  }
  return h;
}

inline uint64_t hash_doubles(const double* data, size_t n) {
  return hash_bytes(data, n * sizeof(double));
}

inline uint64_t hash_string(const std::string& s) {
  return hash_bytes(s.data(), s.size());
}

// Shortest round-trip decimal form; keeps CSV/JSON output bit-reproducible.
std::string fmt_double(double v);

}  // namespace ilad
