#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace r2u {

// Dense vector of 64-bit floats. Every gradient and parameter vector in the
// library is one of these.
using Vec64 = std::vector<double>;

// y + a*x. Throws DimensionError on length mismatch and NumericError if the
// result is not finite.
Vec64 axpy(double a, std::span<const double> x, std::span<const double> y);

// In-place y += a*x; same checks as axpy.
void axpy_inplace(double a, std::span<const double> x, std::span<double> y);

double dot(std::span<const double> x, std::span<const double> y);
double l2_norm(std::span<const double> x);

// Returns x if ||x|| <= c, otherwise x scaled onto the sphere of radius c.
// c must be positive; c = +inf is allowed and never clips.
Vec64 clip_to_norm(std::span<const double> x, double c);

void scale_inplace(double a, std::span<double> x);
bool all_finite(std::span<const double> x);

// SplitMix64 used only to expand a 64-bit seed into Xoshiro256** state.
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}
  std::uint64_t next();

 private:
  std::uint64_t state_;
};

// Xoshiro256** stream seeded through SplitMix64. One instance belongs to one
// run; copying it forks an identical stream.
class SeededRng {
 public:
  explicit SeededRng(std::uint64_t seed);

  std::uint64_t next_u64();
  // 53-bit uniform in [0, 1): (next_u64() >> 11) * 2^-53.
  double next_double();
  // floor(next_double() * n); n must be positive.
  std::size_t next_index(std::size_t n);
  // Bernoulli(p) via next_double() < p.
  bool next_bernoulli(double p);

  std::uint64_t seed() const { return seed_; }
  std::uint64_t draws() const { return draws_; }

 private:
  std::uint64_t seed_;
  std::uint64_t draws_ = 0;
  std::array<std::uint64_t, 4> s_{};
};

// n samples of N(0, sigma^2). Box-Muller: each pair of outputs consumes
// exactly two uniforms (u1, u2): r = sqrt(-2 ln(1 - u1)), z0 = r cos(2 pi u2),
// z1 = r sin(2 pi u2). For odd n the last sine value is discarded. sigma = 0
// still consumes the draws and yields zeros.
Vec64 gaussian(SeededRng& rng, std::size_t n, double sigma);

// n samples uniform in [lo, hi) as lo + (hi - lo) * next_double().
Vec64 uniform(SeededRng& rng, std::size_t n, double lo, double hi);

}  // namespace r2u
