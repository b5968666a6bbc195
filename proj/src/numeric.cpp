#include "r2u/numeric.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "r2u/error.hpp"

namespace r2u {

namespace {

void require_same_length(std::size_t a, std::size_t b, const char* what) {
  if (a != b) {
    throw DimensionError(std::string(what) + ": length mismatch (" + std::to_string(a) +
                         " vs " + std::to_string(b) + ")");
  }
}

constexpr std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

}  // namespace

Vec64 axpy(double a, std::span<const double> x, std::span<const double> y) {
  Vec64 out(y.begin(), y.end());
  axpy_inplace(a, x, out);
  return out;
}

void axpy_inplace(double a, std::span<const double> x, std::span<double> y) {
  require_same_length(x.size(), y.size(), "axpy");
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += a * x[i];
  if (!all_finite(y)) throw NumericError("axpy: non-finite result");
}

double dot(std::span<const double> x, std::span<const double> y) {
  require_same_length(x.size(), y.size(), "dot");
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * y[i];
  return s;
}

double l2_norm(std::span<const double> x) {
  double s = 0.0;
  for (double v : x) s += v * v;
  return std::sqrt(s);
}

Vec64 clip_to_norm(std::span<const double> x, double c) {
  if (!(c > 0.0)) throw ParameterError("clip_to_norm: clip norm must be positive");
  Vec64 out(x.begin(), x.end());
  const double norm = l2_norm(x);
  if (norm > c) {
    // Scaling can land a hair above c; one extra shrink keeps ||out|| <= c.
    double factor = c / norm;
    scale_inplace(factor, out);
    while (l2_norm(out) > c) {
      factor = std::nextafter(factor, 0.0);
      out.assign(x.begin(), x.end());
      scale_inplace(factor, out);
    }
  }
  return out;
}

void scale_inplace(double a, std::span<double> x) {
  for (double& v : x) v *= a;
}

bool all_finite(std::span<const double> x) {
  for (double v : x) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

std::uint64_t SplitMix64::next() {
  std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

SeededRng::SeededRng(std::uint64_t seed) : seed_(seed) {
  SplitMix64 sm(seed);
  for (auto& word : s_) word = sm.next();
}

std::uint64_t SeededRng::next_u64() {
  ++draws_;
  const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
  const std::uint64_t t = s_[1] << 17;
  s_[2] ^= s_[0];
  s_[3] ^= s_[1];
  s_[1] ^= s_[2];
  s_[0] ^= s_[3];
  s_[2] ^= t;
  s_[3] = rotl(s_[3], 45);
  return result;
}

double SeededRng::next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

std::size_t SeededRng::next_index(std::size_t n) {
  if (n == 0) throw ParameterError("next_index: empty range");
  const auto idx = static_cast<std::size_t>(next_double() * static_cast<double>(n));
  return idx < n ? idx : n - 1;
}

bool SeededRng::next_bernoulli(double p) { return next_double() < p; }

Vec64 gaussian(SeededRng& rng, std::size_t n, double sigma) {
  if (!(sigma >= 0.0)) throw ParameterError("gaussian: sigma must be non-negative");
  Vec64 out(n);
  for (std::size_t i = 0; i < n; i += 2) {
    const double u1 = rng.next_double();
    const double u2 = rng.next_double();
    const double r = std::sqrt(-2.0 * std::log(1.0 - u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    out[i] = sigma * r * std::cos(angle);
    if (i + 1 < n) out[i + 1] = sigma * r * std::sin(angle);
  }
  return out;
}

Vec64 uniform(SeededRng& rng, std::size_t n, double lo, double hi) {
  if (lo > hi) throw ParameterError("uniform: lo must not exceed hi");
  Vec64 out(n);
  const double width = hi - lo;
  for (auto& v : out) v = lo + width * rng.next_double();
  return out;
}

}  // namespace r2u
