#include "sftmix/rng.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

#include "sftmix/errors.hpp"

namespace sftmix {

namespace {

// splitmix64 finalizer; good avalanche, used only for stream derivation.
std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

}  // namespace

SeededRng::SeededRng(std::uint64_t seed) : seed_(seed), engine_(seed) {}

SeededRng SeededRng::derive(std::uint64_t seed, const std::vector<std::uint64_t>& tags) {
  std::uint64_t h = mix64(seed);
  for (std::uint64_t t : tags) h = mix64(h ^ mix64(t));
  return SeededRng(h);
}

std::uint64_t SeededRng::next_u64() { return engine_(); }

double SeededRng::uniform() {
  // Top 53 bits -> [0,1) on the 2^-53 grid.
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double SeededRng::uniform_pos() {
  for (;;) {
    double u = uniform();
    if (u > 0.0) return u;
  }
}

std::uint64_t SeededRng::below(std::uint64_t bound) {
  if (bound == 0) throw InvalidInputError("SeededRng::below: bound must be positive");
  // Rejection over the largest multiple of bound.
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - \
                              std::numeric_limits<std::uint64_t>::max() % bound;
  for (;;) {
    std::uint64_t x = next_u64();
    if (x < limit) return x % bound;
  }
}

double SeededRng::normal() {
  double u1 = uniform_pos();
  double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

double SeededRng::gamma(double shape) {
  if (!(shape > 0.0)) throw InvalidInputError("SeededRng::gamma: shape must be > 0");
  if (shape < 1.0) {
    // Gamma(a) = Gamma(a+1) * U^(1/a)
    double g = gamma(shape + 1.0);
    double u = uniform_pos();
    return g * std::pow(u, 1.0 / shape);
  }
  const double d = shape - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x = normal();
    double t = 1.0 + c * x;
    if (t <= 0.0) continue;
    double v = t * t * t;
    double u = uniform_pos();
    double x2 = x * x;
    if (u < 1.0 - 0.0331 * x2 * x2) return d * v;
    if (std::log(u) < 0.5 * x2 + d * (1.0 - v + std::log(v))) return d * v;
  }
}

double SeededRng::beta(double a, double b) {
  if (!(a > 0.0) || !(b > 0.0)) throw InvalidInputError("SeededRng::beta: parameters must be > 0");
  for (;;) {
    double ga = gamma(a);
    double gb = gamma(b);
    double s = ga + gb;
    if (s > 0.0) return ga / s;
  }
}

std::string SeededRng::state_string() const {
  std::ostringstream os;
  os << engine_;
  return os.str();
}

void SeededRng::restore_state(const std::string& text) {
  std::istringstream is(text);
  is >> engine_;
  if (is.fail()) throw FormatError("SeededRng::restore_state: unparseable engine state");
}

double sample_beta(double alpha, SeededRng& rng) {
  if (!(alpha > 0.0)) throw InvalidInputError("sample_beta: alpha must be > 0");
  return rng.beta(alpha, alpha);
}

}  // namespace sftmix
