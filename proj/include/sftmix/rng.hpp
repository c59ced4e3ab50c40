#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace sftmix {

// Deterministic random source. The engine is std::mt19937_64, whose update
// rule is fixed by the standard, and every distribution is implemented here
// on top of raw 64-bit draws, so a given seed yields the same sequence on
// every platform. std:: distributions are never used (their mapping from
// engine output is implementation-defined).
class SeededRng {
 public:
  static constexpr const char* kAlgorithm = "mt19937_64";

  explicit SeededRng(std::uint64_t seed);

  // Derives an independent stream from (seed, tags...) via splitmix64 mixing.
  // Used to give each purpose (data order, lambda draws, corpus families, ...)
  // its own stream without cross-consumption.
  static SeededRng derive(std::uint64_t seed, const std::vector<std::uint64_t>& tags);

  std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64();

  // Uniform on [0,1), 53-bit resolution.
  double uniform();
  // Uniform on (0,1); never returns 0 (safe under log).
  double uniform_pos();
  // Unbiased integer in [0, bound) via rejection. bound must be > 0.
  std::uint64_t below(std::uint64_t bound);

  // Standard normal via Box-Muller. Consumes exactly two uniforms per call
  // (no cached spare), keeping replay and serialization trivial.
  double normal();

  // Gamma(shape, 1) via the Marsaglia-Tsang squeeze for shape >= 1 and the
  // power-of-uniform boost for shape < 1. Valid for any shape > 0.
  double gamma(double shape);

  // Beta(a, b) as Ga/(Ga+Gb) from two gamma draws.
  double beta(double a, double b);

  // Fisher-Yates using below(); deterministic for a given state.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    if (v.size() < 2) return;
    for (std::size_t i = v.size() - 1; i > 0; --i) {
      std::size_t j = static_cast<std::size_t>(below(i + 1));
      if (i != j) std::swap(v[i], v[j]);
    }
  }

  // Engine state round-trip (used by checkpoints). The text format is the
  // standard-mandated decimal serialization of mt19937_64.
  std::string state_string() const;
  void restore_state(const std::string& text);

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

// Single Beta(alpha, alpha) draw; the lambda sampler of the mixup recipe
// delegates here. Throws InvalidInputError if alpha <= 0.
double sample_beta(double alpha, SeededRng& rng);

}  // namespace sftmix
