#pragma once

#include <cstdint>
#include <limits>

#include "flr/tensor.hpp"

namespace flr {

// Counter-based generator: the n-th draw is a pure function of
// (seed, stream, n), so forked streams never perturb each other.
// Satisfies UniformRandomBitGenerator.
class Rng {
 public:
  using result_type = std::uint64_t;

  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0);

  result_type operator()() { return next_u64(); }
  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  std::uint64_t next_u64();
  // Uniform in [0, 1).
  double uniform();
  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  // Standard normal via Box-Muller (two counter draws per sample).
  double normal();

  // Independent stream keyed by `stream`, starting at counter 0.
  Rng fork(std::uint64_t stream) const;

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream() const { return stream_; }
  std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

// i.i.d. N(0, sigma²) entries.
Tensor gaussian_sample(Rng& rng, Index rows, Index cols, double sigma);

}  // namespace flr
