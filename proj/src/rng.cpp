#include "flr/rng.hpp"

#include <cmath>
#include <numbers>

#include "flr/errors.hpp"

namespace flr {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

Rng::Rng(std::uint64_t seed, std::uint64_t stream)
    : seed_(seed), stream_(stream), key_(splitmix64(seed) ^ splitmix64(~stream * 0xd1b54a32d192ed03ULL)) {}

std::uint64_t Rng::next_u64() {
  // Two mixing rounds decorrelate adjacent counters.
  return splitmix64(splitmix64(key_ ^ (counter_++ * 0x9e3779b97f4a7c15ULL)) + key_);
}

double Rng::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

std::uint64_t Rng::below(std::uint64_t n) {
  if (n == 0) throw ContractError("Rng::below(0)");
  // Rejection keeps the draw unbiased.
  const std::uint64_t limit = max() - max() % n;
  std::uint64_t x;
  do {
    x = next_u64();
  } while (x >= limit);
  return x % n;
}

double Rng::normal() {
  const double u1 = 1.0 - uniform();  // (0, 1]
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

Rng Rng::fork(std::uint64_t stream) const {
  return Rng(splitmix64(seed_ ^ splitmix64(stream_)), stream);
}

Tensor gaussian_sample(Rng& rng, Index rows, Index cols, double sigma) {
  if (!(sigma >= 0.0)) throw ContractError("gaussian_sample: sigma must be >= 0");
  Matrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = sigma == 0.0 ? 0.0 : sigma * rng.normal();
  return Tensor(std::move(m), Shape{rows, cols});
}

}  // namespace flr
