#include "flr/params.hpp"

#include <cstring>

#include "flr/errors.hpp"
#include "flr/hash.hpp"

namespace flr {

Tensor& ParamSet::add(std::string name, Tensor t) {
  if (contains(name)) throw ContractError("duplicate parameter " + name);
  entries_.emplace_back(std::move(name), std::move(t));
  return entries_.back().second;
}

Tensor& ParamSet::at(const std::string& name) {
  for (auto& [n, t] : entries_) {
    if (n == name) return t;
  }
  throw ContractError("unknown parameter " + name);
}

const Tensor& ParamSet::at(const std::string& name) const {
  return const_cast<ParamSet*>(this)->at(name);
}

bool ParamSet::contains(const std::string& name) const {
  for (const auto& [n, t] : entries_) {
    if (n == name) return true;
  }
  return false;
}

void ParamSet::set_requires_grad(bool on) {
  for (auto& [n, t] : entries_) t.set_requires_grad(on);
}

void ParamSet::zero_grad() {
  for (auto& [n, t] : entries_) t.zero_grad();
}

ParamSet ParamSet::clone() const {
  ParamSet out;
  for (const auto& [n, t] : entries_) out.add(n, Tensor(t.value(), t.shape(), t.requires_grad()));
  return out;
}

void ParamSet::assign(const ParamSet& other) {
  if (other.size() != size()) throw ContractError("ParamSet::assign: parameter count mismatch");
  for (auto& [n, t] : entries_) {
    const Tensor& src = other.at(n);
    if (src.shape() != t.shape()) throw ShapeError("ParamSet::assign: shape mismatch for " + n);
    t.mutable_value() = src.value();
  }
}

bool ParamSet::all_finite() const {
  for (const auto& [n, t] : entries_) {
    if (!t.value().allFinite()) return false;
  }
  return true;
}

std::size_t ParamSet::parameter_count() const {
  std::size_t total = 0;
  for (const auto& [n, t] : entries_) total += static_cast<std::size_t>(t.size());
  return total;
}

std::uint64_t ParamSet::checksum() const {
  Fnv1a h;
  for (const auto& [n, t] : entries_) {
    h.feed(n);
    for (Index d : t.shape()) h.feed(&d, sizeof d);
    h.feed(t.value().data(), static_cast<std::size_t>(t.size()) * sizeof(double));
  }
  return h.digest();
}

Tensor normal_init(Rng& rng, Index rows, Index cols, double std_dev) {
  Matrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = std_dev * rng.normal();
  return Tensor(std::move(m), Shape{rows, cols});
}

}  // namespace flr
