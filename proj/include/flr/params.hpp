#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "flr/rng.hpp"
#include "flr/tensor.hpp"

namespace flr {

// Named leaf tensors, in registration order. Copies share storage; use
// clone() for an independent snapshot.
class ParamSet {
 public:
  Tensor& add(std::string name, Tensor t);

  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
  bool contains(const std::string& name) const;

  std::size_t size() const { return entries_.size(); }
  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  void set_requires_grad(bool on);
  void zero_grad();
  ParamSet clone() const;
  // Copies values from `other` (same names and shapes) into this set.
  void assign(const ParamSet& other);
  bool all_finite() const;
  std::size_t parameter_count() const;
  // FNV-1a over names, shapes and raw value bytes.
  std::uint64_t checksum() const;

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
};

Tensor normal_init(Rng& rng, Index rows, Index cols, double std_dev);

}  // namespace flr
