#pragma once

#include <flr/ops.hpp>
#include <flr/rng.hpp>

namespace flr::testing {

inline Tensor random_tensor(Rng& rng, Index rows, Index cols, double scale = 1.0) {
  Matrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = scale * rng.normal();
  return Tensor(std::move(m), Shape{rows, cols});
}

// Random rows on the probability simplex with strictly positive entries.
inline Tensor random_simplex_rows(Rng& rng, Index rows, Index cols) {
  Matrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = 0.05 + rng.uniform();
  m.array().colwise() /= m.rowwise().sum().array();
  return Tensor(std::move(m), Shape{rows, cols});
}

}  // namespace flr::testing
