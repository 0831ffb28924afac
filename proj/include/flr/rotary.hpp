#pragma once

#include <Eigen/Core>

#include <cmath>
#include <span>

namespace flr {

// In-place rotary embedding kernel. Row r, pair (2i, 2i+1) is rotated by
// direction · positions[r] · base^(−2i/d). direction = -1 applies the inverse
// rotation (used for gradients).
template <typename Derived>
void rotate_pairs(Eigen::MatrixBase<Derived>& x, std::span<const Eigen::Index> positions,
                  typename Derived::Scalar base, typename Derived::Scalar direction = 1) {
  using Scalar = typename Derived::Scalar;
  const Eigen::Index d = x.cols();
  Eigen::Array<Scalar, Eigen::Dynamic, 1> freq(d / 2);
  for (Eigen::Index i = 0; i < d / 2; ++i) freq(i) = std::pow(base, -Scalar(2 * i) / Scalar(d));
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const auto pos = static_cast<Scalar>(positions[static_cast<std::size_t>(r)]);
    if (pos == Scalar(0)) continue;
    for (Eigen::Index i = 0; 2 * i + 1 < d; ++i) {
      const Scalar angle = direction * pos * freq(i);
      const Scalar c = std::cos(angle);
      const Scalar s = std::sin(angle);
      const Scalar x0 = x(r, 2 * i);
      const Scalar x1 = x(r, 2 * i + 1);
      x(r, 2 * i) = x0 * c - x1 * s;
      x(r, 2 * i + 1) = x0 * s + x1 * c;
    }
  }
}

}  // namespace flr
