#pragma once

#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "flr/tensor.hpp"

namespace flr {

using TokenId = std::int32_t;

// Mask entries at or below this value are treated as excluded positions.
inline constexpr double kMaskThreshold = -1e30;
inline constexpr double kMasked = -std::numeric_limits<double>::infinity();

// Linear algebra.
Tensor matmul(const Tensor& a, const Tensor& b);
// a · bᵀ without materializing the transpose.
Tensor matmul_nt(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

// Elementwise arithmetic on equal shapes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
// Adds a 1×C row to every row of a.
Tensor add_row(const Tensor& a, const Tensor& row);
// Multiplies every row of a by a 1×C row.
Tensor mul_row(const Tensor& a, const Tensor& row);
Tensor scale(const Tensor& a, double s);
// a scaled by a scalar tensor.
Tensor scale_by(const Tensor& a, const Tensor& s);
Tensor add_scalar(const Tensor& a, double s);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor square(const Tensor& a);
Tensor gelu(const Tensor& a);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, double s) { return scale(a, s); }
inline Tensor operator*(double s, const Tensor& a) { return scale(a, s); }

// Reductions to a scalar.
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

// Structural ops.
Tensor reshape(const Tensor& a, Shape shape);
Tensor row_slice(const Tensor& a, Index start, Index count);
Tensor col_slice(const Tensor& a, Index start, Index count);
Tensor concat_rows(std::span<const Tensor> parts);
Tensor concat_cols(std::span<const Tensor> parts);
// Copy of `base` with row `row` replaced by the 1×C tensor `replacement`.
Tensor replace_row(const Tensor& base, Index row, const Tensor& replacement);
// Rows of `table` selected by ids.
Tensor gather_rows(const Tensor& table, std::span<const TokenId> ids);
// out[i] = a(i, columns[i]); returns a vector of length columns.size().
Tensor pick(const Tensor& a, std::span<const Index> columns);

// Row-wise normalizers.
Tensor softmax(const Tensor& logits);
Tensor log_softmax(const Tensor& logits);
// softmax(logits + mask) with excluded positions forced to exactly 0.
// A row with no admissible position is an error.
Tensor masked_softmax(const Tensor& logits, const Matrix& mask);
// Each row scaled to unit L2 norm; a zero row is an error.
Tensor row_normalize(const Tensor& a);
// x / rms(x) * gain, rms taken per row.
Tensor rms_norm(const Tensor& x, const Tensor& gain, double eps = 1e-6);

// Rotates dimension pairs (2i, 2i+1) of row r by positions[r]·base^(−2i/d).
Tensor rope(const Tensor& x, std::span<const Index> positions, double base);

// Additive mask for causal attention over `length` positions, optionally
// excluding padded keys.
Matrix causal_mask(Index length, std::span<const bool> is_pad = {});

}  // namespace flr
