#include "flr/ops.hpp"

#include <cmath>
#include <string>

#include "flr/errors.hpp"
#include "flr/rotary.hpp"

namespace flr {

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(op) + ": shapes " + shape_string(a.shape()) + " and " +
                     shape_string(b.shape()) + " differ");
  }
}

void require_row(const Tensor& a, const Tensor& row, const char* op) {
  if (row.rows() != 1 || row.cols() != a.cols()) {
    throw ShapeError(std::string(op) + ": row " + shape_string(row.shape()) +
                     " does not broadcast over " + shape_string(a.shape()));
  }
}

Shape matrix_shape(Index r, Index c) { return {r, c}; }

detail::Node& parent(detail::Node& n, std::size_t i) { return *n.parents[i]; }

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: inner dimensions differ for " + shape_string(a.shape()) + " and " +
                     shape_string(b.shape()));
  }
  Matrix out = a.value() * b.value();
  return make_result(std::move(out), matrix_shape(a.rows(), b.cols()), {a, b},
                     [](detail::Node& n) {
                       auto& pa = parent(n, 0);
                       auto& pb = parent(n, 1);
                       if (pa.requires_grad) detail::accumulate(pa, n.grad * pb.value.transpose());
                       if (pb.requires_grad) detail::accumulate(pb, pa.value.transpose() * n.grad);
                     });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.cols()) {
    throw ShapeError("matmul_nt: column counts differ for " + shape_string(a.shape()) + " and " +
                     shape_string(b.shape()));
  }
  Matrix out = a.value() * b.value().transpose();
  return make_result(std::move(out), matrix_shape(a.rows(), b.rows()), {a, b},
                     [](detail::Node& n) {
                       auto& pa = parent(n, 0);
                       auto& pb = parent(n, 1);
                       if (pa.requires_grad) detail::accumulate(pa, n.grad * pb.value);
                       if (pb.requires_grad) detail::accumulate(pb, n.grad.transpose() * pa.value);
                     });
}

Tensor transpose(const Tensor& a) {
  Matrix out = a.value().transpose();
  return make_result(std::move(out), matrix_shape(a.cols(), a.rows()), {a},
                     [](detail::Node& n) { detail::accumulate(parent(n, 0), n.grad.transpose()); });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  return make_result(a.value() + b.value(), a.shape(), {a, b}, [](detail::Node& n) {
    detail::accumulate(parent(n, 0), n.grad);
    detail::accumulate(parent(n, 1), n.grad);
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  return make_result(a.value() - b.value(), a.shape(), {a, b}, [](detail::Node& n) {
    detail::accumulate(parent(n, 0), n.grad);
    detail::accumulate(parent(n, 1), -n.grad);
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  Matrix out = a.value().cwiseProduct(b.value());
  return make_result(std::move(out), a.shape(), {a, b}, [](detail::Node& n) {
    auto& pa = parent(n, 0);
    auto& pb = parent(n, 1);
    if (pa.requires_grad) detail::accumulate(pa, n.grad.cwiseProduct(pb.value));
    if (pb.requires_grad) detail::accumulate(pb, n.grad.cwiseProduct(pa.value));
  });
}

Tensor add_row(const Tensor& a, const Tensor& row) {
  require_row(a, row, "add_row");
  Matrix out = a.value().rowwise() + row.value().row(0);
  return make_result(std::move(out), a.shape(), {a, row}, [](detail::Node& n) {
    detail::accumulate(parent(n, 0), n.grad);
    auto& pr = parent(n, 1);
    if (pr.requires_grad) detail::accumulate(pr, n.grad.colwise().sum());
  });
}

Tensor mul_row(const Tensor& a, const Tensor& row) {
  require_row(a, row, "mul_row");
  Matrix out = a.value().array().rowwise() * row.value().row(0).array();
  return make_result(std::move(out), a.shape(), {a, row}, [](detail::Node& n) {
    auto& pa = parent(n, 0);
    auto& pr = parent(n, 1);
    if (pa.requires_grad) {
      Matrix g = n.grad.array().rowwise() * pr.value.row(0).array();
      detail::accumulate(pa, g);
    }
    if (pr.requires_grad) detail::accumulate(pr, n.grad.cwiseProduct(pa.value).colwise().sum());
  });
}

Tensor scale(const Tensor& a, double s) {
  return make_result(a.value() * s, a.shape(), {a},
                     [s](detail::Node& n) { detail::accumulate(parent(n, 0), n.grad * s); });
}

Tensor scale_by(const Tensor& a, const Tensor& s) {
  if (s.size() != 1) throw ShapeError("scale_by: factor must be a scalar, got " + shape_string(s.shape()));
  const double k = s.item();
  return make_result(a.value() * k, a.shape(), {a, s}, [](detail::Node& n) {
    auto& pa = parent(n, 0);
    auto& ps = parent(n, 1);
    if (pa.requires_grad) detail::accumulate(pa, n.grad * ps.value(0, 0));
    if (ps.requires_grad) {
      Matrix g(1, 1);
      g(0, 0) = n.grad.cwiseProduct(pa.value).sum();
      detail::accumulate(ps, g);
    }
  });
}

Tensor add_scalar(const Tensor& a, double s) {
  Matrix out = a.value().array() + s;
  return make_result(std::move(out), a.shape(), {a},
                     [](detail::Node& n) { detail::accumulate(parent(n, 0), n.grad); });
}

Tensor exp(const Tensor& a) {
  Matrix out = a.value().array().exp();
  return make_result(std::move(out), a.shape(), {a}, [](detail::Node& n) {
    detail::accumulate(parent(n, 0), n.grad.cwiseProduct(n.value));
  });
}

Tensor log(const Tensor& a) {
  Matrix out = a.value().array().log();
  return make_result(std::move(out), a.shape(), {a}, [](detail::Node& n) {
    auto& pa = parent(n, 0);
    detail::accumulate(pa, n.grad.cwiseQuotient(pa.value));
  });
}

Tensor square(const Tensor& a) {
  Matrix out = a.value().array().square();
  return make_result(std::move(out), a.shape(), {a}, [](detail::Node& n) {
    auto& pa = parent(n, 0);
    detail::accumulate(pa, 2.0 * n.grad.cwiseProduct(pa.value));
  });
}

Tensor gelu(const Tensor& a) {
  // tanh approximation
  static constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
  static constexpr double k = 0.044715;
  const Matrix& x = a.value();
  // tanh(u) = 1 − 2/(e^{2u} + 1); the vectorized exp is far cheaper than tanh.
  Matrix t = 1.0 - 2.0 / ((2.0 * c * (x.array() + k * x.array().cube())).exp() + 1.0);
  Matrix out = 0.5 * x.array() * (1.0 + t.array());
  return make_result(std::move(out), a.shape(), {a}, [t = std::move(t)](detail::Node& n) {
    auto& pa = parent(n, 0);
    const auto x = pa.value.array();
    const auto tt = t.array();
    Matrix d = 0.5 * (1.0 + tt) + 0.5 * x * (1.0 - tt.square()) * c * (1.0 + 3.0 * k * x.square());
    detail::accumulate(pa, n.grad.cwiseProduct(d));
  });
}

Tensor sum(const Tensor& a) {
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  return make_result(std::move(out), Shape{}, {a}, [](detail::Node& n) {
    auto& pa = parent(n, 0);
    detail::accumulate(pa, Matrix::Constant(pa.value.rows(), pa.value.cols(), n.grad(0, 0)));
  });
}

Tensor mean(const Tensor& a) {
  if (a.size() == 0) throw ShapeError("mean of an empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.size()));
}

Tensor reshape(const Tensor& a, Shape shape) {
  Index n = 1;
  for (Index d : shape) n *= d;
  if (n != a.size()) {
    throw ShapeError("reshape: " + shape_string(a.shape()) + " to " + shape_string(shape));
  }
  const Index cols = shape.empty() ? 1 : shape.back();
  const Index rows = cols == 0 ? 0 : n / cols;
  Matrix out = Eigen::Map<const Matrix>(a.value().data(), rows, cols);
  return make_result(std::move(out), std::move(shape), {a}, [](detail::Node& n) {
    auto& pa = parent(n, 0);
    detail::accumulate(pa, Eigen::Map<const Matrix>(n.grad.data(), pa.value.rows(), pa.value.cols()));
  });
}

Tensor row_slice(const Tensor& a, Index start, Index count) {
  if (start < 0 || count < 0 || start + count > a.rows()) {
    throw ShapeError("row_slice [" + std::to_string(start) + ", +" + std::to_string(count) +
                     ") out of range for " + shape_string(a.shape()));
  }
  Matrix out = a.value().middleRows(start, count);
  return make_result(std::move(out), matrix_shape(count, a.cols()), {a},
                     [start, count](detail::Node& n) {
                       auto& pa = parent(n, 0);
                       Matrix g = Matrix::Zero(pa.value.rows(), pa.value.cols());
                       g.middleRows(start, count) = n.grad;
                       detail::accumulate(pa, g);
                     });
}

Tensor col_slice(const Tensor& a, Index start, Index count) {
  if (start < 0 || count < 0 || start + count > a.cols()) {
    throw ShapeError("col_slice [" + std::to_string(start) + ", +" + std::to_string(count) +
                     ") out of range for " + shape_string(a.shape()));
  }
  Matrix out = a.value().middleCols(start, count);
  return make_result(std::move(out), matrix_shape(a.rows(), count), {a},
                     [start, count](detail::Node& n) {
                       auto& pa = parent(n, 0);
                       Matrix g = Matrix::Zero(pa.value.rows(), pa.value.cols());
                       g.middleCols(start, count) = n.grad;
                       detail::accumulate(pa, g);
                     });
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_rows of nothing");
  const Index cols = parts.front().cols();
  Index rows = 0;
  for (const auto& p : parts) {
    if (p.cols() != cols) throw ShapeError("concat_rows: column mismatch " + shape_string(p.shape()));
    rows += p.rows();
  }
  Matrix out(rows, cols);
  Index at = 0;
  for (const auto& p : parts) {
    out.middleRows(at, p.rows()) = p.value();
    at += p.rows();
  }
  return make_result(std::move(out), matrix_shape(rows, cols),
                     std::vector<Tensor>(parts.begin(), parts.end()), [](detail::Node& n) {
                       Index at = 0;
                       for (auto& p : n.parents) {
                         const Index r = p->value.rows();
                         if (p->requires_grad) detail::accumulate(*p, n.grad.middleRows(at, r));
                         at += r;
                       }
                     });
}

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_cols of nothing");
  const Index rows = parts.front().rows();
  Index cols = 0;
  for (const auto& p : parts) {
    if (p.rows() != rows) throw ShapeError("concat_cols: row mismatch " + shape_string(p.shape()));
    cols += p.cols();
  }
  Matrix out(rows, cols);
  Index at = 0;
  for (const auto& p : parts) {
    out.middleCols(at, p.cols()) = p.value();
    at += p.cols();
  }
  return make_result(std::move(out), matrix_shape(rows, cols),
                     std::vector<Tensor>(parts.begin(), parts.end()), [](detail::Node& n) {
                       Index at = 0;
                       for (auto& p : n.parents) {
                         const Index c = p->value.cols();
                         if (p->requires_grad) detail::accumulate(*p, n.grad.middleCols(at, c));
                         at += c;
                       }
                     });
}

Tensor replace_row(const Tensor& base, Index row, const Tensor& replacement) {
  if (row < 0 || row >= base.rows()) {
    throw ShapeError("replace_row: row " + std::to_string(row) + " outside " + shape_string(base.shape()));
  }
  if (replacement.size() != base.cols()) {
    throw ShapeError("replace_row: replacement " + shape_string(replacement.shape()) +
                     " does not fit a row of " + shape_string(base.shape()));
  }
  Matrix out = base.value();
  out.row(row) = Eigen::Map<const Eigen::RowVectorXd>(replacement.value().data(), base.cols());
  return make_result(std::move(out), base.shape(), {base, replacement}, [row](detail::Node& n) {
    auto& pb = parent(n, 0);
    auto& pr = parent(n, 1);
    if (pb.requires_grad) {
      Matrix g = n.grad;
      g.row(row).setZero();
      detail::accumulate(pb, g);
    }
    if (pr.requires_grad) {
      detail::accumulate(pr, Eigen::Map<const Matrix>(n.grad.row(row).eval().data(), pr.value.rows(),
                                                      pr.value.cols()));
    }
  });
}

Tensor gather_rows(const Tensor& table, std::span<const TokenId> ids) {
  const auto count = static_cast<Index>(ids.size());
  Matrix out(count, table.cols());
  for (Index i = 0; i < count; ++i) {
    const TokenId id = ids[static_cast<std::size_t>(i)];
    if (id < 0 || id >= table.rows()) {
      throw ShapeError("gather_rows: id " + std::to_string(id) + " outside table " +
                       shape_string(table.shape()));
    }
    out.row(i) = table.value().row(id);
  }
  std::vector<TokenId> kept(ids.begin(), ids.end());
  return make_result(std::move(out), matrix_shape(count, table.cols()), {table},
                     [kept = std::move(kept)](detail::Node& n) {
                       auto& pt = parent(n, 0);
                       Matrix g = Matrix::Zero(pt.value.rows(), pt.value.cols());
                       for (std::size_t i = 0; i < kept.size(); ++i) {
                         g.row(kept[i]) += n.grad.row(static_cast<Index>(i));
                       }
                       detail::accumulate(pt, g);
                     });
}

Tensor pick(const Tensor& a, std::span<const Index> columns) {
  const auto count = static_cast<Index>(columns.size());
  if (count > a.rows()) throw ShapeError("pick: more indices than rows in " + shape_string(a.shape()));
  Matrix out(1, count);
  for (Index i = 0; i < count; ++i) {
    const Index c = columns[static_cast<std::size_t>(i)];
    if (c < 0 || c >= a.cols()) throw ShapeError("pick: column " + std::to_string(c) + " out of range");
    out(0, i) = a.value()(i, c);
  }
  std::vector<Index> kept(columns.begin(), columns.end());
  return make_result(std::move(out), Shape{count}, {a}, [kept = std::move(kept)](detail::Node& n) {
    auto& pa = parent(n, 0);
    Matrix g = Matrix::Zero(pa.value.rows(), pa.value.cols());
    for (std::size_t i = 0; i < kept.size(); ++i) g(static_cast<Index>(i), kept[i]) = n.grad(0, static_cast<Index>(i));
    detail::accumulate(pa, g);
  });
}

namespace {

void softmax_backward(detail::Node& n) {
  auto& pa = parent(n, 0);
  const Eigen::VectorXd dots = n.grad.cwiseProduct(n.value).rowwise().sum();
  Matrix g = n.value.cwiseProduct(n.grad.colwise() - dots);
  detail::accumulate(pa, g);
}

}  // namespace

Tensor softmax(const Tensor& logits) {
  const Matrix& x = logits.value();
  Matrix out = (x.colwise() - x.rowwise().maxCoeff()).array().exp();
  out.array().colwise() /= out.rowwise().sum().array();
  return make_result(std::move(out), logits.shape(), {logits}, softmax_backward);
}

Tensor log_softmax(const Tensor& logits) {
  const Matrix& x = logits.value();
  const Eigen::VectorXd m = x.rowwise().maxCoeff();
  Matrix shifted = x.colwise() - m;
  const Eigen::VectorXd lse = shifted.array().exp().rowwise().sum().log();
  Matrix out = shifted.colwise() - lse;
  return make_result(std::move(out), logits.shape(), {logits}, [](detail::Node& n) {
    auto& pa = parent(n, 0);
    const Matrix p = n.value.array().exp();
    const Eigen::VectorXd gs = n.grad.rowwise().sum();
    Matrix g = n.grad - (p.array().colwise() * gs.array()).matrix();
    detail::accumulate(pa, g);
  });
}

Tensor masked_softmax(const Tensor& logits, const Matrix& mask) {
  const Matrix& x = logits.value();
  if (mask.rows() != x.rows() || mask.cols() != x.cols()) {
    throw ShapeError("masked_softmax: mask [" + std::to_string(mask.rows()) + "x" +
                     std::to_string(mask.cols()) + "] does not match logits " +
                     shape_string(logits.shape()));
  }
  for (Index r = 0; r < x.rows(); ++r) {
    if (!(mask.row(r).array() > kMaskThreshold).any()) {
      throw ContractError("masked_softmax: row " + std::to_string(r) + " is fully masked");
    }
  }
  // Excluded entries underflow to exactly 0 after the shift.
  Matrix z = (mask.array() > kMaskThreshold).select(x + mask, kMasked);
  const Eigen::VectorXd m = z.rowwise().maxCoeff();
  Matrix out = (z.colwise() - m).unaryExpr([](double v) { return std::exp(v); });
  out.array().colwise() /= out.rowwise().sum().array();
  return make_result(std::move(out), logits.shape(), {logits}, softmax_backward);
}

Tensor row_normalize(const Tensor& a) {
  const Eigen::VectorXd norms = a.value().rowwise().norm();
  for (Index r = 0; r < norms.size(); ++r) {
    if (!std::isfinite(norms(r))) throw NumericError("row_normalize: non-finite row " + std::to_string(r));
    if (!(norms(r) > 0.0)) {
      throw ContractError("row_normalize: row " + std::to_string(r) + " has zero norm");
    }
  }
  Matrix out = a.value().array().colwise() / norms.array();
  return make_result(std::move(out), a.shape(), {a}, [norms](detail::Node& n) {
    auto& pa = parent(n, 0);
    const Eigen::VectorXd dots = n.grad.cwiseProduct(n.value).rowwise().sum();
    Matrix g = (n.grad - (n.value.array().colwise() * dots.array()).matrix()).array().colwise() /
               norms.array();
    detail::accumulate(pa, g);
  });
}

Tensor rms_norm(const Tensor& x, const Tensor& gain, double eps) {
  require_row(x, gain, "rms_norm");
  const double d = static_cast<double>(x.cols());
  const Eigen::VectorXd rms = (x.value().array().square().rowwise().sum() / d + eps).sqrt();
  Matrix normed = x.value().array().colwise() / rms.array();
  Matrix out = normed.array().rowwise() * gain.value().row(0).array();
  return make_result(std::move(out), x.shape(), {x, gain},
                     [rms, normed = std::move(normed), d](detail::Node& n) {
                       auto& px = parent(n, 0);
                       auto& pg = parent(n, 1);
                       if (pg.requires_grad) detail::accumulate(pg, n.grad.cwiseProduct(normed).colwise().sum());
                       if (px.requires_grad) {
                         Matrix gy = n.grad.array().rowwise() * pg.value.row(0).array();
                         const Eigen::VectorXd dots = gy.cwiseProduct(normed).rowwise().sum() / d;
                         Matrix g = (gy - (normed.array().colwise() * dots.array()).matrix()).array().colwise() /
                                    rms.array();
                         detail::accumulate(px, g);
                       }
                     });
}

Tensor rope(const Tensor& x, std::span<const Index> positions, double base) {
  if (x.cols() % 2 != 0) {
    throw ConfigError("rope: feature dimension " + std::to_string(x.cols()) + " must be even");
  }
  if (static_cast<Index>(positions.size()) != x.rows()) {
    throw ShapeError("rope: " + std::to_string(positions.size()) + " positions for " +
                     shape_string(x.shape()));
  }
  Matrix out = x.value();
  rotate_pairs(out, positions, base);
  std::vector<Index> kept(positions.begin(), positions.end());
  return make_result(std::move(out), x.shape(), {x}, [kept = std::move(kept), base](detail::Node& n) {
    Matrix g = n.grad;
    rotate_pairs(g, std::span<const Index>(kept), base, -1.0);
    detail::accumulate(parent(n, 0), g);
  });
}

Matrix causal_mask(Index length, std::span<const bool> is_pad) {
  Matrix mask = Matrix::Zero(length, length);
  for (Index i = 0; i < length; ++i) {
    for (Index j = 0; j < length; ++j) {
      const bool pad = !is_pad.empty() && is_pad[static_cast<std::size_t>(j)];
      if (j > i || (pad && j != i)) mask(i, j) = kMasked;
    }
  }
  return mask;
}

}  // namespace flr
