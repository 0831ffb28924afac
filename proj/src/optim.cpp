#include "flr/optim.hpp"

#include <cmath>

#include "flr/errors.hpp"

namespace flr {

AdamW::AdamW(ParamSet params, AdamWConfig config) : params_(std::move(params)), config_(config) {
  if (!(config_.lr > 0.0)) throw ConfigError("learning rate must be positive");
  for (const auto& [name, t] : params_) {
    m_.push_back(Matrix::Zero(t.rows(), t.cols()));
    v_.push_back(Matrix::Zero(t.rows(), t.cols()));
  }
}

double AdamW::step() {
  double sq = 0.0;
  for (const auto& [name, t] : params_) {
    if (t.has_grad()) sq += t.grad().squaredNorm();
  }
  const double norm = std::sqrt(sq);
  if (!std::isfinite(norm)) throw NumericError("non-finite gradient norm");
  const double clip = config_.max_grad_norm > 0.0 && norm > config_.max_grad_norm ? config_.max_grad_norm / norm : 1.0;

  ++t_;
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  std::size_t i = 0;
  for (auto& [name, t] : params_) {
    auto& m = m_[i];
    auto& v = v_[i];
    ++i;
    if (!t.has_grad()) continue;
    const Matrix g = t.grad() * clip;
    m = config_.beta1 * m + (1.0 - config_.beta1) * g;
    v = config_.beta2 * v + (1.0 - config_.beta2) * g.cwiseProduct(g);
    Matrix& w = t.mutable_value();
    if (config_.weight_decay > 0.0) w *= 1.0 - config_.lr * config_.weight_decay;
    w.array() -= config_.lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + config_.eps);
  }
  return norm;
}

}  // namespace flr
