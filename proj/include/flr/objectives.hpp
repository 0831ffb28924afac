#pragma once

#include <array>
#include <span>

#include "flr/ops.hpp"
#include "flr/params.hpp"

namespace flr {

inline constexpr double kSparsityEps = 1e-10;

// Learnable log-variance weights s_i with λ_i = 1 / (2 exp(s_i)).
// Registered as loss.s_orth, loss.s_div, loss.s_sparse.
class RegWeights {
 public:
  RegWeights();
  explicit RegWeights(ParamSet params);
  RegWeights(const RegWeights& other);
  RegWeights& operator=(const RegWeights&) = delete;

  // Pins λ_i to the given values and stops their gradients.
  void fix_lambdas(const std::array<double, 3>& lambdas);

  const Tensor& s(std::size_t i) const { return s_[i]; }
  double lambda(std::size_t i) const;
  std::array<double, 3> lambdas() const;
  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }

 private:
  void bind();
  ParamSet params_;
  std::array<Tensor, 3> s_;
};

struct LossReport {
  double l_rec = 0.0;
  double l_orth = 0.0;
  double l_div = 0.0;
  double l_sparse = 0.0;
  double l_total = 0.0;
  std::array<double, 3> lambda{};
  std::size_t batch_size = 0;
};

// Mean next-token cross-entropy over the target tokens. Row i of the last
// targets.size() rows of `logits` predicts targets[i]; earlier rows
// (prompt and thought positions) are ignored.
Tensor rec_loss(const Tensor& logits, std::span<const TokenId> targets);

// (1/B) Σ_b ‖F̂_b F̂_bᵀ − I_K‖²_F with rows L2-normalized.
Tensor orth_loss(std::span<const Tensor> factors);

// Batch mean of 2/(K(K−1)) Σ_{i<j} cos(A_i, A_j); zero for K = 1.
Tensor attn_div_loss(std::span<const Tensor> attention);

// −(1/B) Σ_b Σ_k α log(α + ε).
Tensor sparsity_loss(std::span<const Tensor> gates);

// l_rec + Σ_i [λ_i L_i + s_i/2] over the terms that are defined; an
// undefined tensor switches its term (and its penalty) off. Non-finite
// inputs raise NumericError.
Tensor combine(const Tensor& l_rec, const Tensor& l_orth, const Tensor& l_div,
               const Tensor& l_sparse, const RegWeights& weights);

}  // namespace flr
