#include "flr/objectives.hpp"

#include <cmath>
#include <string>
#include <vector>

#include "flr/errors.hpp"

namespace flr {

namespace {

constexpr const char* kWeightNames[3] = {"loss.s_orth", "loss.s_div", "loss.s_sparse"};

Tensor batch_mean(std::vector<Tensor>& terms) {
  if (terms.size() == 1) return terms.front();
  return scale(sum(concat_cols(terms)), 1.0 / static_cast<double>(terms.size()));
}

void require_finite(const Tensor& t, const char* name) {
  if (t.defined() && !std::isfinite(t.item())) {
    throw NumericError(std::string("non-finite ") + name + " loss");
  }
}

}  // namespace

RegWeights::RegWeights() {
  for (const char* name : kWeightNames) params_.add(name, Tensor::scalar(0.0, true));
  bind();
}

RegWeights::RegWeights(ParamSet params) : params_(std::move(params)) { bind(); }

RegWeights::RegWeights(const RegWeights& other) : params_(other.params_.clone()) { bind(); }

void RegWeights::bind() {
  for (std::size_t i = 0; i < 3; ++i) s_[i] = params_.at(kWeightNames[i]);
}

void RegWeights::fix_lambdas(const std::array<double, 3>& lambdas) {
  for (std::size_t i = 0; i < 3; ++i) {
    if (!(lambdas[i] > 0.0)) throw ConfigError("fixed lambda values must be positive");
    s_[i].mutable_value()(0, 0) = -std::log(2.0 * lambdas[i]);
    s_[i].set_requires_grad(false);
  }
}

double RegWeights::lambda(std::size_t i) const { return 0.5 * std::exp(-s_[i].item()); }

std::array<double, 3> RegWeights::lambdas() const { return {lambda(0), lambda(1), lambda(2)}; }

Tensor rec_loss(const Tensor& logits, std::span<const TokenId> targets) {
  if (targets.empty()) throw ContractError("rec_loss: empty target");
  const auto count = static_cast<Index>(targets.size());
  if (count > logits.rows()) {
    throw ShapeError("rec_loss: " + std::to_string(count) + " targets for logits " +
                     shape_string(logits.shape()));
  }
  const Tensor rows = row_slice(logits, logits.rows() - count, count);
  std::vector<Index> columns(targets.begin(), targets.end());
  return scale(sum(pick(log_softmax(rows), columns)), -1.0 / static_cast<double>(count));
}

Tensor orth_loss(std::span<const Tensor> factors) {
  if (factors.empty()) throw ContractError("orth_loss: empty batch");
  std::vector<Tensor> terms;
  terms.reserve(factors.size());
  for (const auto& f : factors) {
    const Tensor normed = row_normalize(f);
    const Tensor identity(Matrix::Identity(f.rows(), f.rows()));
    terms.push_back(sum(square(matmul_nt(normed, normed) - identity)));
  }
  return batch_mean(terms);
}

Tensor attn_div_loss(std::span<const Tensor> attention) {
  if (attention.empty()) throw ContractError("attn_div_loss: empty batch");
  const Index k = attention.front().rows();
  if (k < 2) return Tensor::scalar(0.0);
  Matrix upper = Matrix::Zero(k, k);
  for (Index i = 0; i < k; ++i) {
    for (Index j = i + 1; j < k; ++j) upper(i, j) = 1.0;
  }
  const Tensor upper_mask(upper);
  const double pair_scale = 2.0 / static_cast<double>(k * (k - 1));
  std::vector<Tensor> terms;
  terms.reserve(attention.size());
  for (const auto& a : attention) {
    if (a.rows() != k) throw ShapeError("attn_div_loss: factor count differs within batch");
    const Tensor normed = row_normalize(a);
    terms.push_back(scale(sum(mul(matmul_nt(normed, normed), upper_mask)), pair_scale));
  }
  return batch_mean(terms);
}

Tensor sparsity_loss(std::span<const Tensor> gates) {
  if (gates.empty()) throw ContractError("sparsity_loss: empty batch");
  std::vector<Tensor> terms;
  terms.reserve(gates.size());
  for (const auto& g : gates) terms.push_back(scale(sum(mul(g, log(add_scalar(g, kSparsityEps)))), -1.0));
  return batch_mean(terms);
}

Tensor combine(const Tensor& l_rec, const Tensor& l_orth, const Tensor& l_div,
               const Tensor& l_sparse, const RegWeights& weights) {
  require_finite(l_rec, "recommendation");
  require_finite(l_orth, "orthogonality");
  require_finite(l_div, "attention-diversity");
  require_finite(l_sparse, "sparsity");
  const Tensor* terms[3] = {&l_orth, &l_div, &l_sparse};
  Tensor total = l_rec;
  for (std::size_t i = 0; i < 3; ++i) {
    if (!terms[i]->defined()) continue;
    const Tensor& s = weights.s(i);
    const Tensor lambda = scale(exp(scale(s, -1.0)), 0.5);
    total = total + mul(lambda, *terms[i]) + scale(s, 0.5);
  }
  return total;
}

}  // namespace flr
