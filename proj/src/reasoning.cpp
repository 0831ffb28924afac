#include "flr/reasoning.hpp"

#include <cmath>
#include <numeric>
#include <string>

#include "flr/errors.hpp"

namespace flr {

void FlrConfig::validate() const {
  if (n_factors < 1) throw ConfigError("flr.k must be >= 1");
  if (n_iters < 1) throw ConfigError("flr.n_iters must be >= 1");
  if (gate_hidden < 0) throw ConfigError("flr.gate_hidden must be >= 0");
}

AugmentedPrompt augment_with_thought(std::span<const TokenId> prompt, TokenId thought_token,
                                     Index max_prompt_len) {
  if (prompt.empty()) throw ContractError("augment_with_thought: empty prompt");
  if (static_cast<Index>(prompt.size()) > max_prompt_len) {
    throw LengthError("prompt of " + std::to_string(prompt.size()) + " tokens exceeds budget " +
                      std::to_string(max_prompt_len));
  }
  AugmentedPrompt out;
  out.tokens.assign(prompt.begin(), prompt.end());
  out.thought_position = static_cast<Index>(out.tokens.size());
  out.tokens.push_back(thought_token);
  return out;
}

const FactorBundle& ReasoningTrace::last() const {
  if (iterations.empty()) throw ContractError("reasoning trace has no factor bundle");
  return iterations.back();
}

FlrModule::FlrModule(FlrConfig config, const ModelConfig& model, const Tensor& token_embedding,
                     Rng& rng)
    : config_(config), rope_base_(model.rope_base), d_model_(model.d_model) {
  config_.validate();
  if (d_model_ % 2 != 0) throw ConfigError("FLR keys need an even d_model for RoPE");
  const Index d = d_model_;
  const Index k = config_.n_factors;
  const Index hidden = config_.gate_hidden > 0 ? config_.gate_hidden : 2 * d;
  const double proj_std = 1.0 / std::sqrt(static_cast<double>(d));
  params_.add("flr.q_f", normal_init(rng, k, d, proj_std));
  params_.add("flr.w_q", normal_init(rng, d, d, proj_std));
  params_.add("flr.w_k", normal_init(rng, d, d, proj_std));
  params_.add("flr.w_v", normal_init(rng, d, d, proj_std));
  params_.add("flr.gate_w1", normal_init(rng, k * d, hidden, 1.0 / std::sqrt(static_cast<double>(k * d))));
  params_.add("flr.gate_b1", Tensor(Matrix::Zero(1, hidden), Shape{1, hidden}));
  params_.add("flr.gate_w2", normal_init(rng, hidden, k, 1.0 / std::sqrt(static_cast<double>(hidden))));
  params_.add("flr.gate_b2", Tensor(Matrix::Zero(1, k), Shape{1, k}));
  Matrix mean_row = token_embedding.value().colwise().mean();
  params_.add("flr.thought", Tensor(std::move(mean_row), Shape{1, d}));
  params_.set_requires_grad(true);
  bind();
}

FlrModule::FlrModule(FlrConfig config, const ModelConfig& model, ParamSet params)
    : config_(config), rope_base_(model.rope_base), d_model_(model.d_model), params_(std::move(params)) {
  config_.validate();
  bind();
  if (q_f_.rows() != config_.n_factors || q_f_.cols() != d_model_) {
    throw ShapeError("flr.q_f " + shape_string(q_f_.shape()) + " does not match flr.k and d_model");
  }
}

FlrModule::FlrModule(const FlrModule& other)
    : config_(other.config_),
      rope_base_(other.rope_base_),
      d_model_(other.d_model_),
      params_(other.params_.clone()) {
  bind();
}

void FlrModule::bind() {
  q_f_ = params_.at("flr.q_f");
  w_q_ = params_.at("flr.w_q");
  w_k_ = params_.at("flr.w_k");
  w_v_ = params_.at("flr.w_v");
  gate_w1_ = params_.at("flr.gate_w1");
  gate_b1_ = params_.at("flr.gate_b1");
  gate_w2_ = params_.at("flr.gate_w2");
  gate_b2_ = params_.at("flr.gate_b2");
  thought_ = params_.at("flr.thought");
  if (gate_w2_.cols() != config_.n_factors) throw ShapeError("gate output width must equal flr.k");
}

Tensor FlrModule::initial_embeddings(const Backbone& backbone, std::span<const TokenId> prompt) const {
  const Tensor parts[] = {backbone.embed(prompt), thought_};
  return concat_rows(parts);
}

std::pair<Tensor, Tensor> FlrModule::factor_attention(const Tensor& hidden,
                                                      std::span<const bool> is_pad) const {
  const Index length = hidden.rows();
  if (!is_pad.empty() && static_cast<Index>(is_pad.size()) != length) {
    throw ShapeError("factor_attention: pad mask length differs from hidden states");
  }
  std::vector<Index> positions(static_cast<std::size_t>(length));
  std::iota(positions.begin(), positions.end(), Index{0});
  Matrix mask = Matrix::Zero(config_.n_factors, length);
  for (Index j = 0; j < length && !is_pad.empty(); ++j) {
    if (is_pad[static_cast<std::size_t>(j)]) mask.col(j).setConstant(kMasked);
  }
  const Tensor queries = matmul(q_f_, w_q_);
  const Tensor keys = rope(matmul(hidden, w_k_), positions, rope_base_);
  const Tensor scores = scale(matmul_nt(queries, keys), 1.0 / std::sqrt(static_cast<double>(d_model_)));
  Tensor attention = masked_softmax(scores, mask);
  Tensor factors = matmul(attention, matmul(hidden, w_v_));
  return {std::move(attention), std::move(factors)};
}

std::pair<Tensor, Tensor> FlrModule::gate_aggregate(const Tensor& factors) const {
  if (factors.rows() != config_.n_factors || factors.cols() != d_model_) {
    throw ShapeError("gate_aggregate: factors " + shape_string(factors.shape()));
  }
  const Tensor flat = reshape(factors, Shape{1, factors.size()});
  const Tensor hidden = gelu(add_row(matmul(flat, gate_w1_), gate_b1_));
  Tensor alpha = softmax(add_row(matmul(hidden, gate_w2_), gate_b2_));
  Tensor z = matmul(alpha, factors);
  return {std::move(alpha), std::move(z)};
}

ReasoningTrace FlrModule::refine(const Backbone& backbone, std::span<const TokenId> prompt,
                                 Index n_iters) const {
  if (n_iters < 1) throw ContractError("refine: n_iters must be >= 1");
  ReasoningTrace trace;
  trace.embeddings = initial_embeddings(backbone, prompt);
  trace.thought_position = static_cast<Index>(prompt.size());
  trace.iterations.reserve(static_cast<std::size_t>(n_iters));
  for (Index n = 0; n < n_iters; ++n) {
    const Tensor hidden = backbone.encode(trace.embeddings);
    auto [attention, factors] = factor_attention(hidden);
    auto [alpha, z] = gate_aggregate(factors);
    trace.embeddings = replace_row(trace.embeddings, trace.thought_position, z);
    trace.iterations.push_back(FactorBundle{std::move(attention), std::move(factors), std::move(alpha),
                                            std::move(z)});
  }
  return trace;
}

}  // namespace flr
