#include "flr/transformer.hpp"

#include <cmath>
#include <numeric>
#include <string>

#include "flr/errors.hpp"

namespace flr {

void ModelConfig::validate() const {
  if (vocab_size <= 0 || d_model <= 0 || n_layers <= 0 || n_heads <= 0 || d_ff <= 0 ||
      max_seq_len <= 0) {
    throw ConfigError("model dimensions must be positive");
  }
  if (d_model % n_heads != 0) {
    throw ConfigError("d_model " + std::to_string(d_model) + " not divisible by n_heads " +
                      std::to_string(n_heads));
  }
  if (head_dim() % 2 != 0) throw ConfigError("head dimension must be even for RoPE");
  if (!(rope_base > 1.0)) throw ConfigError("rope_base must exceed 1");
}

Tensor apply_rope(const Tensor& x, std::span<const Index> positions, double base) {
  if (x.cols() % 2 != 0) {
    throw ConfigError("apply_rope: odd feature dimension " + std::to_string(x.cols()));
  }
  return rope(x, positions, base);
}

Backbone::Backbone(ModelConfig config, Rng& rng) : config_(config) {
  config_.validate();
  const Index d = config_.d_model;
  const double proj_std = 1.0 / std::sqrt(static_cast<double>(d));
  const double out_scale = 1.0 / std::sqrt(2.0 * static_cast<double>(config_.n_layers));
  params_.add("tok_emb", normal_init(rng, config_.vocab_size, d, 0.05));
  for (Index i = 0; i < config_.n_layers; ++i) {
    const std::string p = "layer" + std::to_string(i) + ".";
    params_.add(p + "attn_norm", Tensor(Matrix::Ones(1, d), Shape{1, d}));
    params_.add(p + "wq", normal_init(rng, d, d, proj_std));
    params_.add(p + "wk", normal_init(rng, d, d, proj_std));
    params_.add(p + "wv", normal_init(rng, d, d, proj_std));
    params_.add(p + "wo", normal_init(rng, d, d, proj_std * out_scale));
    params_.add(p + "ffn_norm", Tensor(Matrix::Ones(1, d), Shape{1, d}));
    params_.add(p + "w1", normal_init(rng, d, config_.d_ff, proj_std));
    params_.add(p + "b1", Tensor(Matrix::Zero(1, config_.d_ff), Shape{1, config_.d_ff}));
    params_.add(p + "w2", normal_init(rng, config_.d_ff, d,
                                      out_scale / std::sqrt(static_cast<double>(config_.d_ff))));
    params_.add(p + "b2", Tensor(Matrix::Zero(1, d), Shape{1, d}));
  }
  params_.add("final_norm", Tensor(Matrix::Ones(1, d), Shape{1, d}));
  params_.set_requires_grad(true);
  bind();
}

Backbone::Backbone(ModelConfig config, ParamSet params)
    : config_(config), params_(std::move(params)) {
  config_.validate();
  bind();
  if (tok_emb_.rows() != config_.vocab_size || tok_emb_.cols() != config_.d_model) {
    throw ShapeError("token embedding " + shape_string(tok_emb_.shape()) +
                     " does not match the model config");
  }
}

Backbone::Backbone(const Backbone& other)
    : config_(other.config_), params_(other.params_.clone()) {
  bind();
}

void Backbone::bind() {
  tok_emb_ = params_.at("tok_emb");
  final_norm_ = params_.at("final_norm");
  layers_.clear();
  for (Index i = 0; i < config_.n_layers; ++i) {
    const std::string p = "layer" + std::to_string(i) + ".";
    layers_.push_back(Layer{params_.at(p + "attn_norm"), params_.at(p + "wq"), params_.at(p + "wk"),
                            params_.at(p + "wv"), params_.at(p + "wo"), params_.at(p + "ffn_norm"),
                            params_.at(p + "w1"), params_.at(p + "b1"), params_.at(p + "w2"),
                            params_.at(p + "b2")});
  }
}

Tensor Backbone::embed(std::span<const TokenId> tokens) const { return gather_rows(tok_emb_, tokens); }

Tensor Backbone::attention(const Layer& layer, const Tensor& x, const Matrix& mask,
                           std::span<const Index> positions) const {
  const Index hd = config_.head_dim();
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));
  const Tensor q = matmul(x, layer.wq);
  const Tensor k = matmul(x, layer.wk);
  const Tensor v = matmul(x, layer.wv);
  std::vector<Tensor> heads;
  heads.reserve(static_cast<std::size_t>(config_.n_heads));
  for (Index h = 0; h < config_.n_heads; ++h) {
    const Tensor qh = rope(col_slice(q, h * hd, hd), positions, config_.rope_base);
    const Tensor kh = rope(col_slice(k, h * hd, hd), positions, config_.rope_base);
    const Tensor weights = masked_softmax(scale(matmul_nt(qh, kh), inv_sqrt), mask);
    heads.push_back(matmul(weights, col_slice(v, h * hd, hd)));
  }
  return matmul(concat_cols(heads), layer.wo);
}

Tensor Backbone::encode(const Tensor& embeddings, std::span<const bool> is_pad) const {
  const Index length = embeddings.rows();
  if (length == 0) throw ContractError("encode: empty sequence");
  if (length > config_.max_seq_len) {
    throw LengthError("sequence length " + std::to_string(length) + " exceeds max_seq_len " +
                      std::to_string(config_.max_seq_len));
  }
  if (embeddings.cols() != config_.d_model) {
    throw ShapeError("encode: embeddings " + shape_string(embeddings.shape()) + " for d_model " +
                     std::to_string(config_.d_model));
  }
  if (!is_pad.empty() && static_cast<Index>(is_pad.size()) != length) {
    throw ShapeError("encode: pad mask length differs from sequence length");
  }
  ++forward_passes_;
  std::vector<Index> positions(static_cast<std::size_t>(length));
  std::iota(positions.begin(), positions.end(), Index{0});
  const Matrix mask = causal_mask(length, is_pad);

  Tensor x = embeddings;
  for (const auto& layer : layers_) {
    x = x + attention(layer, rms_norm(x, layer.attn_norm), mask, positions);
    const Tensor hidden = gelu(add_row(matmul(rms_norm(x, layer.ffn_norm), layer.w1), layer.b1));
    x = x + add_row(matmul(hidden, layer.w2), layer.b2);
  }
  return rms_norm(x, final_norm_);
}

Tensor Backbone::next_token_logits(const Tensor& hidden) const {
  if (hidden.cols() != config_.d_model) {
    throw ShapeError("next_token_logits: hidden " + shape_string(hidden.shape()));
  }
  return matmul_nt(hidden, tok_emb_);
}

}  // namespace flr
