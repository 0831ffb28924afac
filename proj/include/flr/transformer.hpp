#pragma once

#include <atomic>
#include <span>
#include <vector>

#include "flr/ops.hpp"
#include "flr/params.hpp"
#include "flr/rng.hpp"

namespace flr {

struct ModelConfig {
  Index vocab_size = 600;
  Index d_model = 64;
  Index n_layers = 2;
  Index n_heads = 4;
  Index d_ff = 256;
  Index max_seq_len = 96;
  double rope_base = 10000.0;

  Index head_dim() const { return d_model / n_heads; }
  // Throws ConfigError on an inconsistent configuration.
  void validate() const;
};

// Rotary embedding with the even-dimension precondition checked up front.
Tensor apply_rope(const Tensor& x, std::span<const Index> positions, double base);

// Decoder-only pre-norm transformer with RoPE attention and tied
// input/output embeddings. Parameters are registered as:
//   tok_emb, layer{i}.{attn_norm,wq,wk,wv,wo,ffn_norm,w1,b1,w2,b2}, final_norm
class Backbone {
 public:
  Backbone(ModelConfig config, Rng& rng);
  Backbone(ModelConfig config, ParamSet params);

  Backbone(const Backbone& other);
  Backbone& operator=(const Backbone&) = delete;

  const ModelConfig& config() const { return config_; }
  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }
  const Tensor& token_embedding() const { return tok_emb_; }

  Tensor embed(std::span<const TokenId> tokens) const;

  // Causal self-attention stack over an L×D embedding matrix; returns the
  // final-norm hidden states. Each call counts as one forward pass.
  Tensor encode(const Tensor& embeddings, std::span<const bool> is_pad = {}) const;

  // Tied output projection: hidden · tok_embᵀ.
  Tensor next_token_logits(const Tensor& hidden) const;

  std::uint64_t forward_passes() const { return forward_passes_.load(); }
  void reset_forward_passes() { forward_passes_ = 0; }

 private:
  struct Layer {
    Tensor attn_norm, wq, wk, wv, wo, ffn_norm, w1, b1, w2, b2;
  };

  void bind();
  Tensor attention(const Layer& layer, const Tensor& x, const Matrix& mask,
                   std::span<const Index> positions) const;

  ModelConfig config_;
  ParamSet params_;
  Tensor tok_emb_;
  Tensor final_norm_;
  std::vector<Layer> layers_;
  mutable std::atomic<std::uint64_t> forward_passes_{0};
};

}  // namespace flr
