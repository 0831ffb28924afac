#pragma once

#include <span>
#include <utility>
#include <vector>

#include "flr/params.hpp"
#include "flr/transformer.hpp"

namespace flr {

struct FlrConfig {
  Index n_factors = 3;  // K
  Index n_iters = 2;    // N refinement passes
  // Gate MLP hidden width; 0 means 2·d_model.
  Index gate_hidden = 0;

  void validate() const;
};

// Per-iteration output of the factorized attention module.
struct FactorBundle {
  Tensor attention;  // K×L_in, rows on the simplex
  Tensor factors;    // K×D
  Tensor gate;       // 1×K, on the simplex
  Tensor thought;    // 1×D aggregated vector written into the thought slot
};

struct AugmentedPrompt {
  std::vector<TokenId> tokens;  // prompt followed by the thought token
  Index thought_position = 0;
};

// Appends the thought token. `max_prompt_len` is the room left after the
// thought slot and the response budget.
AugmentedPrompt augment_with_thought(std::span<const TokenId> prompt, TokenId thought_token,
                                     Index max_prompt_len);

struct ReasoningTrace {
  Tensor embeddings;  // E⁽ᴺ⁾ over the augmented prompt, L_in×D
  Index thought_position = 0;
  std::vector<FactorBundle> iterations;

  bool has_bundle() const { return !iterations.empty(); }
  const FactorBundle& last() const;
};

// K learnable factor prototypes attend over backbone hidden states; a gate
// MLP mixes the factor representations into the next thought embedding.
// Parameters: flr.{q_f,w_q,w_k,w_v,gate_w1,gate_b1,gate_w2,gate_b2,thought}.
class FlrModule {
 public:
  // Initializes the thought embedding to the mean row of `token_embedding`.
  FlrModule(FlrConfig config, const ModelConfig& model, const Tensor& token_embedding, Rng& rng);
  FlrModule(FlrConfig config, const ModelConfig& model, ParamSet params);
  FlrModule(const FlrModule& other);
  FlrModule& operator=(const FlrModule&) = delete;

  const FlrConfig& config() const { return config_; }
  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }
  const Tensor& thought_embedding() const { return thought_; }

  // E⁽⁰⁾: prompt token embeddings followed by the learnable thought row.
  Tensor initial_embeddings(const Backbone& backbone, std::span<const TokenId> prompt) const;

  // A = softmax((Q_f W_q)(RoPE(H W_k))ᵀ/√D + M), F = A (H W_v). Padded
  // positions are excluded; everything else, including the thought slot, is
  // attended to.
  std::pair<Tensor, Tensor> factor_attention(const Tensor& hidden,
                                             std::span<const bool> is_pad = {}) const;

  // alpha = softmax(MLP(flatten(F))), z = Σ_k alpha_k F_k.
  std::pair<Tensor, Tensor> gate_aggregate(const Tensor& factors) const;

  // N encode/attend/aggregate rounds; only the thought row of E changes.
  ReasoningTrace refine(const Backbone& backbone, std::span<const TokenId> prompt,
                        Index n_iters) const;

 private:
  void bind();

  FlrConfig config_;
  double rope_base_;
  Index d_model_;
  ParamSet params_;
  Tensor q_f_, w_q_, w_k_, w_v_, gate_w1_, gate_b1_, gate_w2_, gate_b2_, thought_;
};

}  // namespace flr
