#pragma once

#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "flr/decoding.hpp"
#include "flr/reasoning.hpp"
#include "flr/transformer.hpp"

namespace flr {

// Conditioning state for response generation: the (refined) prompt
// embeddings and, with reasoning on, the factor trace that produced them.
struct Context {
  Tensor embeddings;  // L_ctx×D
  ReasoningTrace trace;
  // Backbone passes spent producing this context.
  std::uint64_t reasoning_passes = 0;

  Index length() const { return embeddings.rows(); }
};

// Backbone plus an optional FLR module. With n_iters == 0 the prompt is
// decoded directly; otherwise a thought slot is appended and refined
// n_iters times before decoding.
class Recommender {
 public:
  Recommender(ModelConfig model, FlrConfig flr, Index n_iters, Rng& rng);
  Recommender(Backbone backbone, std::optional<FlrModule> flr, Index n_iters);
  Recommender(const Recommender& other);
  Recommender& operator=(const Recommender&) = delete;

  Backbone& backbone() { return backbone_; }
  const Backbone& backbone() const { return backbone_; }
  bool has_flr() const { return flr_ != nullptr; }
  FlrModule& flr();
  const FlrModule& flr() const;
  Index n_iters() const { return n_iters_; }
  void set_n_iters(Index n);

  // Backbone and FLR parameters, in that order. Handles share storage.
  ParamSet all_params() const;

  // Refines the prompt. `thought_noise` (1×D) is added to the final
  // thought row when given.
  Context reason(std::span<const TokenId> prompt, const Tensor* thought_noise = nullptr) const;

  // Copy of a reasoning context whose final thought row is z⁽ᴺ⁾ + noise.
  Context with_thought_noise(const Context& base, const Tensor& noise) const;

  // Teacher-forced log-probabilities of each response token, 1×T.
  Tensor response_log_probs(const Context& context, std::span<const TokenId> response) const;

  // Next-token log-probs after `prefix`; recorded without history.
  Vector next_token_log_probs(const Context& context, std::span<const TokenId> prefix) const;

  // Scorer bound to `context`; the context must outlive it.
  decoding::Scorer scorer(const Context& context) const;

  // Longest prompt that fits alongside the thought slot and a response of
  // `max_response` tokens.
  Index prompt_budget(Index max_response) const;

 private:
  Backbone backbone_;
  std::unique_ptr<FlrModule> flr_;
  Index n_iters_;
};

// Keeps the most recent history items whose prompt fits `budget` tokens.
std::vector<TokenId> fit_prompt(std::span<const data::ItemId> history, const data::Catalog& catalog,
                                Index budget);

}  // namespace flr
