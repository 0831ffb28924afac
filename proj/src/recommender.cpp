#include "flr/recommender.hpp"

#include "flr/errors.hpp"

namespace flr {

Recommender::Recommender(ModelConfig model, FlrConfig flr, Index n_iters, Rng& rng)
    : backbone_(model, rng), n_iters_(n_iters) {
  if (n_iters_ < 0) throw ConfigError("flr.n_iters must be >= 0");
  if (n_iters_ > 0) {
    flr.n_iters = n_iters_;
    flr_ = std::make_unique<FlrModule>(flr, backbone_.config(), backbone_.token_embedding(), rng);
  }
}

Recommender::Recommender(Backbone backbone, std::optional<FlrModule> flr, Index n_iters)
    : backbone_(std::move(backbone)), n_iters_(n_iters) {
  if (flr) flr_ = std::make_unique<FlrModule>(*flr);
  set_n_iters(n_iters);
}

Recommender::Recommender(const Recommender& other)
    : backbone_(other.backbone_),
      flr_(other.flr_ ? std::make_unique<FlrModule>(*other.flr_) : nullptr),
      n_iters_(other.n_iters_) {}

FlrModule& Recommender::flr() {
  if (!flr_) throw ContractError("recommender has no reasoning module");
  return *flr_;
}

const FlrModule& Recommender::flr() const {
  if (!flr_) throw ContractError("recommender has no reasoning module");
  return *flr_;
}

void Recommender::set_n_iters(Index n) {
  if (n < 0) throw ConfigError("flr.n_iters must be >= 0");
  if (n > 0 && !flr_) throw ConfigError("reasoning requested without a reasoning module");
  n_iters_ = n;
}

ParamSet Recommender::all_params() const {
  ParamSet out;
  for (const auto& [name, t] : backbone_.params()) out.add(name, t);
  if (flr_) {
    for (const auto& [name, t] : flr_->params()) out.add(name, t);
  }
  return out;
}

Context Recommender::reason(std::span<const TokenId> prompt, const Tensor* thought_noise) const {
  Context ctx;
  if (n_iters_ == 0) {
    if (thought_noise) throw ContractError("thought noise requires reasoning");
    ctx.embeddings = backbone_.embed(prompt);
    return ctx;
  }
  const auto before = backbone_.forward_passes();
  ctx.trace = flr_->refine(backbone_, prompt, n_iters_);
  ctx.reasoning_passes = backbone_.forward_passes() - before;
  ctx.embeddings = ctx.trace.embeddings;
  return thought_noise ? with_thought_noise(ctx, *thought_noise) : ctx;
}

Context Recommender::with_thought_noise(const Context& base, const Tensor& noise) const {
  if (!base.trace.has_bundle()) throw ContractError("thought noise requires reasoning");
  const Tensor& z = base.trace.last().thought;
  if (noise.rows() != 1 || noise.cols() != z.cols()) throw ShapeError("thought noise must be 1×D");
  Context ctx = base;
  ctx.embeddings = replace_row(base.trace.embeddings, base.trace.thought_position, add(z, noise));
  return ctx;
}

Tensor Recommender::response_log_probs(const Context& context, std::span<const TokenId> response) const {
  if (response.empty()) throw ContractError("response_log_probs: empty response");
  const auto t = static_cast<Index>(response.size());
  Tensor input = context.embeddings;
  if (t > 1) {
    const Tensor parts[] = {context.embeddings, backbone_.embed(response.first(response.size() - 1))};
    input = concat_rows(parts);
  }
  const Tensor hidden = backbone_.encode(input);
  const Tensor rows = row_slice(hidden, context.length() - 1, t);
  const Tensor lp = log_softmax(backbone_.next_token_logits(rows));
  std::vector<Index> cols(response.begin(), response.end());
  return pick(lp, cols);
}

Vector Recommender::next_token_log_probs(const Context& context, std::span<const TokenId> prefix) const {
  NoGradGuard no_grad;
  Tensor input = context.embeddings;
  if (!prefix.empty()) {
    const Tensor parts[] = {context.embeddings, backbone_.embed(prefix)};
    input = concat_rows(parts);
  }
  const Tensor hidden = backbone_.encode(input);
  const Tensor last = row_slice(hidden, hidden.rows() - 1, 1);
  return log_softmax(backbone_.next_token_logits(last)).value().row(0).transpose();
}

decoding::Scorer Recommender::scorer(const Context& context) const {
  return [this, &context](std::span<const TokenId> prefix) { return next_token_log_probs(context, prefix); };
}

Index Recommender::prompt_budget(Index max_response) const {
  const Index thought = n_iters_ > 0 ? 1 : 0;
  return backbone_.config().max_seq_len - thought - (max_response - 1);
}

std::vector<TokenId> fit_prompt(std::span<const data::ItemId> history, const data::Catalog& catalog, Index budget) {
  std::size_t skip = 0;
  for (;;) {
    auto prompt = data::to_prompt(history.subspan(skip), catalog);
    if (static_cast<Index>(prompt.size()) <= budget) return prompt;
    if (skip == history.size()) throw LengthError("even an empty history exceeds the prompt budget");
    ++skip;
  }
}

}  // namespace flr
