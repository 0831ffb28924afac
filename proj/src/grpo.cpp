#include "flr/grpo.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include <spdlog/spdlog.h>

#include "flr/errors.hpp"

namespace flr::grpo {

namespace {

std::vector<double> row_values(const Tensor& t) {
  const Matrix& m = t.value();
  return {m.data(), m.data() + m.size()};
}

double clip(double rho, const GrpoConfig& c) { return std::clamp(rho, 1.0 - c.clip_low, 1.0 + c.clip_high); }

}  // namespace

void GrpoConfig::validate() const {
  if (group_size < 2) throw ConfigError("grpo.group_size must be >= 2");
  if (!(noise_sigma >= 0.0)) throw ConfigError("grpo.noise_sigma must be >= 0");
  if (!(clip_low > 0.0) || !(clip_high > 0.0)) throw ConfigError("grpo clip bounds must be positive");
  if (!(kl_coef >= 0.0)) throw ConfigError("grpo.kl_coef must be >= 0");
  if (inner_epochs == 0) throw ConfigError("grpo.inner_epochs must be positive");
  if (!(lr > 0.0)) throw ConfigError("grpo.lr must be positive");
  if (prompts_per_step == 0) throw ConfigError("grpo.prompts_per_step must be positive");
}

double hybrid_reward(std::span<const double> log_probs, std::span<const TokenId> response,
                     std::span<const TokenId> target, const GrpoConfig& config) {
  if (log_probs.empty()) throw ContractError("hybrid_reward: empty response");
  const double mean_lp = std::accumulate(log_probs.begin(), log_probs.end(), 0.0) / static_cast<double>(log_probs.size());
  const bool match = std::equal(response.begin(), response.end(), target.begin(), target.end());
  return config.reward_alpha * mean_lp + config.reward_beta * (match ? 1.0 : 0.0);
}

std::vector<double> group_advantages(std::span<const double> rewards, double eps) {
  if (rewards.size() < 2) throw ContractError("group_advantages needs at least 2 rewards");
  const double base = rewards[0];
  double sq = 0.0;
  for (std::size_t i = 1; i < rewards.size(); ++i) sq += (rewards[i] - base) * (rewards[i] - base);
  const double denom = std::sqrt(sq) + eps;
  std::vector<double> adv(rewards.size(), 0.0);
  for (std::size_t i = 1; i < rewards.size(); ++i) adv[i] = (rewards[i] - base) / denom;
  return adv;
}

double reverse_kl(double delta) { return std::exp(delta) - delta - 1.0; }

double token_objective(double logp_new, double logp_old, double logp_ref, double advantage,
                       const GrpoConfig& config) {
  const double rho = std::exp(logp_new - logp_old);
  if (!std::isfinite(rho)) throw NumericError("non-finite importance ratio");
  const double surrogate = std::min(rho * advantage, clip(rho, config) * advantage);
  return surrogate - config.kl_coef * reverse_kl(logp_ref - logp_new);
}

Tensor token_objective(const Tensor& logp_new, std::span<const double> logp_old, std::span<const double> logp_ref,
                       double advantage, const GrpoConfig& config) {
  const Index t = logp_new.size();
  if (static_cast<Index>(logp_old.size()) != t || static_cast<Index>(logp_ref.size()) != t) {
    throw ShapeError("token_objective: log-prob lengths differ");
  }
  Matrix out(1, t);
  // d objective / d logp_new per token.
  Matrix slope(1, t);
  for (Index i = 0; i < t; ++i) {
    const double lp = logp_new.value().data()[i];
    const auto k = static_cast<std::size_t>(i);
    const double rho = std::exp(lp - logp_old[k]);
    if (!std::isfinite(rho)) throw NumericError("non-finite importance ratio");
    const double delta = logp_ref[k] - lp;
    const double unclipped = rho * advantage;
    const double clipped = clip(rho, config) * advantage;
    out(0, i) = std::min(unclipped, clipped) - config.kl_coef * reverse_kl(delta);
    slope(0, i) = (unclipped <= clipped ? unclipped : 0.0) + config.kl_coef * (std::exp(delta) - 1.0);
  }
  return make_result(std::move(out), logp_new.shape(), {logp_new}, [slope = std::move(slope)](detail::Node& n) {
    detail::accumulate(*n.parents[0], n.grad.cwiseProduct(slope));
  });
}

RolloutGroup sample_group(const Recommender& policy, const Recommender& reference, std::span<const TokenId> prompt,
                          std::span<const TokenId> target, const decoding::PrefixTrie& trie, const GrpoConfig& config,
                          Rng& rng) {
  config.validate();
  if (policy.n_iters() == 0 || reference.n_iters() == 0) throw ContractError("GRPO needs reasoning enabled");
  NoGradGuard no_grad;
  RolloutGroup group;
  group.prompt.assign(prompt.begin(), prompt.end());
  group.target.assign(target.begin(), target.end());

  const Index d = policy.backbone().config().d_model;
  const Context base = policy.reason(prompt);
  const Context ref_base = reference.reason(prompt);
  decoding::BeamConfig greedy;
  greedy.beam_width = 1;
  greedy.top_k = 1;

  std::vector<double> rewards;
  for (std::size_t i = 0; i < config.group_size; ++i) {
    Rollout r;
    r.noise = i == 0 ? Tensor(Matrix::Zero(1, d), Shape{1, d}) : gaussian_sample(rng, 1, d, config.noise_sigma);
    const Context ctx = policy.with_thought_noise(base, r.noise);
    const auto decoded = decoding::constrained_beam_search(policy.scorer(ctx), trie, greedy);
    // The trie is nonempty and every path ends in a title.
    if (decoded.empty()) throw Error("constrained greedy decode produced no title");
    r.response = decoded.front().tokens;
    r.item = decoded.front().item;
    r.old_log_probs = row_values(policy.response_log_probs(ctx, r.response));
    r.ref_log_probs = row_values(reference.response_log_probs(reference.with_thought_noise(ref_base, r.noise), r.response));
    r.exact_match = std::equal(r.response.begin(), r.response.end(), target.begin(), target.end());
    r.reward = hybrid_reward(r.old_log_probs, r.response, target, config);
    rewards.push_back(r.reward);
    group.samples.push_back(std::move(r));
  }
  const auto adv = group_advantages(rewards, config.advantage_eps);
  for (std::size_t i = 0; i < adv.size(); ++i) group.samples[i].advantage = adv[i];
  return group;
}

StepReport grpo_step(Recommender& policy, RegWeights& weights, AdamW& optimizer, std::span<const RolloutGroup> groups,
                     const GrpoConfig& config, const RegToggles& toggles) {
  config.validate();
  if (groups.empty()) throw ContractError("grpo_step: no rollout groups");
  StepReport report;
  std::size_t n_samples = 0, n_matches = 0;
  for (const auto& g : groups) {
    for (const auto& r : g.samples) {
      report.mean_reward += r.reward;
      report.mean_abs_advantage += std::abs(r.advantage);
      n_matches += r.exact_match ? 1 : 0;
      ++n_samples;
    }
  }
  report.mean_reward /= static_cast<double>(n_samples);
  report.mean_abs_advantage /= static_cast<double>(n_samples);
  report.exact_match_rate = static_cast<double>(n_matches) / static_cast<double>(n_samples);

  double kl_total = 0.0, clipped = 0.0, tokens_seen = 0.0;
  for (std::size_t epoch = 0; epoch < config.inner_epochs; ++epoch) {
    std::vector<Tensor> terms, factors, attention, gates;
    double n_tokens = 0.0;
    for (const auto& g : groups) {
      const Context base = policy.reason(g.prompt);
      const auto& bundle = base.trace.last();
      factors.push_back(bundle.factors);
      attention.push_back(bundle.attention);
      gates.push_back(bundle.gate);
      for (std::size_t i = 1; i < g.samples.size(); ++i) {
        const auto& r = g.samples[i];
        const Tensor lp = policy.response_log_probs(policy.with_thought_noise(base, r.noise), r.response);
        terms.push_back(sum(token_objective(lp, r.old_log_probs, r.ref_log_probs, r.advantage, config)));
        n_tokens += static_cast<double>(r.response.size());
        for (Index t = 0; t < lp.size(); ++t) {
          const auto k = static_cast<std::size_t>(t);
          const double lpn = lp.value().data()[t];
          const double rho = std::exp(lpn - r.old_log_probs[k]);
          kl_total += reverse_kl(r.ref_log_probs[k] - lpn);
          clipped += (rho < 1.0 - config.clip_low || rho > 1.0 + config.clip_high) ? 1.0 : 0.0;
          tokens_seen += 1.0;
        }
      }
    }
    const Tensor objective = scale(sum(concat_cols(terms)), 1.0 / n_tokens);
    Tensor l_orth, l_div, l_sparse;
    if (toggles.orth) l_orth = orth_loss(factors);
    if (toggles.div) l_div = attn_div_loss(attention);
    if (toggles.sparse) l_sparse = sparsity_loss(gates);
    const Tensor total = combine(scale(objective, -1.0), l_orth, l_div, l_sparse, weights);
    optimizer.zero_grad();
    total.backward();
    optimizer.step();

    report.objective = objective.item();
    report.l_orth = l_orth.defined() ? l_orth.item() : 0.0;
    report.l_div = l_div.defined() ? l_div.item() : 0.0;
    report.l_sparse = l_sparse.defined() ? l_sparse.item() : 0.0;
  }
  optimizer.zero_grad();
  report.kl_mean = tokens_seen > 0.0 ? kl_total / tokens_seen : 0.0;
  report.clip_fraction = tokens_seen > 0.0 ? clipped / tokens_seen : 0.0;
  return report;
}

GrpoResult train_grpo(Recommender& policy, RegWeights& weights, const data::DatasetBundle& bundle,
                      const GrpoConfig& config, const RegToggles& toggles, std::uint64_t seed) {
  config.validate();
  if (bundle.splits.train.empty()) throw DataError("no training examples");
  GrpoResult result;
  policy.backbone().params().set_requires_grad(false);
  result.backbone_checksum_before = policy.backbone().params().checksum();
  const Recommender reference(policy);

  ParamSet trainable;
  for (const auto& [name, t] : policy.flr().params()) trainable.add(name, t);
  for (const auto& [name, t] : weights.params()) trainable.add(name, t);
  AdamWConfig oc;
  oc.lr = config.lr;
  AdamW optimizer(trainable, oc);

  const auto trie = decoding::PrefixTrie::build(bundle.catalog);
  std::vector<TrainingPair> pairs;
  for (const auto& e : bundle.splits.train) pairs.push_back(make_pair(policy, e, bundle.catalog));

  const Rng root(seed, 11);
  for (std::size_t step = 0; step < config.steps; ++step) {
    Rng rng = root.fork(step);
    std::vector<RolloutGroup> groups;
    for (std::size_t j = 0; j < config.prompts_per_step; ++j) {
      const auto& p = pairs[rng.below(pairs.size())];
      groups.push_back(sample_group(policy, reference, p.prompt, p.response, trie, config, rng));
    }
    const auto report = grpo_step(policy, weights, optimizer, groups, config, toggles);
    if (!policy.flr().params().all_finite()) throw NumericError("non-finite FLR parameters at GRPO step " + std::to_string(step));
    result.log.push_back({step, report});
    if ((step + 1) % 20 == 0) {
      spdlog::info("grpo step {} reward {:.4f} match {:.3f} kl {:.5f}", step + 1, report.mean_reward,
                   report.exact_match_rate, report.kl_mean);
    }
  }
  result.backbone_checksum_after = policy.backbone().params().checksum();
  if (result.backbone_checksum_after != result.backbone_checksum_before) {
    throw Error("backbone parameters changed during GRPO");
  }
  policy.backbone().params().set_requires_grad(true);
  return result;
}

std::string grpo_log_csv(std::span<const GrpoLogRow> log) {
  std::ostringstream os;
  os.precision(10);
  os << "step,mean_reward,exact_match_rate,mean_abs_advantage,kl_mean,clip_fraction,l_orth,l_div,l_sparse\n";
  for (const auto& row : log) {
    const auto& r = row.report;
    os << row.step << ',' << r.mean_reward << ',' << r.exact_match_rate << ',' << r.mean_abs_advantage << ','
       << r.kl_mean << ',' << r.clip_fraction << ',' << r.l_orth << ',' << r.l_div << ',' << r.l_sparse << '\n';
  }
  return os.str();
}

}  // namespace flr::grpo
