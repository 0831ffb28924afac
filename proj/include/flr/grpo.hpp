#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "flr/decoding.hpp"
#include "flr/optim.hpp"
#include "flr/train.hpp"

namespace flr::grpo {

struct GrpoConfig {
  std::size_t group_size = 8;  // G
  double noise_sigma = 0.05;
  double reward_alpha = 0.1;
  double reward_beta = 1.0;
  double clip_low = 0.2;
  double clip_high = 0.28;
  double kl_coef = 0.01;
  std::size_t inner_epochs = 2;
  double lr = 1e-4;
  double advantage_eps = 1e-8;
  std::size_t prompts_per_step = 4;
  std::size_t steps = 200;

  void validate() const;
};

struct Rollout {
  Tensor noise;                   // 1×D, zero for the baseline sample
  std::vector<TokenId> response;  // title tokens then the end token
  std::optional<data::ItemId> item;
  std::vector<double> old_log_probs;  // rollout-time policy, teacher-forced
  std::vector<double> ref_log_probs;  // reference policy
  double reward = 0.0;
  double advantage = 0.0;
  bool exact_match = false;
};

struct RolloutGroup {
  std::vector<TokenId> prompt;
  std::vector<TokenId> target;  // ground-truth response
  std::vector<Rollout> samples;  // samples[0] is the unperturbed baseline
};

// α·mean(log-probs) + β·𝟙(response == target).
double hybrid_reward(std::span<const double> log_probs, std::span<const TokenId> response,
                     std::span<const TokenId> target, const GrpoConfig& config);

// Â_i = (r_i − r₁)/(‖r_{2:G} − r₁‖₂ + ε), Â₁ = 0.
std::vector<double> group_advantages(std::span<const double> rewards, double eps = 1e-8);

// e^Δ − Δ − 1.
double reverse_kl(double delta);

// min(ρÂ, clip(ρ, 1−ε_l, 1+ε_h)Â) − β_KL·kl(logp_ref − logp_new), ρ = e^{new−old}.
double token_objective(double logp_new, double logp_old, double logp_ref, double advantage,
                       const GrpoConfig& config);

// Differentiable per-token objective over a 1×T row of new log-probs.
Tensor token_objective(const Tensor& logp_new, std::span<const double> logp_old, std::span<const double> logp_ref,
                       double advantage, const GrpoConfig& config);

// G latent-perturbed greedy decodes for one prompt. Sample 0 uses ε = 0.
RolloutGroup sample_group(const Recommender& policy, const Recommender& reference, std::span<const TokenId> prompt,
                          std::span<const TokenId> target, const decoding::PrefixTrie& trie, const GrpoConfig& config,
                          Rng& rng);

struct StepReport {
  double mean_reward = 0.0;
  double exact_match_rate = 0.0;
  double mean_abs_advantage = 0.0;
  double kl_mean = 0.0;
  double clip_fraction = 0.0;
  double objective = 0.0;
  double l_orth = 0.0, l_div = 0.0, l_sparse = 0.0;
};

// inner_epochs optimizer updates of the FLR (and loss-weight) parameters on
// a batch of groups. The baseline sample is excluded from the surrogate.
StepReport grpo_step(Recommender& policy, RegWeights& weights, AdamW& optimizer, std::span<const RolloutGroup> groups,
                     const GrpoConfig& config, const RegToggles& toggles);

struct GrpoLogRow {
  std::size_t step = 0;
  StepReport report;
};

struct GrpoResult {
  std::vector<GrpoLogRow> log;
  std::uint64_t backbone_checksum_before = 0;
  std::uint64_t backbone_checksum_after = 0;
};

// Stage-2 loop: the backbone is frozen, the reference is a copy of the
// incoming policy, prompts are drawn from the training split.
GrpoResult train_grpo(Recommender& policy, RegWeights& weights, const data::DatasetBundle& bundle,
                      const GrpoConfig& config, const RegToggles& toggles, std::uint64_t seed);

std::string grpo_log_csv(std::span<const GrpoLogRow> log);

}  // namespace flr::grpo
