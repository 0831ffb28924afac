#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "flr/data.hpp"
#include "flr/decoding.hpp"
#include "flr/objectives.hpp"
#include "flr/optim.hpp"
#include "flr/recommender.hpp"

namespace flr {

struct RegToggles {
  bool orth = true;
  bool div = true;
  bool sparse = true;
};

struct TrainingPair {
  std::vector<TokenId> prompt;
  std::vector<TokenId> response;  // title tokens then the end token
};

// Prompt fitted to the model's budget plus the target's response.
TrainingPair make_pair(const Recommender& model, const data::Example& example, const data::Catalog& catalog);

struct BatchLoss {
  Tensor total;
  LossReport report;
};

// Mean response cross-entropy over the batch plus the weighted
// regularizers of the final reasoning iteration.
BatchLoss sft_batch_loss(const Recommender& model, const RegWeights& weights, std::span<const TrainingPair> batch,
                         const RegToggles& toggles);

struct SftConfig {
  AdamWConfig optim{};
  std::size_t batch_size = 16;
  std::size_t max_epochs = 10;
  std::size_t max_steps = 0;   // 0 = no cap
  std::size_t eval_every = 0;  // steps between validations; 0 = once per epoch
  std::size_t patience = 3;    // validations without improvement before stopping
  std::size_t valid_subset = 200;
  std::size_t beam_width = 10;
  RegToggles toggles{};
  std::optional<std::array<double, 3>> fixed_lambdas;
  std::uint64_t seed = 0;
};

struct SftStepLog {
  std::size_t step = 0;
  std::size_t epoch = 0;
  LossReport loss;
  double grad_norm = 0.0;
};

struct SftResult {
  std::vector<SftStepLog> log;
  std::vector<std::pair<std::size_t, double>> valid_ndcg5;  // (step, value)
  double best_valid_ndcg5 = -1.0;
  std::size_t best_step = 0;
  std::size_t steps = 0;
};

struct SftHooks {
  // Called with the step index after each improving validation.
  std::function<void(std::size_t)> on_best;
};

// Joint backbone + FLR training with early stopping on validation NDCG@5.
// The best parameters are restored on return. A non-finite loss restores
// the best parameters and throws NumericError.
SftResult train_sft(Recommender& model, RegWeights& weights, const data::DatasetBundle& bundle,
                    const SftConfig& config, const SftHooks& hooks = {});

std::string sft_log_csv(std::span<const SftStepLog> log);

// Validation NDCG@5 over the first `subset` examples.
double validation_ndcg5(const Recommender& model, const data::DatasetBundle& bundle, const decoding::PrefixTrie& trie,
                        std::size_t subset, std::size_t beam_width);

}  // namespace flr
