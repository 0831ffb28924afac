#include "flr/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include <spdlog/spdlog.h>

#include "flr/errors.hpp"
#include "flr/eval.hpp"

namespace flr {

TrainingPair make_pair(const Recommender& model, const data::Example& example, const data::Catalog& catalog) {
  TrainingPair p;
  p.response = catalog.at(example.target).tokens;
  p.response.push_back(data::Tokenizer::kEot);
  const auto budget = model.prompt_budget(static_cast<Index>(catalog.max_title_tokens() + 1));
  p.prompt = fit_prompt(example.history, catalog, budget);
  return p;
}

BatchLoss sft_batch_loss(const Recommender& model, const RegWeights& weights, std::span<const TrainingPair> batch,
                         const RegToggles& toggles) {
  if (batch.empty()) throw ContractError("sft_batch_loss: empty batch");
  std::vector<Tensor> rec_terms, factors, attention, gates;
  for (const auto& pair : batch) {
    const auto ctx = model.reason(pair.prompt);
    rec_terms.push_back(mean(model.response_log_probs(ctx, pair.response)));
    if (ctx.trace.has_bundle()) {
      const auto& b = ctx.trace.last();
      factors.push_back(b.factors);
      attention.push_back(b.attention);
      gates.push_back(b.gate);
    }
  }
  const Tensor l_rec = scale(sum(concat_cols(rec_terms)), -1.0 / static_cast<double>(batch.size()));
  Tensor l_orth, l_div, l_sparse;
  if (!factors.empty()) {
    if (toggles.orth) l_orth = orth_loss(factors);
    if (toggles.div) l_div = attn_div_loss(attention);
    if (toggles.sparse) l_sparse = sparsity_loss(gates);
  }
  BatchLoss out;
  out.total = combine(l_rec, l_orth, l_div, l_sparse, weights);
  auto& r = out.report;
  r.l_rec = l_rec.item();
  r.l_orth = l_orth.defined() ? l_orth.item() : 0.0;
  r.l_div = l_div.defined() ? l_div.item() : 0.0;
  r.l_sparse = l_sparse.defined() ? l_sparse.item() : 0.0;
  r.l_total = out.total.item();
  r.lambda = weights.lambdas();
  r.batch_size = batch.size();
  return out;
}

double validation_ndcg5(const Recommender& model, const data::DatasetBundle& bundle, const decoding::PrefixTrie& trie,
                        std::size_t subset, std::size_t beam_width) {
  eval::EvalOptions opts;
  opts.max_examples = subset;
  opts.beam.beam_width = beam_width;
  opts.beam.top_k = std::min<std::size_t>({beam_width, 10, trie.item_count()});
  const auto results = eval::rank_examples(model, bundle.splits.valid, bundle.catalog, trie, opts);
  return eval::aggregate(results).ndcg5;
}

SftResult train_sft(Recommender& model, RegWeights& weights, const data::DatasetBundle& bundle,
                    const SftConfig& config, const SftHooks& hooks) {
  if (config.batch_size == 0) throw ConfigError("batch size must be positive");
  if (bundle.splits.train.empty()) throw DataError("no training examples");
  if (config.fixed_lambdas) weights.fix_lambdas(*config.fixed_lambdas);

  ParamSet params = model.all_params();
  for (const auto& [name, t] : weights.params()) params.add(name, t);
  AdamW opt(params, config.optim);
  const auto trie = decoding::PrefixTrie::build(bundle.catalog);

  std::vector<TrainingPair> pairs;
  pairs.reserve(bundle.splits.train.size());
  for (const auto& e : bundle.splits.train) pairs.push_back(make_pair(model, e, bundle.catalog));

  SftResult result;
  ParamSet best = params.clone();
  std::size_t stale = 0;
  bool stop = false;
  const Rng root(config.seed, 7);

  auto validate = [&] {
    const double ndcg = validation_ndcg5(model, bundle, trie, config.valid_subset, config.beam_width);
    result.valid_ndcg5.emplace_back(result.steps, ndcg);
    spdlog::info("step {} valid ndcg@5 {:.4f}", result.steps, ndcg);
    if (ndcg > result.best_valid_ndcg5) {
      result.best_valid_ndcg5 = ndcg;
      result.best_step = result.steps;
      best.assign(params);
      stale = 0;
      if (hooks.on_best) hooks.on_best(result.steps);
    } else if (++stale >= config.patience) {
      stop = true;
    }
  };
  auto diverge = [&](const std::string& what) {
    params.assign(best);
    throw NumericError(what + " at step " + std::to_string(result.steps));
  };

  for (std::size_t epoch = 0; epoch < config.max_epochs && !stop; ++epoch) {
    std::vector<std::size_t> order(pairs.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle_rng = root.fork(epoch);
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    for (std::size_t start = 0; start < order.size() && !stop; start += config.batch_size) {
      std::vector<TrainingPair> batch;
      for (std::size_t i = start; i < std::min(order.size(), start + config.batch_size); ++i) {
        batch.push_back(pairs[order[i]]);
      }
      BatchLoss loss;
      try {
        loss = sft_batch_loss(model, weights, batch, config.toggles);
      } catch (const NumericError& e) {
        diverge(e.what());
      }
      opt.zero_grad();
      loss.total.backward();
      double gn = 0.0;
      try {
        gn = opt.step();
      } catch (const NumericError& e) {
        diverge(e.what());
      }
      if (!params.all_finite()) diverge("non-finite parameters");
      result.log.push_back({result.steps, epoch, loss.report, gn});
      ++result.steps;
      if (config.eval_every > 0 && result.steps % config.eval_every == 0) validate();
      if (config.max_steps > 0 && result.steps >= config.max_steps) stop = true;
    }
    if (config.eval_every == 0 && !stop) validate();
  }
  if (result.valid_ndcg5.empty() || result.valid_ndcg5.back().first != result.steps) {
    const bool was_stopped = stop;
    validate();
    stop = was_stopped;
  }
  params.assign(best);
  opt.zero_grad();
  return result;
}

std::string sft_log_csv(std::span<const SftStepLog> log) {
  std::ostringstream os;
  os.precision(10);
  os << "step,epoch,l_rec,l_orth,l_div,l_sparse,lambda1,lambda2,lambda3,l_total,grad_norm\n";
  for (const auto& s : log) {
    const auto& r = s.loss;
    os << s.step << ',' << s.epoch << ',' << r.l_rec << ',' << r.l_orth << ',' << r.l_div << ',' << r.l_sparse << ','
       << r.lambda[0] << ',' << r.lambda[1] << ',' << r.lambda[2] << ',' << r.l_total << ',' << s.grad_norm << '\n';
  }
  return os.str();
}

}  // namespace flr
