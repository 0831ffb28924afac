#include "flr/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <sstream>

#include "flr/errors.hpp"

namespace flr::eval {

using nlohmann::json;

namespace {

std::optional<std::size_t> rank_of(std::span<const ItemId> ranked, ItemId target, std::size_t k) {
  const std::size_t n = std::min(k, ranked.size());
  for (std::size_t i = 0; i < n; ++i) {
    if (ranked[i] == target) return i + 1;
  }
  return std::nullopt;
}

json group_json(const GroupMetrics& g) {
  return json{{"hr@5", g.hr5}, {"hr@10", g.hr10}, {"ndcg@5", g.ndcg5}, {"ndcg@10", g.ndcg10}, {"n_samples", g.n}};
}

Matrix cosine_matrix(const Matrix& rows, const char* what) {
  const Eigen::VectorXd norms = rows.rowwise().norm();
  for (Index k = 0; k < norms.size(); ++k) {
    if (!(norms(k) > 0.0)) throw ContractError(std::string(what) + ": factor " + std::to_string(k) + " has zero variance");
  }
  const Matrix unit = rows.array().colwise() / norms.array();
  Matrix c = unit * unit.transpose();
  c.diagonal().setOnes();
  return c;
}

double mean_of(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

}  // namespace

double hit_rate_at_k(std::span<const ItemId> ranked, ItemId target, std::size_t k) {
  return rank_of(ranked, target, k) ? 1.0 : 0.0;
}

double ndcg_at_k(std::span<const ItemId> ranked, ItemId target, std::size_t k) {
  const auto r = rank_of(ranked, target, k);
  return r ? 1.0 / std::log2(static_cast<double>(*r) + 1.0) : 0.0;
}

GroupMetrics aggregate(std::span<const RankingResult> results) {
  GroupMetrics g;
  g.n = results.size();
  if (results.empty()) return g;
  for (const auto& r : results) {
    g.hr5 += hit_rate_at_k(r.ranked, r.target, 5);
    g.hr10 += hit_rate_at_k(r.ranked, r.target, 10);
    g.ndcg5 += ndcg_at_k(r.ranked, r.target, 5);
    g.ndcg10 += ndcg_at_k(r.ranked, r.target, 10);
  }
  const auto n = static_cast<double>(g.n);
  g.hr5 /= n;
  g.hr10 /= n;
  g.ndcg5 /= n;
  g.ndcg10 /= n;
  return g;
}

std::vector<bool> popularity_split(std::span<const std::size_t> train_counts, double popular_fraction) {
  std::vector<std::size_t> order(train_counts.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return train_counts[a] > train_counts[b]; });
  const auto n_pop = static_cast<std::size_t>(std::floor(popular_fraction * static_cast<double>(order.size()) + 1e-9));
  std::vector<bool> popular(train_counts.size(), false);
  for (std::size_t i = 0; i < n_pop; ++i) popular[order[i]] = true;
  return popular;
}

json MetricsReport::to_json() const {
  json j = group_json(all);
  j["popular"] = group_json(popular);
  j["unpopular"] = group_json(unpopular);
  j["seed"] = seed;
  j["config_hash"] = config_hash;
  return j;
}

MetricsReport build_report(std::span<const RankingResult> results, const std::vector<bool>& popular) {
  std::vector<RankingResult> pop, unpop;
  for (const auto& r : results) {
    const auto t = static_cast<std::size_t>(r.target);
    if (t >= popular.size()) throw ContractError("target outside the popularity table");
    (popular[t] ? pop : unpop).push_back(r);
  }
  MetricsReport report;
  report.all = aggregate(results);
  report.popular = aggregate(pop);
  report.unpopular = aggregate(unpop);
  return report;
}

double avg_abs_off_diagonal(const Matrix& m) {
  const Index k = m.rows();
  if (k < 2) return 0.0;
  double total = 0.0;
  for (Index i = 0; i < k; ++i) {
    for (Index j = 0; j < k; ++j) {
      if (i != j) total += std::abs(m(i, j));
    }
  }
  return total / static_cast<double>(k * (k - 1));
}

CorrelationReport factor_correlation(std::span<const Matrix> factor_samples) {
  if (factor_samples.size() < 2) throw ContractError("factor_correlation needs at least 2 samples");
  Matrix mean = Matrix::Zero(factor_samples[0].rows(), factor_samples[0].cols());
  for (const auto& f : factor_samples) {
    if (f.rows() != mean.rows() || f.cols() != mean.cols()) throw ShapeError("factor samples differ in shape");
    mean += f;
  }
  mean /= static_cast<double>(factor_samples.size());

  CorrelationReport r;
  r.cosine = cosine_matrix(mean, "factor_correlation");
  const Matrix centred = mean.colwise() - mean.rowwise().mean();
  r.pearson = cosine_matrix(centred, "factor_correlation");
  r.avg_abs_off_diagonal = avg_abs_off_diagonal(r.cosine);
  r.avg_abs_off_diagonal_pearson = avg_abs_off_diagonal(r.pearson);
  std::vector<double> per_sample;
  for (const auto& f : factor_samples) per_sample.push_back(avg_abs_off_diagonal(cosine_matrix(f, "factor_correlation")));
  r.per_sample_avg_abs_off_diagonal = mean_of(per_sample);
  return r;
}

DisentanglementReport disentanglement_score(std::span<const Matrix> attention_samples) {
  if (attention_samples.empty()) throw ContractError("disentanglement_score needs at least 1 sample");
  std::vector<double> sims, maxima;
  for (const auto& a : attention_samples) {
    const Index k = a.rows();
    if (k < 2) throw ContractError("disentanglement score is undefined for a single factor");
    const Matrix c = cosine_matrix(a, "disentanglement_score");
    double pair_total = 0.0;
    for (Index i = 0; i < k; ++i) {
      for (Index j = i + 1; j < k; ++j) pair_total += c(i, j);
    }
    sims.push_back(pair_total / static_cast<double>(k * (k - 1) / 2));
    for (Index i = 0; i < k; ++i) maxima.push_back(a.row(i).maxCoeff());
  }
  DisentanglementReport r;
  r.s_avg = mean_of(sims);
  r.a_max = mean_of(maxima);
  r.ds = (1.0 - r.s_avg) * r.a_max;
  return r;
}

namespace {

Index response_budget(const data::Catalog& catalog, std::size_t max_response) {
  return static_cast<Index>(max_response > 0 ? max_response : catalog.max_title_tokens() + 1);
}

}  // namespace

std::vector<RankingResult> rank_examples(const Recommender& model, std::span<const data::Example> examples,
                                         const data::Catalog& catalog, const decoding::PrefixTrie& trie,
                                         const EvalOptions& options) {
  NoGradGuard no_grad;
  const std::size_t n = options.max_examples > 0 ? std::min(options.max_examples, examples.size()) : examples.size();
  const Index budget = model.prompt_budget(response_budget(catalog, options.max_response));
  std::vector<RankingResult> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& e = examples[i];
    const auto ctx = model.reason(fit_prompt(e.history, catalog, budget));
    RankingResult r;
    r.user_id = e.user_id;
    r.target = e.target;
    for (const auto& h : decoding::constrained_beam_search(model.scorer(ctx), trie, options.beam)) {
      r.ranked.push_back(h.item);
      r.scores.push_back(h.score);
    }
    out.push_back(std::move(r));
  }
  return out;
}

FactorSamples collect_factors(const Recommender& model, std::span<const data::Example> examples,
                              const data::Catalog& catalog, std::size_t max_samples) {
  if (model.n_iters() == 0) throw ContractError("collect_factors needs reasoning enabled");
  NoGradGuard no_grad;
  const Index budget = model.prompt_budget(response_budget(catalog, 0));
  FactorSamples out;
  const std::size_t n = std::min(max_samples, examples.size());
  for (std::size_t i = 0; i < n; ++i) {
    const auto ctx = model.reason(fit_prompt(examples[i].history, catalog, budget));
    out.factors.push_back(ctx.trace.last().factors.value());
    out.attention.push_back(ctx.trace.last().attention.value());
  }
  return out;
}

std::vector<LatencyRow> latency_bench(const Recommender& model, std::span<const Index> n_iters_variants,
                                      std::span<const data::Example> examples, const data::Catalog& catalog,
                                      const decoding::PrefixTrie& trie, const LatencyOptions& options) {
  if (examples.empty()) throw ContractError("latency_bench: no examples");
  if (options.repeats == 0 || options.n_samples == 0 || options.batch == 0) {
    throw ConfigError("latency_bench: repeats, n_samples and batch must be positive");
  }
  NoGradGuard no_grad;
  decoding::BeamConfig beam;
  beam.beam_width = options.beam_width;
  beam.top_k = std::min(options.beam_width, trie.item_count());

  std::vector<LatencyRow> rows;
  for (Index n_iters : n_iters_variants) {
    Recommender variant(model);
    variant.set_n_iters(n_iters);
    const Index budget = variant.prompt_budget(response_budget(catalog, 0));
    std::vector<std::vector<TokenId>> prompts;
    for (std::size_t i = 0; i < options.n_samples; ++i) {
      prompts.push_back(fit_prompt(examples[i % examples.size()].history, catalog, budget));
    }

    LatencyRow row;
    row.variant = n_iters == 0 ? "baseline" : "flr_n" + std::to_string(n_iters);
    row.n_iters = n_iters;
    std::uint64_t reasoning = 0, decode = 0;
    for (std::size_t rep = 0; rep < options.repeats; ++rep) {
      reasoning = 0;
      decode = 0;
      const auto t0 = std::chrono::steady_clock::now();
      for (std::size_t start = 0; start < prompts.size(); start += options.batch) {
        const std::size_t stop = std::min(prompts.size(), start + options.batch);
        std::vector<Context> contexts;
        for (std::size_t i = start; i < stop; ++i) {
          contexts.push_back(variant.reason(prompts[i]));
          reasoning += contexts.back().reasoning_passes;
        }
        for (const auto& ctx : contexts) {
          const auto before = variant.backbone().forward_passes();
          decoding::constrained_beam_search(variant.scorer(ctx), trie, beam);
          decode += variant.backbone().forward_passes() - before;
        }
      }
      const auto t1 = std::chrono::steady_clock::now();
      row.repeat_ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count() /
                              static_cast<double>(prompts.size()));
    }
    row.mean_ms = mean_of(row.repeat_ms);
    double var = 0.0;
    for (double v : row.repeat_ms) var += (v - row.mean_ms) * (v - row.mean_ms);
    row.std_ms = row.repeat_ms.size() > 1 ? std::sqrt(var / static_cast<double>(row.repeat_ms.size() - 1)) : 0.0;
    row.reasoning_passes = static_cast<double>(reasoning) / static_cast<double>(prompts.size());
    row.decode_passes = static_cast<double>(decode) / static_cast<double>(prompts.size());
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string latency_csv(std::span<const LatencyRow> rows) {
  std::ostringstream os;
  os << "variant,n_iters,repeat,ms_per_sample,mean_ms,std_ms,reasoning_passes,decode_passes\n";
  for (const auto& r : rows) {
    for (std::size_t i = 0; i < r.repeat_ms.size(); ++i) {
      os << r.variant << ',' << r.n_iters << ',' << i << ',' << r.repeat_ms[i] << ',' << r.mean_ms << ','
         << r.std_ms << ',' << r.reasoning_passes << ',' << r.decode_passes << '\n';
    }
  }
  return os.str();
}

std::string matrix_csv(const Matrix& m) {
  std::ostringstream os;
  os.precision(10);
  for (Index i = 0; i < m.rows(); ++i) {
    for (Index j = 0; j < m.cols(); ++j) os << (j ? "," : "") << m(i, j);
    os << '\n';
  }
  return os.str();
}

}  // namespace flr::eval
