#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "flr/data.hpp"
#include "flr/decoding.hpp"
#include "flr/recommender.hpp"

namespace flr::eval {

using data::ItemId;

// 1 iff target is among the first k entries.
double hit_rate_at_k(std::span<const ItemId> ranked, ItemId target, std::size_t k);
// 1/log₂(rank+1) for a 1-based rank ≤ k, else 0.
double ndcg_at_k(std::span<const ItemId> ranked, ItemId target, std::size_t k);

struct RankingResult {
  std::int64_t user_id = 0;
  ItemId target = 0;
  std::vector<ItemId> ranked;
  std::vector<double> scores;
};

struct GroupMetrics {
  double hr5 = 0.0, hr10 = 0.0, ndcg5 = 0.0, ndcg10 = 0.0;
  std::size_t n = 0;
};

GroupMetrics aggregate(std::span<const RankingResult> results);

// Top 20% of the catalog by training frequency (ties by ascending item id)
// is popular.
std::vector<bool> popularity_split(std::span<const std::size_t> train_counts, double popular_fraction = 0.2);

struct MetricsReport {
  GroupMetrics all, popular, unpopular;
  std::uint64_t seed = 0;
  std::string config_hash;

  nlohmann::json to_json() const;
};

MetricsReport build_report(std::span<const RankingResult> results, const std::vector<bool>& popular);

struct CorrelationReport {
  Matrix cosine;   // K×K over per-factor mean representations
  Matrix pearson;  // same vectors, centred
  double avg_abs_off_diagonal = 0.0;
  double avg_abs_off_diagonal_pearson = 0.0;
  // Mean over samples of the per-sample avg |off-diagonal| cosine.
  double per_sample_avg_abs_off_diagonal = 0.0;
};

// `factor_samples` holds one K×D factor matrix per evaluation sample.
CorrelationReport factor_correlation(std::span<const Matrix> factor_samples);

struct DisentanglementReport {
  double s_avg = 0.0;
  double a_max = 0.0;
  double ds = 0.0;
};

// `attention_samples` holds one K×L attention matrix per sample.
DisentanglementReport disentanglement_score(std::span<const Matrix> attention_samples);

double avg_abs_off_diagonal(const Matrix& m);

// Model-driven evaluation.

struct EvalOptions {
  decoding::BeamConfig beam;
  std::size_t max_examples = 0;  // 0 = all
  std::size_t max_response = 0;  // 0 = longest catalog title + end token
};

std::vector<RankingResult> rank_examples(const Recommender& model, std::span<const data::Example> examples,
                                         const data::Catalog& catalog, const decoding::PrefixTrie& trie,
                                         const EvalOptions& options);

// Final-iteration factor and attention matrices over the first
// `max_samples` examples.
struct FactorSamples {
  std::vector<Matrix> factors;
  std::vector<Matrix> attention;
};
FactorSamples collect_factors(const Recommender& model, std::span<const data::Example> examples,
                              const data::Catalog& catalog, std::size_t max_samples);

struct LatencyRow {
  std::string variant;
  Index n_iters = 0;
  std::vector<double> repeat_ms;  // mean per-sample decode time of each repeat
  double mean_ms = 0.0;
  double std_ms = 0.0;
  double reasoning_passes = 0.0;  // backbone passes per sample before decoding
  double decode_passes = 0.0;     // backbone passes per sample during beam search
};

struct LatencyOptions {
  std::size_t n_samples = 100;
  std::size_t beam_width = 10;
  std::size_t batch = 4;
  std::size_t repeats = 3;
};

// Times reason + constrained decode for each n_iters setting of `model`.
std::vector<LatencyRow> latency_bench(const Recommender& model, std::span<const Index> n_iters_variants,
                                      std::span<const data::Example> examples, const data::Catalog& catalog,
                                      const decoding::PrefixTrie& trie, const LatencyOptions& options);

std::string latency_csv(std::span<const LatencyRow> rows);
std::string matrix_csv(const Matrix& m);

}  // namespace flr::eval
