#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "flr/ops.hpp"
#include "flr/rng.hpp"

namespace flr::data {

using ItemId = std::int32_t;

struct RawInteraction {
  std::int64_t user_id = 0;
  std::int64_t item_id = 0;
  std::int64_t timestamp = 0;  // seconds
  std::string title;
};

// Word-level vocabulary with fixed special tokens at ids 0..6.
class Tokenizer {
 public:
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kHist = 1;
  static constexpr TokenId kSep = 2;
  static constexpr TokenId kEoh = 3;
  static constexpr TokenId kThought = 4;
  static constexpr TokenId kEot = 5;
  static constexpr TokenId kUnk = 6;
  static constexpr TokenId kFirstWord = 7;

  Tokenizer();
  // Words ordered by descending frequency, then lexicographically. A
  // nonzero `max_words` keeps only the most frequent words.
  static Tokenizer build(std::span<const std::string> titles, std::size_t max_words = 0);
  static Tokenizer from_words(std::vector<std::string> words);

  std::vector<TokenId> encode(std::string_view text) const;
  std::string decode(std::span<const TokenId> tokens) const;
  std::size_t size() const { return words_.size(); }
  const std::string& word(TokenId id) const;
  const std::vector<std::string>& words() const { return words_; }

 private:
  std::vector<std::string> words_;
  std::map<std::string, TokenId, std::less<>> index_;
};

struct CatalogItem {
  ItemId id = 0;
  std::int64_t raw_id = 0;
  std::string title;
  std::vector<TokenId> tokens;
  std::vector<int> attributes;  // ground-truth factors, synthetic corpora only
};

// Items indexed densely by ItemId in ascending raw id order.
class Catalog {
 public:
  Catalog() = default;
  explicit Catalog(std::vector<CatalogItem> items);

  std::size_t size() const { return items_.size(); }
  const CatalogItem& at(ItemId id) const;
  const std::vector<CatalogItem>& items() const { return items_; }
  bool contains(ItemId id) const { return id >= 0 && static_cast<std::size_t>(id) < items_.size(); }
  // Throws DataError for an unknown raw id.
  ItemId lookup_raw(std::int64_t raw_id) const;
  std::size_t max_title_tokens() const;

 private:
  std::vector<CatalogItem> items_;
  std::map<std::int64_t, ItemId> by_raw_;
};

struct Example {
  std::int64_t user_id = 0;
  std::vector<ItemId> history;  // chronological, most recent last
  ItemId target = 0;
  std::int64_t timestamp = 0;  // of the target interaction
};

struct Splits {
  std::vector<Example> train, valid, test;
};

struct DatasetBundle {
  Splits splits;
  Catalog catalog;
  Tokenizer tokenizer;

  // Number of training examples whose target is each item.
  std::vector<std::size_t> train_item_counts() const;
  // FNV-1a over the serialized bundle; identical data gives identical hashes.
  std::uint64_t content_hash() const;
};

struct WindowResult {
  std::vector<RawInteraction> interactions;
  std::int64_t start = 0;
  int extensions = 0;
  bool threshold_reached = false;
};

inline constexpr std::int64_t kThreeMonths = 7'889'400;  // 3 × 30.4375 days

// Smallest window [init_start − k·step, end] whose 5-core has at least
// `item_threshold` unique items; falls back to the full range.
WindowResult select_window(std::span<const RawInteraction> interactions, std::int64_t end,
                           std::int64_t init_start, std::size_t item_threshold,
                           std::int64_t step = kThreeMonths);

// Maximal k-core: users and items with fewer than `k` interactions are
// removed until nothing changes. An empty core is a DataError.
std::vector<RawInteraction> five_core_filter(std::span<const RawInteraction> interactions,
                                             std::size_t k = 5);

// Most recent `max_len` entries, order preserved.
std::vector<ItemId> truncate_history(std::span<const ItemId> sequence, std::size_t max_len = 10);

// Sliding-window next-item examples; every item after a user's first is a
// target, with the preceding items (truncated) as history.
std::vector<Example> build_examples(std::span<const RawInteraction> interactions, const Catalog& catalog,
                                    std::size_t max_history = 10);

// Global sort by (timestamp, user, target) then an 8:1:1 cut.
Splits chronological_split(std::vector<Example> examples);

// HIST t₁ SEP t₂ … SEP tₙ EOH.
std::vector<TokenId> to_prompt(std::span<const ItemId> history, const Catalog& catalog);

struct SyntheticConfig {
  std::size_t n_items = 300;
  std::size_t n_users = 500;
  std::vector<int> attribute_sizes{5, 4, 3};  // K_true = attribute_sizes.size()
  double mixture_concentration = 0.3;         // symmetric Dirichlet over attributes
  std::size_t min_length = 8;
  std::size_t max_length = 20;
  double noise = 0.1;            // probability of an off-intent item
  double popularity_skew = 0.5;  // Zipf exponent over a random item order
  std::int64_t start_time = 1'500'000'000;
  std::uint64_t seed = 1;

  void validate() const;
};

struct SyntheticUser {
  std::int64_t user_id = 0;
  std::vector<double> mixture;    // over attributes
  std::vector<int> preferred;     // preferred value per attribute
};

struct SyntheticCorpus {
  std::vector<RawInteraction> interactions;
  std::vector<std::vector<int>> item_attributes;  // indexed by raw item id
  std::vector<double> item_popularity;            // sampling weights
  std::vector<SyntheticUser> users;
  SyntheticConfig config;
};

SyntheticCorpus generate_synthetic(const SyntheticConfig& config);

// Probability the generator assigns to each raw item as a user's next item.
std::vector<double> oracle_item_probabilities(const SyntheticCorpus& corpus, const SyntheticUser& user);

struct PipelineOptions {
  bool select_window = false;
  std::int64_t window_end = 0;
  std::int64_t window_start = 0;
  std::size_t item_threshold = 200;
  std::size_t core = 5;
  std::size_t max_history = 10;
  std::size_t max_vocab_words = 0;
};

// Window selection (optional), 5-core filtering, catalog and tokenizer
// construction, sliding-window examples and the chronological split.
// `attributes` (by raw item id) is attached to catalog items when given.
DatasetBundle build_bundle(std::span<const RawInteraction> interactions, const PipelineOptions& options,
                           const std::vector<std::vector<int>>* attributes = nullptr);

std::vector<RawInteraction> read_interactions_jsonl(const std::filesystem::path& path);
void write_interactions_jsonl(const std::filesystem::path& path, std::span<const RawInteraction> rows);

// catalog.jsonl, train/valid/test.jsonl, vocab.json.
void write_bundle(const std::filesystem::path& dir, const DatasetBundle& bundle);
DatasetBundle read_bundle(const std::filesystem::path& dir);

}  // namespace flr::data
