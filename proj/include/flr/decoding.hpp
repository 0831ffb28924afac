#pragma once

#include <functional>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "flr/data.hpp"
#include "flr/ops.hpp"

namespace flr::decoding {

using data::ItemId;

// Token trie over catalog titles. Node 0 is the root.
class PrefixTrie {
 public:
  struct Node {
    std::map<TokenId, int> children;
    std::optional<ItemId> item;
  };

  PrefixTrie();
  static PrefixTrie build(const data::Catalog& catalog);

  // Throws DataError when the title is already present, naming both items.
  void insert(std::span<const TokenId> title, ItemId item);

  int root() const { return 0; }
  // -1 when there is no such child.
  int child(int node, TokenId token) const;
  // -1 when the sequence leaves the trie.
  int walk(std::span<const TokenId> tokens) const;
  const Node& node(int id) const { return nodes_.at(static_cast<std::size_t>(id)); }
  std::size_t node_count() const { return nodes_.size(); }
  std::size_t item_count() const { return items_; }
  std::size_t max_depth() const { return max_depth_; }

  // Item whose title is exactly `tokens`.
  std::optional<ItemId> lookup(std::span<const TokenId> tokens) const;
  // Every (title, item) pair in lexicographic token order.
  std::vector<std::pair<std::vector<TokenId>, ItemId>> titles() const;

 private:
  std::vector<Node> nodes_;
  std::size_t items_ = 0;
  std::size_t max_depth_ = 0;
};

// Log-probabilities over the vocabulary for the next response token given
// the response generated so far.
using Scorer = std::function<Vector(std::span<const TokenId> prefix)>;

enum class LengthNorm { Mean, Sum };

struct BeamConfig {
  std::size_t beam_width = 10;
  std::size_t top_k = 10;
  LengthNorm norm = LengthNorm::Mean;
  TokenId end_token = data::Tokenizer::kEot;
};

struct Ranked {
  ItemId item = 0;
  double score = 0.0;
  double log_prob = 0.0;        // summed over title tokens and the end token
  std::vector<TokenId> tokens;  // title tokens followed by the end token
};

// (Σ log-probs)/L, or the plain sum.
double score_sequence(std::span<const double> token_log_probs, LengthNorm norm = LengthNorm::Mean);

// Beam search whose expansions follow trie edges only. A hypothesis sitting
// on a terminal node also finishes by emitting the end token. Active beams
// are pruned by cumulative log-prob; finished items are ranked by score,
// ties by ascending item id.
std::vector<Ranked> constrained_beam_search(const Scorer& scorer, const PrefixTrie& trie,
                                            const BeamConfig& config);

// Scores every title in the trie and ranks them the same way.
std::vector<Ranked> exhaustive_ranking(const Scorer& scorer, const PrefixTrie& trie, const BeamConfig& config);

}  // namespace flr::decoding
