#include "flr/decoding.hpp"

#include <algorithm>
#include <numeric>

#include <spdlog/spdlog.h>

#include "flr/errors.hpp"

namespace flr::decoding {

namespace {

struct Beam {
  std::vector<TokenId> tokens;
  std::vector<double> log_probs;
  double total = 0.0;
  int node = 0;
};

double token_log_prob(const Vector& lp, TokenId token) {
  if (token < 0 || token >= lp.size()) {
    throw ShapeError("scorer returned " + std::to_string(lp.size()) + " log-probs, token " +
                     std::to_string(token) + " out of range");
  }
  return lp(token);
}

void sort_ranked(std::vector<Ranked>& ranked) {
  std::sort(ranked.begin(), ranked.end(), [](const Ranked& a, const Ranked& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.item < b.item;
  });
}

std::size_t clamp_top_k(const BeamConfig& config, const PrefixTrie& trie) {
  if (config.top_k > trie.item_count()) {
    spdlog::warn("top_k {} exceeds catalog size {}; clamping", config.top_k, trie.item_count());
    return trie.item_count();
  }
  return config.top_k;
}

Ranked finish(const Beam& beam, double end_lp, ItemId item, TokenId end_token, LengthNorm norm) {
  Ranked r;
  r.item = item;
  r.tokens = beam.tokens;
  r.tokens.push_back(end_token);
  auto lps = beam.log_probs;
  lps.push_back(end_lp);
  r.log_prob = beam.total + end_lp;
  r.score = score_sequence(lps, norm);
  return r;
}

}  // namespace

PrefixTrie::PrefixTrie() : nodes_(1) {}

PrefixTrie PrefixTrie::build(const data::Catalog& catalog) {
  PrefixTrie trie;
  for (const auto& item : catalog.items()) trie.insert(item.tokens, item.id);
  return trie;
}

void PrefixTrie::insert(std::span<const TokenId> title, ItemId item) {
  if (title.empty()) throw ContractError("item " + std::to_string(item) + " has an empty title");
  int cur = 0;
  for (TokenId t : title) {
    int next = child(cur, t);
    if (next < 0) {
      next = static_cast<int>(nodes_.size());
      nodes_[static_cast<std::size_t>(cur)].children.emplace(t, next);
      nodes_.emplace_back();
    }
    cur = next;
  }
  auto& terminal = nodes_[static_cast<std::size_t>(cur)].item;
  if (terminal) {
    throw DataError("duplicate title for items " + std::to_string(*terminal) + " and " + std::to_string(item));
  }
  terminal = item;
  ++items_;
  max_depth_ = std::max(max_depth_, title.size());
}

int PrefixTrie::child(int node, TokenId token) const {
  const auto& children = nodes_.at(static_cast<std::size_t>(node)).children;
  auto it = children.find(token);
  return it == children.end() ? -1 : it->second;
}

int PrefixTrie::walk(std::span<const TokenId> tokens) const {
  int cur = 0;
  for (TokenId t : tokens) {
    cur = child(cur, t);
    if (cur < 0) return -1;
  }
  return cur;
}

std::optional<ItemId> PrefixTrie::lookup(std::span<const TokenId> tokens) const {
  const int n = walk(tokens);
  if (n < 0) return std::nullopt;
  return node(n).item;
}

std::vector<std::pair<std::vector<TokenId>, ItemId>> PrefixTrie::titles() const {
  std::vector<std::pair<std::vector<TokenId>, ItemId>> out;
  std::vector<TokenId> path;
  auto visit = [&](auto&& self, int n) -> void {
    const auto& nd = node(n);
    if (nd.item) out.emplace_back(path, *nd.item);
    for (const auto& [t, c] : nd.children) {
      path.push_back(t);
      self(self, c);
      path.pop_back();
    }
  };
  visit(visit, 0);
  return out;
}

double score_sequence(std::span<const double> token_log_probs, LengthNorm norm) {
  if (token_log_probs.empty()) throw ContractError("score_sequence: empty sequence");
  const double total = std::accumulate(token_log_probs.begin(), token_log_probs.end(), 0.0);
  return norm == LengthNorm::Mean ? total / static_cast<double>(token_log_probs.size()) : total;
}

std::vector<Ranked> constrained_beam_search(const Scorer& scorer, const PrefixTrie& trie, const BeamConfig& config) {
  if (config.beam_width == 0) throw ConfigError("beam_width must be positive");
  if (config.beam_width < config.top_k) throw ConfigError("beam_width must be >= top_k");
  const std::size_t top_k = clamp_top_k(config, trie);

  std::vector<Ranked> finished;
  std::vector<Beam> active{Beam{}};
  while (!active.empty()) {
    std::vector<Beam> candidates;
    for (const auto& beam : active) {
      const auto& nd = trie.node(beam.node);
      const Vector lp = scorer(beam.tokens);
      if (nd.item) {
        finished.push_back(finish(beam, token_log_prob(lp, config.end_token), *nd.item, config.end_token, config.norm));
      }
      for (const auto& [token, next] : nd.children) {
        Beam b = beam;
        const double l = token_log_prob(lp, token);
        b.tokens.push_back(token);
        b.log_probs.push_back(l);
        b.total += l;
        b.node = next;
        candidates.push_back(std::move(b));
      }
    }
    // Candidates are generated in (parent, token) order, so a stable sort
    // keeps pruning deterministic under ties.
    std::stable_sort(candidates.begin(), candidates.end(),
                     [](const Beam& a, const Beam& b) { return a.total > b.total; });
    if (candidates.size() > config.beam_width) candidates.resize(config.beam_width);
    active = std::move(candidates);
  }

  sort_ranked(finished);
  if (finished.size() > top_k) finished.resize(top_k);
  return finished;
}

std::vector<Ranked> exhaustive_ranking(const Scorer& scorer, const PrefixTrie& trie, const BeamConfig& config) {
  const std::size_t top_k = clamp_top_k(config, trie);
  std::vector<Ranked> ranked;
  for (const auto& [title, item] : trie.titles()) {
    Beam beam;
    for (std::size_t i = 0; i < title.size(); ++i) {
      const double l = token_log_prob(scorer(std::span(title).first(i)), title[i]);
      beam.tokens.push_back(title[i]);
      beam.log_probs.push_back(l);
      beam.total += l;
    }
    ranked.push_back(finish(beam, token_log_prob(scorer(title), config.end_token), item, config.end_token, config.norm));
  }
  sort_ranked(ranked);
  if (ranked.size() > top_k) ranked.resize(top_k);
  return ranked;
}

}  // namespace flr::decoding
