#include <doctest.h>

#include <set>

#include "flr/decoding.hpp"
#include "flr/errors.hpp"
#include "flr/hash.hpp"
#include "support/helpers.hpp"

using namespace flr;
using namespace flr::decoding;

namespace {

// Deterministic pseudo-model: log-softmax of logits keyed by the prefix.
Scorer random_scorer(std::uint64_t seed, Index vocab, double temperature = 2.0) {
  return [=](std::span<const TokenId> prefix) {
    Fnv1a h;
    h.feed(&seed, sizeof seed);
    h.feed(prefix.data(), prefix.size_bytes());
    Rng rng(h.digest());
    Vector logits(vocab);
    for (Index i = 0; i < vocab; ++i) logits(i) = temperature * rng.normal();
    const double m = logits.maxCoeff();
    const double lse = m + std::log((logits.array() - m).exp().sum());
    return Vector(logits.array() - lse);
  };
}

struct RandomCatalog {
  PrefixTrie trie;
  std::vector<std::vector<TokenId>> titles;
};

// Titles of 1..4 tokens over a small alphabet so prefixes are shared.
RandomCatalog random_catalog(Rng& rng, std::size_t n_items, TokenId first, TokenId alphabet) {
  RandomCatalog c;
  std::set<std::vector<TokenId>> seen;
  while (c.titles.size() < n_items) {
    std::vector<TokenId> t(1 + rng.below(4));
    for (auto& tok : t) tok = first + static_cast<TokenId>(rng.below(alphabet));
    if (!seen.insert(t).second) continue;
    c.trie.insert(t, static_cast<ItemId>(c.titles.size()));
    c.titles.push_back(t);
  }
  return c;
}

}  // namespace

TEST_CASE("trie node counts") {
  PrefixTrie one;
  std::vector<TokenId> abc{7, 8, 9};
  one.insert(abc, 0);
  CHECK(one.node_count() == 4);
  CHECK(one.item_count() == 1);

  PrefixTrie two;
  std::vector<TokenId> abd{7, 8, 10};
  two.insert(abc, 0);
  two.insert(abd, 1);
  CHECK(two.node_count() == 5);
  int terminals = 0;
  for (std::size_t i = 0; i < two.node_count(); ++i) terminals += two.node(static_cast<int>(i)).item.has_value();
  CHECK(terminals == 2);
  CHECK(two.lookup(abd) == 1);
  std::vector<TokenId> ab{7, 8};
  CHECK_FALSE(two.lookup(ab).has_value());
  CHECK(two.walk(ab) >= 0);
  std::vector<TokenId> off{7, 9};
  CHECK(two.walk(off) == -1);
}

TEST_CASE("trie errors") {
  PrefixTrie t;
  std::vector<TokenId> a{7, 8};
  t.insert(a, 3);
  CHECK_THROWS_WITH_AS(t.insert(a, 5), "duplicate title for items 3 and 5", DataError);
  CHECK_THROWS_AS(t.insert({}, 6), ContractError);
}

TEST_CASE("trie membership over random catalogs") {
  Rng rng(21);
  for (int trial = 0; trial < 20; ++trial) {
    auto c = random_catalog(rng, 1 + rng.below(40), 7, 5);
    CHECK(c.trie.item_count() == c.titles.size());
    for (std::size_t i = 0; i < c.titles.size(); ++i) CHECK(c.trie.lookup(c.titles[i]) == static_cast<ItemId>(i));
    for (const auto& t : c.titles) {
      auto bad = t;
      bad[rng.below(bad.size())] = 99;
      CHECK_FALSE(c.trie.lookup(bad).has_value());
    }
    CHECK(c.trie.titles().size() == c.titles.size());
  }
}

TEST_CASE("score_sequence") {
  std::vector<double> one{-1.0};
  std::vector<double> two{-1.0, -3.0};
  std::vector<double> zeros{0.0, 0.0, 0.0};
  CHECK(score_sequence(one) == -1.0);
  CHECK(score_sequence(two) == -2.0);
  CHECK(score_sequence(two, LengthNorm::Sum) == -4.0);
  CHECK(score_sequence(zeros) == 0.0);
  CHECK_THROWS_AS(score_sequence({}), ContractError);
}

TEST_CASE("single item catalog is forced") {
  PrefixTrie t;
  std::vector<TokenId> title{7, 8};
  t.insert(title, 4);
  auto scorer = random_scorer(1, 12);
  BeamConfig cfg;
  cfg.top_k = 1;
  auto ranked = constrained_beam_search(scorer, t, cfg);
  REQUIRE(ranked.size() == 1);
  CHECK(ranked[0].item == 4);
  const double expected = (scorer({})(7) + scorer(std::span(title).first(1))(8) + scorer(title)(cfg.end_token)) / 3.0;
  CHECK(ranked[0].score == doctest::Approx(expected).epsilon(1e-14));
}

TEST_CASE("wide beam equals exhaustive ranking") {
  Rng rng(5);
  for (int trial = 0; trial < 60; ++trial) {
    auto c = random_catalog(rng, 1 + rng.below(50), 7, 6);
    auto scorer = random_scorer(rng.next_u64(), 14);
    BeamConfig cfg;
    cfg.norm = trial % 2 ? LengthNorm::Sum : LengthNorm::Mean;
    cfg.beam_width = c.titles.size() + rng.below(3);
    cfg.top_k = c.titles.size();
    auto beam = constrained_beam_search(scorer, c.trie, cfg);
    auto oracle = exhaustive_ranking(scorer, c.trie, cfg);
    REQUIRE(beam.size() == oracle.size());
    for (std::size_t i = 0; i < beam.size(); ++i) {
      CHECK(beam[i].item == oracle[i].item);
      CHECK(std::abs(beam[i].score - oracle[i].score) <= 1e-9);
    }
  }
}

TEST_CASE("titles that are prefixes of other titles") {
  PrefixTrie t;
  std::vector<TokenId> a{7}, ab{7, 8}, abc{7, 8, 9};
  t.insert(a, 0);
  t.insert(ab, 1);
  t.insert(abc, 2);
  auto scorer = random_scorer(9, 12);
  BeamConfig cfg;
  cfg.beam_width = 3;
  cfg.top_k = 3;
  auto beam = constrained_beam_search(scorer, t, cfg);
  auto oracle = exhaustive_ranking(scorer, t, cfg);
  REQUIRE(beam.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) CHECK(beam[i].item == oracle[i].item);
}

TEST_CASE("top_k is clamped and beam_width must cover it") {
  Rng rng(8);
  auto c = random_catalog(rng, 5, 7, 4);
  auto scorer = random_scorer(2, 12);
  BeamConfig cfg;
  cfg.beam_width = 20;
  cfg.top_k = 20;
  CHECK(constrained_beam_search(scorer, c.trie, cfg).size() == 5);
  cfg.beam_width = 2;
  cfg.top_k = 3;
  CHECK_THROWS_AS(constrained_beam_search(scorer, c.trie, cfg), ConfigError);
}

TEST_CASE("ties resolve by ascending item id") {
  PrefixTrie t;
  for (TokenId tok = 7; tok < 11; ++tok) {
    std::vector<TokenId> title{tok};
    t.insert(title, static_cast<ItemId>(20 - tok));
  }
  Scorer flat = [](std::span<const TokenId>) { return Vector::Constant(12, -std::log(12.0)); };
  BeamConfig cfg;
  cfg.top_k = 4;
  auto ranked = constrained_beam_search(flat, t, cfg);
  REQUIRE(ranked.size() == 4);
  for (std::size_t i = 1; i < ranked.size(); ++i) CHECK(ranked[i - 1].item < ranked[i].item);
}

TEST_CASE("soundness fuzz: every emission is a catalog title") {
  Rng rng(13);
  std::size_t emitted = 0;
  for (int trial = 0; trial < 400; ++trial) {
    auto c = random_catalog(rng, 2 + rng.below(30), 7, 5);
    auto scorer = random_scorer(rng.next_u64(), 13);
    BeamConfig cfg;
    cfg.beam_width = 1 + rng.below(8);
    cfg.top_k = 1 + rng.below(cfg.beam_width);
    for (const auto& r : constrained_beam_search(scorer, c.trie, cfg)) {
      REQUIRE(r.tokens.back() == cfg.end_token);
      CHECK(c.trie.lookup(std::span(r.tokens).first(r.tokens.size() - 1)) == r.item);
      ++emitted;
    }
  }
  CHECK(emitted > 400);
}

TEST_CASE("full-width beam never scores below a narrower beam") {
  Rng rng(17);
  int strict_monotone_violations = 0;
  for (int trial = 0; trial < 100; ++trial) {
    auto c = random_catalog(rng, 5 + rng.below(30), 7, 5);
    auto scorer = random_scorer(rng.next_u64(), 13);
    BeamConfig cfg;
    cfg.top_k = 1;
    double prev = -INFINITY;
    cfg.beam_width = c.titles.size();
    const double full = constrained_beam_search(scorer, c.trie, cfg)[0].score;
    for (std::size_t w = 1; w <= c.titles.size(); ++w) {
      cfg.beam_width = w;
      const double s = constrained_beam_search(scorer, c.trie, cfg)[0].score;
      CHECK(s <= full + 1e-12);
      if (s < prev) ++strict_monotone_violations;
      prev = s;
    }
  }
  MESSAGE("width-to-width decreases of the rank-1 score: " << strict_monotone_violations);
}
