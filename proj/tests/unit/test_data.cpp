#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <set>

#include "flr/data.hpp"
#include "flr/errors.hpp"

using namespace flr;
using namespace flr::data;

namespace {

// users × items complete block, one interaction each, at timestamp ts.
void add_block(std::vector<RawInteraction>& rows, std::int64_t u0, std::int64_t nu, std::int64_t i0,
               std::int64_t ni, std::int64_t ts) {
  for (std::int64_t u = u0; u < u0 + nu; ++u) {
    for (std::int64_t i = i0; i < i0 + ni; ++i) rows.push_back({u, i, ts + i, "item " + std::to_string(i)});
  }
}

std::vector<RawInteraction> random_interactions(Rng& rng, int users, int items, int n) {
  std::vector<RawInteraction> rows;
  for (int k = 0; k < n; ++k) {
    auto item = static_cast<std::int64_t>(rng.below(items));
    rows.push_back({static_cast<std::int64_t>(rng.below(users)), item,
                    static_cast<std::int64_t>(rng.below(50)), "t " + std::to_string(item)});
  }
  return rows;
}

double ndcg_at(const std::vector<double>& scores, std::size_t target, std::size_t k) {
  std::size_t rank = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (scores[i] > scores[target] || (scores[i] == scores[target] && i < target)) ++rank;
  }
  return rank < k ? 1.0 / std::log2(static_cast<double>(rank) + 2.0) : 0.0;
}

SyntheticConfig small_config(std::uint64_t seed) {
  SyntheticConfig c;
  c.n_items = 60;
  c.n_users = 80;
  c.seed = seed;
  return c;
}

}  // namespace

TEST_CASE("tokenizer keeps special ids and round-trips titles") {
  std::vector<std::string> titles{"red shoe", "blue shoe", "red hat"};
  auto tok = Tokenizer::build(titles);
  CHECK(tok.word(Tokenizer::kPad) == "<pad>");
  CHECK(tok.word(Tokenizer::kThought) == "<thought>");
  CHECK(tok.word(Tokenizer::kEot) == "<eot>");
  CHECK(tok.size() == 7 + 4);
  // Most frequent words first.
  CHECK(tok.encode("red")[0] == Tokenizer::kFirstWord);
  for (const auto& t : titles) CHECK(tok.decode(tok.encode(t)) == t);
  CHECK(tok.encode("green shoe")[0] == Tokenizer::kUnk);

  auto capped = Tokenizer::build(titles, 1);
  CHECK(capped.size() == 8);
  CHECK_THROWS_AS(tok.word(99), DataError);
}

TEST_CASE("to_prompt template") {
  auto tok = Tokenizer::build(std::vector<std::string>{"a b c", "d"});
  Catalog catalog({{0, 10, "a b c", tok.encode("a b c"), {}}, {1, 11, "d", tok.encode("d"), {}}});

  auto empty = to_prompt({}, catalog);
  CHECK(empty == std::vector<TokenId>{Tokenizer::kHist, Tokenizer::kEoh});

  std::vector<ItemId> one{0};
  auto p = to_prompt(one, catalog);
  CHECK(p.size() == 5);
  CHECK(p.front() == Tokenizer::kHist);
  CHECK(p.back() == Tokenizer::kEoh);

  std::vector<ItemId> two{0, 1};
  auto q = to_prompt(two, catalog);
  CHECK(q.size() == 1 + 3 + 1 + 1 + 1);
  CHECK(q[4] == Tokenizer::kSep);
  CHECK(q == to_prompt(two, catalog));

  std::vector<ItemId> bad{7};
  CHECK_THROWS_AS(to_prompt(bad, catalog), DataError);
}

TEST_CASE("truncate_history") {
  std::vector<ItemId> three{1, 2, 3};
  CHECK(truncate_history(three) == three);
  std::vector<ItemId> fifteen(15);
  for (int i = 0; i < 15; ++i) fifteen[i] = i;
  auto t = truncate_history(fifteen);
  REQUIRE(t.size() == 10);
  for (int i = 0; i < 10; ++i) CHECK(t[i] == i + 5);
}

TEST_CASE("five_core_filter") {
  std::vector<RawInteraction> block;
  add_block(block, 0, 5, 0, 5, 100);

  SUBCASE("already a 5-core") { CHECK(five_core_filter(block).size() == block.size()); }

  SUBCASE("cascade removes a user that falls below 5") {
    auto rows = block;
    for (std::int64_t i = 0; i < 4; ++i) rows.push_back({99, i, 500 + i, "item"});
    rows.push_back({99, 42, 600, "rare"});
    auto out = five_core_filter(rows);
    CHECK(out.size() == block.size());
    for (const auto& r : out) CHECK(r.user_id != 99);
  }

  SUBCASE("too sparse") {
    std::vector<RawInteraction> rows{{1, 1, 0, "x"}, {2, 2, 0, "y"}};
    CHECK_THROWS_WITH_AS(five_core_filter(rows), "dataset too sparse", DataError);
  }

  SUBCASE("random fixtures: every survivor has >= 5 and the output is a fixpoint") {
    Rng rng(3);
    for (int trial = 0; trial < 30; ++trial) {
      auto rows = random_interactions(rng, 12, 10, 200);
      std::vector<RawInteraction> out;
      try {
        out = five_core_filter(rows);
      } catch (const DataError&) {
        continue;
      }
      std::map<std::int64_t, int> users, items;
      for (const auto& r : out) {
        ++users[r.user_id];
        ++items[r.item_id];
      }
      for (auto [u, n] : users) CHECK(n >= 5);
      for (auto [i, n] : items) CHECK(n >= 5);
      CHECK(five_core_filter(out).size() == out.size());
    }
  }
}

TEST_CASE("select_window") {
  const std::int64_t end = 1'000'000;
  const std::int64_t step = 100;
  const std::int64_t init = end - 50;
  std::vector<RawInteraction> rows;
  add_block(rows, 0, 5, 0, 5, end - 20);
  add_block(rows, 5, 5, 5, 5, init - 80);

  auto met = select_window(rows, end, init, 5, step);
  CHECK(met.threshold_reached);
  CHECK(met.extensions == 0);
  CHECK(met.start == init);
  CHECK(met.interactions.size() == 25);

  auto one = select_window(rows, end, init, 10, step);
  CHECK(one.threshold_reached);
  CHECK(one.extensions == 1);
  CHECK(one.start == init - step);
  CHECK(one.interactions.size() == 50);

  auto never = select_window(rows, end, init, 11, step);
  CHECK_FALSE(never.threshold_reached);
  CHECK(never.interactions.size() == 50);

  CHECK_THROWS_AS(select_window({}, end, init, 5, step), DataError);
}

TEST_CASE("chronological_split") {
  auto make = [](std::size_t n, auto ts_of) {
    std::vector<Example> out;
    for (std::size_t i = 0; i < n; ++i) {
      out.push_back({static_cast<std::int64_t>(i % 3), {}, static_cast<ItemId>(i), ts_of(i)});
    }
    return out;
  };

  auto s = chronological_split(make(10, [](std::size_t i) { return static_cast<std::int64_t>(100 - i); }));
  CHECK(s.train.size() == 8);
  CHECK(s.valid.size() == 1);
  CHECK(s.test.size() == 1);
  CHECK(s.test[0].timestamp == 100);

  CHECK_THROWS_AS(chronological_split(make(9, [](std::size_t) { return std::int64_t{0}; })), DataError);

  // Identical timestamps: order is fixed by (user, target) regardless of input order.
  auto tied = make(20, [](std::size_t) { return std::int64_t{5}; });
  auto a = chronological_split(tied);
  std::reverse(tied.begin(), tied.end());
  auto b = chronological_split(tied);
  for (std::size_t i = 0; i < a.test.size(); ++i) {
    CHECK(a.test[i].user_id == b.test[i].user_id);
    CHECK(a.test[i].target == b.test[i].target);
  }

  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 10 + rng.below(90);
    auto split = chronological_split(make(n, [&](std::size_t) { return static_cast<std::int64_t>(rng.below(30)); }));
    CHECK(split.train.size() + split.valid.size() + split.test.size() == n);
    auto max_ts = [](const std::vector<Example>& v) {
      std::int64_t m = INT64_MIN;
      for (const auto& e : v) m = std::max(m, e.timestamp);
      return m;
    };
    auto min_ts = [](const std::vector<Example>& v) {
      std::int64_t m = INT64_MAX;
      for (const auto& e : v) m = std::min(m, e.timestamp);
      return m;
    };
    CHECK(max_ts(split.train) <= min_ts(split.valid));
    CHECK(max_ts(split.valid) <= min_ts(split.test));
  }
}

TEST_CASE("synthetic corpus structure") {
  auto corpus = generate_synthetic(small_config(5));
  auto again = generate_synthetic(small_config(5));
  REQUIRE(corpus.interactions.size() == again.interactions.size());
  for (std::size_t i = 0; i < corpus.interactions.size(); ++i) {
    CHECK(corpus.interactions[i].item_id == again.interactions[i].item_id);
    CHECK(corpus.interactions[i].timestamp == again.interactions[i].timestamp);
  }
  CHECK(generate_synthetic(small_config(6)).interactions.size() > 0);

  std::set<std::string> titles;
  for (const auto& r : corpus.interactions) titles.insert(r.title);
  std::set<std::int64_t> items;
  for (const auto& r : corpus.interactions) items.insert(r.item_id);
  CHECK(titles.size() == items.size());
  CHECK(corpus.interactions.front().title.rfind("category_", 0) == 0);

  std::map<std::int64_t, std::int64_t> last_ts;
  for (const auto& r : corpus.interactions) {
    if (last_ts.count(r.user_id)) CHECK(r.timestamp > last_ts[r.user_id]);
    last_ts[r.user_id] = r.timestamp;
  }
  for (const auto& u : corpus.users) {
    double s = 0.0;
    for (double w : u.mixture) {
      CHECK(w >= 0.0);
      s += w;
    }
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  }

  auto p = oracle_item_probabilities(corpus, corpus.users[0]);
  double total = 0.0;
  for (double v : p) total += v;
  CHECK(total == doctest::Approx(1.0).epsilon(1e-12));

  SyntheticConfig bad = small_config(1);
  bad.attribute_sizes.clear();
  CHECK_THROWS_AS(generate_synthetic(bad), ConfigError);
}

TEST_CASE("single governing attribute without noise") {
  SyntheticConfig c = small_config(9);
  c.attribute_sizes = {4};
  c.noise = 0.0;
  auto corpus = generate_synthetic(c);
  for (const auto& r : corpus.interactions) {
    const auto& user = corpus.users[static_cast<std::size_t>(r.user_id)];
    CHECK(user.mixture[0] == 1.0);
    CHECK(corpus.item_attributes[static_cast<std::size_t>(r.item_id)][0] == user.preferred[0]);
  }
}

TEST_CASE("oracle recommender beats popularity by 2x at NDCG@5") {
  auto corpus = generate_synthetic(SyntheticConfig{});
  const std::size_t n_items = corpus.config.n_items;
  std::map<std::int64_t, const RawInteraction*> last;
  for (const auto& r : corpus.interactions) last[r.user_id] = &r;
  std::vector<double> pop(n_items, 0.0);
  for (const auto& r : corpus.interactions) {
    if (last[r.user_id] != &r) pop[static_cast<std::size_t>(r.item_id)] += 1.0;
  }
  double oracle = 0.0, popularity = 0.0;
  for (const auto& [user, r] : last) {
    auto target = static_cast<std::size_t>(r->item_id);
    oracle += ndcg_at(oracle_item_probabilities(corpus, corpus.users[static_cast<std::size_t>(user)]), target, 5);
    popularity += ndcg_at(pop, target, 5);
  }
  MESSAGE("oracle " << oracle / last.size() << " popularity " << popularity / last.size());
  CHECK(oracle >= 2.0 * popularity);
}

TEST_CASE("bundle pipeline and round trip") {
  auto corpus = generate_synthetic(small_config(2));
  auto bundle = build_bundle(corpus.interactions, {}, &corpus.item_attributes);
  const auto n = bundle.splits.train.size() + bundle.splits.valid.size() + bundle.splits.test.size();
  CHECK(n > 10);
  for (const auto& item : bundle.catalog.items()) {
    CHECK(bundle.tokenizer.decode(item.tokens) == item.title);
    CHECK(item.attributes.size() == 3);
  }
  for (const auto* split : {&bundle.splits.train, &bundle.splits.valid, &bundle.splits.test}) {
    for (const auto& e : *split) {
      CHECK(bundle.catalog.contains(e.target));
      CHECK(e.history.size() >= 1);
      CHECK(e.history.size() <= 10);
    }
  }

  auto dir = std::filesystem::temp_directory_path() / "flr_test_bundle";
  std::filesystem::remove_all(dir);
  write_bundle(dir, bundle);
  for (const char* f : {"catalog.jsonl", "train.jsonl", "valid.jsonl", "test.jsonl", "vocab.json"}) {
    CHECK(std::filesystem::exists(dir / f));
  }
  auto loaded = read_bundle(dir);
  CHECK(loaded.content_hash() == bundle.content_hash());
  CHECK(build_bundle(corpus.interactions, {}, &corpus.item_attributes).content_hash() == bundle.content_hash());

  auto raw = dir / "raw.jsonl";
  write_interactions_jsonl(raw, corpus.interactions);
  auto back = read_interactions_jsonl(raw);
  REQUIRE(back.size() == corpus.interactions.size());
  CHECK(back[3].title == corpus.interactions[3].title);
  std::filesystem::remove_all(dir);
}

TEST_CASE("duplicate titles are disambiguated") {
  std::vector<RawInteraction> rows;
  add_block(rows, 0, 6, 0, 6, 10);
  for (auto& r : rows) r.title = r.item_id < 2 ? "same title" : r.title;
  auto bundle = build_bundle(rows, {});
  std::set<std::string> titles;
  for (const auto& item : bundle.catalog.items()) titles.insert(item.title);
  CHECK(titles.size() == bundle.catalog.size());
}
