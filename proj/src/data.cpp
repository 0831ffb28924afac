#include "flr/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <unordered_map>

#include <spdlog/spdlog.h>

#include "flr/errors.hpp"
#include "flr/hash.hpp"

namespace flr::data {

using nlohmann::json;

namespace {

const std::vector<std::string> kSpecialWords{"<pad>", "<hist>", "<sep>", "<eoh>",
                                             "<thought>", "<eot>", "<unk>"};

std::vector<std::string_view> split_words(std::string_view text) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t j = i;
    while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    if (j > i) out.push_back(text.substr(i, j - i));
    i = j;
  }
  return out;
}

std::string normalize_title(std::string_view text) {
  std::string out;
  for (auto w : split_words(text)) {
    if (!out.empty()) out += ' ';
    out += w;
  }
  return out;
}

template <typename Key>
std::unordered_map<Key, std::size_t> count_by(std::span<const RawInteraction> rows,
                                              Key RawInteraction::*field) {
  std::unordered_map<Key, std::size_t> counts;
  for (const auto& r : rows) ++counts[r.*field];
  return counts;
}

std::size_t unique_items(std::span<const RawInteraction> rows) {
  std::set<std::int64_t> items;
  for (const auto& r : rows) items.insert(r.item_id);
  return items.size();
}

std::size_t core_items(std::span<const RawInteraction> rows) {
  try {
    return unique_items(five_core_filter(rows));
  } catch (const DataError&) {
    return 0;
  }
}

std::vector<RawInteraction> in_range(std::span<const RawInteraction> rows, std::int64_t start,
                                     std::int64_t end) {
  std::vector<RawInteraction> out;
  for (const auto& r : rows) {
    if (r.timestamp >= start && r.timestamp <= end) out.push_back(r);
  }
  return out;
}

json example_to_json(const Example& e, const Catalog& catalog) {
  return json{{"user", e.user_id},
              {"history", e.history},
              {"target", e.target},
              {"ts", e.timestamp},
              {"prompt", to_prompt(e.history, catalog)}};
}

Example example_from_json(const json& j) {
  Example e;
  e.user_id = j.at("user").get<std::int64_t>();
  e.history = j.at("history").get<std::vector<ItemId>>();
  e.target = j.at("target").get<ItemId>();
  e.timestamp = j.at("ts").get<std::int64_t>();
  return e;
}

json item_to_json(const CatalogItem& item) {
  json j{{"item_id", item.id}, {"raw_id", item.raw_id}, {"title", item.title}, {"tokens", item.tokens}};
  if (!item.attributes.empty()) j["attributes"] = item.attributes;
  return j;
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  return out;
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read " + path.string());
  return in;
}

std::vector<json> read_jsonl(const std::filesystem::path& path) {
  auto in = open_in(path);
  std::vector<json> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      rows.push_back(json::parse(line));
    } catch (const json::exception& e) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return rows;
}

const char* attribute_name(std::size_t k) {
  static const char* names[] = {"category", "style", "price"};
  return k < 3 ? names[k] : nullptr;
}

std::size_t sample_weighted(Rng& rng, std::span<const double> weights) {
  std::discrete_distribution<std::size_t> dist(weights.begin(), weights.end());
  return dist(rng);
}

}  // namespace

Tokenizer::Tokenizer() : words_(kSpecialWords) {
  for (std::size_t i = 0; i < words_.size(); ++i) index_.emplace(words_[i], static_cast<TokenId>(i));
}

Tokenizer Tokenizer::from_words(std::vector<std::string> words) {
  Tokenizer t;
  for (auto& w : words) {
    const auto id = static_cast<TokenId>(t.words_.size());
    if (!t.index_.emplace(w, id).second) throw DataError("duplicate vocabulary word '" + w + "'");
    t.words_.push_back(std::move(w));
  }
  return t;
}

Tokenizer Tokenizer::build(std::span<const std::string> titles, std::size_t max_words) {
  std::map<std::string, std::size_t, std::less<>> freq;
  for (const auto& title : titles) {
    for (auto w : split_words(title)) ++freq[std::string(w)];
  }
  std::vector<std::pair<std::string, std::size_t>> ranked(freq.begin(), freq.end());
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  if (max_words > 0 && ranked.size() > max_words) ranked.resize(max_words);
  std::vector<std::string> words;
  words.reserve(ranked.size());
  for (auto& [w, n] : ranked) words.push_back(std::move(w));
  return from_words(std::move(words));
}

std::vector<TokenId> Tokenizer::encode(std::string_view text) const {
  std::vector<TokenId> out;
  for (auto w : split_words(text)) {
    auto it = index_.find(w);
    out.push_back(it == index_.end() ? kUnk : it->second);
  }
  return out;
}

std::string Tokenizer::decode(std::span<const TokenId> tokens) const {
  std::string out;
  for (TokenId t : tokens) {
    if (!out.empty()) out += ' ';
    out += word(t);
  }
  return out;
}

const std::string& Tokenizer::word(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= words_.size()) {
    throw DataError("token id " + std::to_string(id) + " outside vocabulary");
  }
  return words_[static_cast<std::size_t>(id)];
}

Catalog::Catalog(std::vector<CatalogItem> items) : items_(std::move(items)) {
  for (std::size_t i = 0; i < items_.size(); ++i) {
    if (items_[i].id != static_cast<ItemId>(i)) throw DataError("catalog ids must be dense and ordered");
    if (!by_raw_.emplace(items_[i].raw_id, items_[i].id).second) {
      throw DataError("duplicate raw item id " + std::to_string(items_[i].raw_id));
    }
  }
}

const CatalogItem& Catalog::at(ItemId id) const {
  if (!contains(id)) throw DataError("unknown item " + std::to_string(id));
  return items_[static_cast<std::size_t>(id)];
}

ItemId Catalog::lookup_raw(std::int64_t raw_id) const {
  auto it = by_raw_.find(raw_id);
  if (it == by_raw_.end()) throw DataError("unknown raw item " + std::to_string(raw_id));
  return it->second;
}

std::size_t Catalog::max_title_tokens() const {
  std::size_t m = 0;
  for (const auto& item : items_) m = std::max(m, item.tokens.size());
  return m;
}

std::vector<std::size_t> DatasetBundle::train_item_counts() const {
  std::vector<std::size_t> counts(catalog.size(), 0);
  for (const auto& e : splits.train) ++counts[static_cast<std::size_t>(e.target)];
  return counts;
}

std::uint64_t DatasetBundle::content_hash() const {
  Fnv1a h;
  for (const auto& item : catalog.items()) h.feed(item_to_json(item).dump());
  for (const auto* split : {&splits.train, &splits.valid, &splits.test}) {
    h.feed("|");
    for (const auto& e : *split) h.feed(example_to_json(e, catalog).dump());
  }
  h.feed(json(tokenizer.words()).dump());
  return h.digest();
}

WindowResult select_window(std::span<const RawInteraction> interactions, std::int64_t end,
                           std::int64_t init_start, std::size_t item_threshold, std::int64_t step) {
  if (interactions.empty()) throw DataError("select_window: no interactions");
  if (step <= 0) throw ConfigError("select_window: step must be positive");
  std::int64_t earliest = interactions.front().timestamp;
  for (const auto& r : interactions) earliest = std::min(earliest, r.timestamp);

  WindowResult result;
  for (int k = 0;; ++k) {
    const std::int64_t start = init_start - static_cast<std::int64_t>(k) * step;
    auto window = in_range(interactions, start, end);
    if (core_items(window) >= item_threshold) {
      result.interactions = std::move(window);
      result.start = start;
      result.extensions = k;
      result.threshold_reached = true;
      return result;
    }
    if (start <= earliest) {
      spdlog::warn("select_window: {} unique items never reached; using the full range", item_threshold);
      result.interactions = std::move(window);
      result.start = earliest;
      result.extensions = k;
      return result;
    }
  }
}

std::vector<RawInteraction> five_core_filter(std::span<const RawInteraction> interactions, std::size_t k) {
  std::vector<RawInteraction> rows(interactions.begin(), interactions.end());
  for (;;) {
    auto users = count_by(rows, &RawInteraction::user_id);
    auto items = count_by(rows, &RawInteraction::item_id);
    const auto before = rows.size();
    std::erase_if(rows, [&](const RawInteraction& r) { return users[r.user_id] < k || items[r.item_id] < k; });
    if (rows.size() == before) break;
  }
  if (rows.empty()) throw DataError("dataset too sparse");
  return rows;
}

std::vector<ItemId> truncate_history(std::span<const ItemId> sequence, std::size_t max_len) {
  const std::size_t skip = sequence.size() > max_len ? sequence.size() - max_len : 0;
  return {sequence.begin() + static_cast<std::ptrdiff_t>(skip), sequence.end()};
}

std::vector<Example> build_examples(std::span<const RawInteraction> interactions, const Catalog& catalog,
                                    std::size_t max_history) {
  std::map<std::int64_t, std::vector<const RawInteraction*>> by_user;
  for (const auto& r : interactions) by_user[r.user_id].push_back(&r);
  std::vector<Example> out;
  for (auto& [user, rows] : by_user) {
    std::stable_sort(rows.begin(), rows.end(), [](const auto* a, const auto* b) {
      return std::tie(a->timestamp, a->item_id) < std::tie(b->timestamp, b->item_id);
    });
    std::vector<ItemId> seq;
    seq.reserve(rows.size());
    for (const auto* r : rows) seq.push_back(catalog.lookup_raw(r->item_id));
    for (std::size_t j = 1; j < seq.size(); ++j) {
      Example e;
      e.user_id = user;
      e.history = truncate_history(std::span(seq).first(j), max_history);
      e.target = seq[j];
      e.timestamp = rows[j]->timestamp;
      out.push_back(std::move(e));
    }
  }
  return out;
}

Splits chronological_split(std::vector<Example> examples) {
  if (examples.size() < 10) {
    throw DataError("chronological_split needs at least 10 examples, got " + std::to_string(examples.size()));
  }
  std::stable_sort(examples.begin(), examples.end(), [](const Example& a, const Example& b) {
    return std::tie(a.timestamp, a.user_id, a.target) < std::tie(b.timestamp, b.user_id, b.target);
  });
  const std::size_t n = examples.size();
  const std::size_t n_train = n * 8 / 10;
  const std::size_t n_valid = n * 9 / 10 - n_train;
  Splits s;
  auto first = std::make_move_iterator(examples.begin());
  s.train.assign(first, first + static_cast<std::ptrdiff_t>(n_train));
  s.valid.assign(first + static_cast<std::ptrdiff_t>(n_train),
                 first + static_cast<std::ptrdiff_t>(n_train + n_valid));
  s.test.assign(first + static_cast<std::ptrdiff_t>(n_train + n_valid), std::make_move_iterator(examples.end()));
  return s;
}

std::vector<TokenId> to_prompt(std::span<const ItemId> history, const Catalog& catalog) {
  std::vector<TokenId> out{Tokenizer::kHist};
  for (std::size_t i = 0; i < history.size(); ++i) {
    if (i) out.push_back(Tokenizer::kSep);
    const auto& tokens = catalog.at(history[i]).tokens;
    out.insert(out.end(), tokens.begin(), tokens.end());
  }
  out.push_back(Tokenizer::kEoh);
  return out;
}

void SyntheticConfig::validate() const {
  if (n_items == 0 || n_users == 0) throw ConfigError("synthetic corpus needs items and users");
  if (attribute_sizes.empty()) throw ConfigError("synthetic corpus needs at least one attribute");
  for (int s : attribute_sizes) {
    if (s < 1) throw ConfigError("attribute sizes must be positive");
  }
  if (!(mixture_concentration > 0.0)) throw ConfigError("mixture_concentration must be positive");
  if (min_length < 2 || max_length < min_length) throw ConfigError("invalid sequence length range");
  if (!(noise >= 0.0 && noise <= 1.0)) throw ConfigError("noise must lie in [0, 1]");
  if (!(popularity_skew >= 0.0)) throw ConfigError("popularity_skew must be non-negative");
  if (start_time < 0) throw ConfigError("start_time must be non-negative");
}

SyntheticCorpus generate_synthetic(const SyntheticConfig& config) {
  config.validate();
  const std::size_t n_attr = config.attribute_sizes.size();
  SyntheticCorpus corpus;
  corpus.config = config;

  Rng item_rng = Rng(config.seed).fork(1);
  corpus.item_attributes.resize(config.n_items);
  for (auto& attrs : corpus.item_attributes) {
    for (int size : config.attribute_sizes) attrs.push_back(static_cast<int>(item_rng.below(size)));
  }
  std::vector<std::size_t> order(config.n_items);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), item_rng);
  corpus.item_popularity.resize(config.n_items);
  for (std::size_t rank = 0; rank < order.size(); ++rank) {
    corpus.item_popularity[order[rank]] = std::pow(static_cast<double>(rank + 1), -config.popularity_skew);
  }

  std::vector<std::string> titles(config.n_items);
  for (std::size_t i = 0; i < config.n_items; ++i) {
    std::ostringstream os;
    for (std::size_t k = 0; k < n_attr; ++k) {
      const char* name = attribute_name(k);
      if (name) {
        os << name;
      } else {
        os << "attr" << k;
      }
      os << '_' << corpus.item_attributes[i][k] << ' ';
    }
    os << "id_" << i;
    titles[i] = os.str();
  }

  Rng user_rng = Rng(config.seed).fork(2);
  std::gamma_distribution<double> gamma(config.mixture_concentration, 1.0);
  constexpr std::int64_t kDay = 86'400;
  for (std::size_t u = 0; u < config.n_users; ++u) {
    SyntheticUser user;
    user.user_id = static_cast<std::int64_t>(u);
    user.mixture.resize(n_attr);
    double total = 0.0;
    for (auto& w : user.mixture) total += (w = gamma(user_rng));
    if (total > 0.0) {
      for (auto& w : user.mixture) w /= total;
    } else {
      user.mixture[user_rng.below(n_attr)] = 1.0;
    }
    for (int size : config.attribute_sizes) user.preferred.push_back(static_cast<int>(user_rng.below(size)));

    const auto length = config.min_length + user_rng.below(config.max_length - config.min_length + 1);
    std::int64_t ts = config.start_time + static_cast<std::int64_t>(user_rng.below(365 * kDay));
    for (std::size_t step = 0; step < length; ++step) {
      ts += 3600 + static_cast<std::int64_t>(user_rng.below(7 * kDay));
      std::vector<double> weights = corpus.item_popularity;
      if (user_rng.uniform() >= config.noise) {
        const auto k = sample_weighted(user_rng, user.mixture);
        bool any = false;
        for (std::size_t i = 0; i < config.n_items; ++i) {
          if (corpus.item_attributes[i][k] != user.preferred[k]) {
            weights[i] = 0.0;
          } else {
            any = true;
          }
        }
        if (!any) weights = corpus.item_popularity;
      }
      const auto item = sample_weighted(user_rng, weights);
      corpus.interactions.push_back({user.user_id, static_cast<std::int64_t>(item), ts, titles[item]});
    }
    corpus.users.push_back(std::move(user));
  }
  return corpus;
}

std::vector<double> oracle_item_probabilities(const SyntheticCorpus& corpus, const SyntheticUser& user) {
  const auto& pop = corpus.item_popularity;
  const std::size_t n = pop.size();
  const double noise = corpus.config.noise;
  const double pop_total = std::accumulate(pop.begin(), pop.end(), 0.0);
  std::vector<double> p(n);
  for (std::size_t i = 0; i < n; ++i) p[i] = noise * pop[i] / pop_total;
  for (std::size_t k = 0; k < user.mixture.size(); ++k) {
    double match_total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (corpus.item_attributes[i][k] == user.preferred[k]) match_total += pop[i];
    }
    for (std::size_t i = 0; i < n; ++i) {
      const bool match = corpus.item_attributes[i][k] == user.preferred[k];
      const double share = match_total > 0.0 ? (match ? pop[i] / match_total : 0.0) : pop[i] / pop_total;
      p[i] += (1.0 - noise) * user.mixture[k] * share;
    }
  }
  return p;
}

DatasetBundle build_bundle(std::span<const RawInteraction> interactions, const PipelineOptions& options,
                           const std::vector<std::vector<int>>* attributes) {
  if (interactions.empty()) throw DataError("no interactions");
  for (const auto& r : interactions) {
    if (r.timestamp < 0) throw DataError("negative timestamp for user " + std::to_string(r.user_id));
    if (split_words(r.title).empty()) throw DataError("empty title for item " + std::to_string(r.item_id));
  }
  std::vector<RawInteraction> rows;
  if (options.select_window) {
    rows = select_window(interactions, options.window_end, options.window_start, options.item_threshold)
               .interactions;
  } else {
    rows.assign(interactions.begin(), interactions.end());
  }
  rows = five_core_filter(rows, options.core);

  // First title seen per raw item; duplicate titles get the raw id appended
  // so every catalog title stays unique.
  std::map<std::int64_t, std::string> titles;
  for (const auto& r : rows) titles.emplace(r.item_id, normalize_title(r.title));
  std::map<std::string, std::size_t> title_uses;
  for (const auto& [raw, title] : titles) ++title_uses[title];
  for (auto& [raw, title] : titles) {
    if (title_uses[title] > 1) title += " id_" + std::to_string(raw);
  }

  std::vector<std::string> all_titles;
  for (const auto& [raw, title] : titles) all_titles.push_back(title);

  DatasetBundle bundle;
  bundle.tokenizer = Tokenizer::build(all_titles, options.max_vocab_words);
  std::vector<CatalogItem> items;
  for (const auto& [raw, title] : titles) {
    CatalogItem item;
    item.id = static_cast<ItemId>(items.size());
    item.raw_id = raw;
    item.title = title;
    item.tokens = bundle.tokenizer.encode(title);
    if (attributes && raw >= 0 && static_cast<std::size_t>(raw) < attributes->size()) {
      item.attributes = (*attributes)[static_cast<std::size_t>(raw)];
    }
    items.push_back(std::move(item));
  }
  bundle.catalog = Catalog(std::move(items));
  bundle.splits = chronological_split(build_examples(rows, bundle.catalog, options.max_history));
  return bundle;
}

std::vector<RawInteraction> read_interactions_jsonl(const std::filesystem::path& path) {
  std::vector<RawInteraction> rows;
  for (const auto& j : read_jsonl(path)) {
    try {
      rows.push_back({j.at("user").get<std::int64_t>(), j.at("item").get<std::int64_t>(),
                      j.at("ts").get<std::int64_t>(), j.at("title").get<std::string>()});
    } catch (const json::exception& e) {
      throw DataError(path.string() + ": " + e.what());
    }
  }
  return rows;
}

void write_interactions_jsonl(const std::filesystem::path& path, std::span<const RawInteraction> rows) {
  auto out = open_out(path);
  for (const auto& r : rows) {
    out << json{{"user", r.user_id}, {"item", r.item_id}, {"ts", r.timestamp}, {"title", r.title}}.dump()
        << '\n';
  }
}

void write_bundle(const std::filesystem::path& dir, const DatasetBundle& bundle) {
  std::filesystem::create_directories(dir);
  {
    auto out = open_out(dir / "catalog.jsonl");
    for (const auto& item : bundle.catalog.items()) out << item_to_json(item).dump() << '\n';
  }
  const std::pair<const char*, const std::vector<Example>*> files[] = {
      {"train.jsonl", &bundle.splits.train}, {"valid.jsonl", &bundle.splits.valid}, {"test.jsonl", &bundle.splits.test}};
  for (const auto& [name, split] : files) {
    auto out = open_out(dir / name);
    for (const auto& e : *split) out << example_to_json(e, bundle.catalog).dump() << '\n';
  }
  auto out = open_out(dir / "vocab.json");
  out << json{{"tokens", bundle.tokenizer.words()}}.dump(1) << '\n';
}

DatasetBundle read_bundle(const std::filesystem::path& dir) {
  DatasetBundle bundle;
  try {
    auto in = open_in(dir / "vocab.json");
    auto words = json::parse(in).at("tokens").get<std::vector<std::string>>();
    if (words.size() < kSpecialWords.size() ||
        !std::equal(kSpecialWords.begin(), kSpecialWords.end(), words.begin())) {
      throw DataError("vocab.json does not start with the special tokens");
    }
    bundle.tokenizer = Tokenizer::from_words({words.begin() + static_cast<std::ptrdiff_t>(kSpecialWords.size()),
                                              words.end()});
    std::vector<CatalogItem> items;
    for (const auto& j : read_jsonl(dir / "catalog.jsonl")) {
      CatalogItem item;
      item.id = j.at("item_id").get<ItemId>();
      item.raw_id = j.at("raw_id").get<std::int64_t>();
      item.title = j.at("title").get<std::string>();
      item.tokens = j.at("tokens").get<std::vector<TokenId>>();
      if (j.contains("attributes")) item.attributes = j.at("attributes").get<std::vector<int>>();
      items.push_back(std::move(item));
    }
    bundle.catalog = Catalog(std::move(items));
    const std::pair<const char*, std::vector<Example>*> files[] = {
        {"train.jsonl", &bundle.splits.train}, {"valid.jsonl", &bundle.splits.valid}, {"test.jsonl", &bundle.splits.test}};
    for (const auto& [name, split] : files) {
      for (const auto& j : read_jsonl(dir / name)) {
        auto e = example_from_json(j);
        if (!bundle.catalog.contains(e.target)) throw DataError(std::string(name) + ": target outside catalog");
        split->push_back(std::move(e));
      }
    }
  } catch (const json::exception& e) {
    throw DataError("malformed bundle in " + dir.string() + ": " + e.what());
  }
  return bundle;
}

}  // namespace flr::data
