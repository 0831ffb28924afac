#include "flr/experiment.hpp"

#include <fstream>

#include <spdlog/spdlog.h>

#include "flr/errors.hpp"
#include "flr/hash.hpp"

namespace flr::experiment {

using nlohmann::json;

json default_config() {
  return json{
      {"seed", 0},
      {"out_dir", "runs/default"},
      {"model", {{"d_model", 64}, {"n_layers", 2}, {"n_heads", 4}, {"d_ff", 256}, {"max_seq_len", 96},
                 {"rope_base", 10000.0}}},
      {"flr", {{"k", 3}, {"n_iters", 2}, {"gate_hidden", 0}}},
      {"loss", {{"use_orth", true}, {"use_div", true}, {"use_sparse", true}, {"fixed_lambdas", nullptr}}},
      {"train", {{"lr", 3e-4}, {"weight_decay", 0.0}, {"max_grad_norm", 1.0}, {"batch_size", 16},
                 {"max_epochs", 10}, {"max_steps", 0}, {"eval_every", 0}, {"patience", 3},
                 {"valid_subset", 200}, {"beam_width", 10}}},
      {"grpo", {{"group_size", 8}, {"noise_sigma", 0.05}, {"reward_alpha", 0.1}, {"reward_beta", 1.0},
                {"clip_low", 0.2}, {"clip_high", 0.28}, {"kl_coef", 0.01}, {"inner_epochs", 2}, {"lr", 1e-4},
                {"advantage_eps", 1e-8}, {"prompts_per_step", 4}, {"steps", 200}}},
      {"data", {{"raw", ""}, {"bundle_dir", ""}, {"select_window", false}, {"window_end", 0},
                {"window_start", 0}, {"item_threshold", 200}, {"core", 5}, {"max_history", 10},
                {"max_vocab_words", 0},
                {"synthetic", {{"n_items", 300}, {"n_users", 500}, {"attribute_sizes", {5, 4, 3}},
                               {"mixture_concentration", 0.3}, {"min_length", 8}, {"max_length", 20},
                               {"noise", 0.1}, {"popularity_skew", 0.5}, {"start_time", 1'500'000'000},
                               {"seed", nullptr}}}}},
      {"eval", {{"beam_width", 10}, {"max_examples", 0}, {"split", "test"}, {"analyze_samples", 200}}},
      {"bench", {{"n_samples", 100}, {"beam_width", 10}, {"batch", 4}, {"repeats", 3}, {"n_iters", {0, 1, 2, 3}}}},
      {"sweep", {{"k_values", {1, 2, 3, 4}}}},
  };
}

namespace {

// Nulls in the defaults mark optional keys that accept any value.
void check_known(const json& defaults, const json& given, const std::string& prefix) {
  for (const auto& [key, value] : given.items()) {
    const std::string path = prefix.empty() ? key : prefix + "." + key;
    if (!defaults.contains(key)) throw ConfigError("unknown config key '" + path + "'");
    const auto& d = defaults.at(key);
    if (d.is_object()) {
      if (!value.is_object()) throw ConfigError("config key '" + path + "' must be an object");
      check_known(d, value, path);
    }
  }
}

json parse_value(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error&) {
    return text;
  }
}

template <class T>
T get(const json& j, const char* section, const char* key) {
  try {
    return j.at(section).at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(std::string("invalid value for ") + section + "." + key);
  }
}

}  // namespace

void set_key(json& config, const std::string& dotted, const std::string& value) {
  json* node = &config;
  std::size_t start = 0;
  while (true) {
    const auto dot = dotted.find('.', start);
    const std::string key = dotted.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (!node->is_object() || !node->contains(key)) throw ConfigError("unknown config key '" + dotted + "'");
    node = &(*node)[key];
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  if (node->is_object()) throw ConfigError("'" + dotted + "' is a section, not a value");
  *node = parse_value(value);
}

json resolve_config(const std::optional<std::filesystem::path>& file, std::span<const std::string> overrides) {
  json config = default_config();
  if (file) {
    std::ifstream in(*file);
    if (!in) throw ConfigError("cannot open config " + file->string());
    json given;
    try {
      given = json::parse(in);
    } catch (const json::parse_error& e) {
      throw ConfigError("config " + file->string() + ": " + e.what());
    }
    if (!given.is_object()) throw ConfigError("config root must be an object");
    check_known(config, given, "");
    config.merge_patch(given);
  }
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) throw ConfigError("override '" + o + "' is not key=value");
    set_key(config, o.substr(0, eq), o.substr(eq + 1));
  }
  // merge_patch drops null-valued keys; restore the optional ones.
  if (!config["loss"].contains("fixed_lambdas")) config["loss"]["fixed_lambdas"] = nullptr;
  if (!config["data"]["synthetic"].contains("seed")) config["data"]["synthetic"]["seed"] = nullptr;
  return config;
}

std::string config_hash(const json& config) {
  json copy = config;
  copy.erase("out_dir");
  const auto h = fnv1a(copy.dump());
  return fmt::format("{:016x}", h);
}

Settings parse_settings(const json& c) {
  Settings s;
  try {
    s.seed = c.at("seed").get<std::uint64_t>();
    s.out_dir = c.at("out_dir").get<std::string>();
  } catch (const json::exception&) {
    throw ConfigError("seed must be a non-negative integer and out_dir a string");
  }

  s.model.d_model = get<Index>(c, "model", "d_model");
  s.model.n_layers = get<Index>(c, "model", "n_layers");
  s.model.n_heads = get<Index>(c, "model", "n_heads");
  s.model.d_ff = get<Index>(c, "model", "d_ff");
  s.model.max_seq_len = get<Index>(c, "model", "max_seq_len");
  s.model.rope_base = get<double>(c, "model", "rope_base");

  s.flr.n_factors = get<Index>(c, "flr", "k");
  s.flr.n_iters = get<Index>(c, "flr", "n_iters");
  s.flr.gate_hidden = get<Index>(c, "flr", "gate_hidden");
  if (s.flr.n_iters < 0) throw ConfigError("flr.n_iters must be non-negative");
  if (s.flr.n_iters > 0) s.flr.validate();

  s.toggles = {get<bool>(c, "loss", "use_orth"), get<bool>(c, "loss", "use_div"), get<bool>(c, "loss", "use_sparse")};
  if (!c["loss"]["fixed_lambdas"].is_null()) {
    const auto v = get<std::vector<double>>(c, "loss", "fixed_lambdas");
    if (v.size() != 3) throw ConfigError("loss.fixed_lambdas needs three values");
    for (double x : v) {
      if (!(x > 0.0)) throw ConfigError("loss.fixed_lambdas must be positive");
    }
    s.fixed_lambdas = std::array<double, 3>{v[0], v[1], v[2]};
  }

  auto& t = s.sft;
  t.optim.lr = get<double>(c, "train", "lr");
  t.optim.weight_decay = get<double>(c, "train", "weight_decay");
  t.optim.max_grad_norm = get<double>(c, "train", "max_grad_norm");
  t.batch_size = get<std::size_t>(c, "train", "batch_size");
  t.max_epochs = get<std::size_t>(c, "train", "max_epochs");
  t.max_steps = get<std::size_t>(c, "train", "max_steps");
  t.eval_every = get<std::size_t>(c, "train", "eval_every");
  t.patience = get<std::size_t>(c, "train", "patience");
  t.valid_subset = get<std::size_t>(c, "train", "valid_subset");
  t.beam_width = get<std::size_t>(c, "train", "beam_width");
  t.toggles = s.toggles;
  t.fixed_lambdas = s.fixed_lambdas;
  t.seed = s.seed;
  if (!(t.optim.lr > 0.0)) throw ConfigError("train.lr must be positive");
  if (t.batch_size == 0) throw ConfigError("train.batch_size must be positive");
  if (t.beam_width == 0) throw ConfigError("train.beam_width must be positive");

  auto& g = s.grpo;
  g.group_size = get<std::size_t>(c, "grpo", "group_size");
  g.noise_sigma = get<double>(c, "grpo", "noise_sigma");
  g.reward_alpha = get<double>(c, "grpo", "reward_alpha");
  g.reward_beta = get<double>(c, "grpo", "reward_beta");
  g.clip_low = get<double>(c, "grpo", "clip_low");
  g.clip_high = get<double>(c, "grpo", "clip_high");
  g.kl_coef = get<double>(c, "grpo", "kl_coef");
  g.inner_epochs = get<std::size_t>(c, "grpo", "inner_epochs");
  g.lr = get<double>(c, "grpo", "lr");
  g.advantage_eps = get<double>(c, "grpo", "advantage_eps");
  g.prompts_per_step = get<std::size_t>(c, "grpo", "prompts_per_step");
  g.steps = get<std::size_t>(c, "grpo", "steps");
  g.validate();

  const json& d = c.at("data");
  s.raw_path = get<std::string>(c, "data", "raw");
  s.bundle_dir = get<std::string>(c, "data", "bundle_dir");
  s.pipeline.select_window = get<bool>(c, "data", "select_window");
  s.pipeline.window_end = get<std::int64_t>(c, "data", "window_end");
  s.pipeline.window_start = get<std::int64_t>(c, "data", "window_start");
  s.pipeline.item_threshold = get<std::size_t>(c, "data", "item_threshold");
  s.pipeline.core = get<std::size_t>(c, "data", "core");
  s.pipeline.max_history = get<std::size_t>(c, "data", "max_history");
  s.pipeline.max_vocab_words = get<std::size_t>(c, "data", "max_vocab_words");
  if (s.pipeline.max_history == 0) throw ConfigError("data.max_history must be positive");
  try {
    const json& y = d.at("synthetic");
    auto& sc = s.synthetic;
    sc.n_items = y.at("n_items").get<std::size_t>();
    sc.n_users = y.at("n_users").get<std::size_t>();
    sc.attribute_sizes = y.at("attribute_sizes").get<std::vector<int>>();
    sc.mixture_concentration = y.at("mixture_concentration").get<double>();
    sc.min_length = y.at("min_length").get<std::size_t>();
    sc.max_length = y.at("max_length").get<std::size_t>();
    sc.noise = y.at("noise").get<double>();
    sc.popularity_skew = y.at("popularity_skew").get<double>();
    sc.start_time = y.at("start_time").get<std::int64_t>();
    sc.seed = y.at("seed").is_null() ? s.seed : y.at("seed").get<std::uint64_t>();
  } catch (const json::exception&) {
    throw ConfigError("invalid value in data.synthetic");
  }
  s.synthetic.validate();

  s.eval_beam_width = get<std::size_t>(c, "eval", "beam_width");
  s.eval_max_examples = get<std::size_t>(c, "eval", "max_examples");
  s.eval_split = get<std::string>(c, "eval", "split");
  s.analyze_samples = get<std::size_t>(c, "eval", "analyze_samples");
  if (s.eval_beam_width == 0) throw ConfigError("eval.beam_width must be positive");
  if (s.eval_split != "train" && s.eval_split != "valid" && s.eval_split != "test") {
    throw ConfigError("eval.split must be train, valid or test");
  }

  s.bench.n_samples = get<std::size_t>(c, "bench", "n_samples");
  s.bench.beam_width = get<std::size_t>(c, "bench", "beam_width");
  s.bench.batch = get<std::size_t>(c, "bench", "batch");
  s.bench.repeats = get<std::size_t>(c, "bench", "repeats");
  s.bench_iters = get<std::vector<Index>>(c, "bench", "n_iters");
  s.sweep_k = get<std::vector<Index>>(c, "sweep", "k_values");
  for (Index k : s.sweep_k) {
    if (k < 1) throw ConfigError("sweep.k_values must be positive");
  }
  return s;
}

data::DatasetBundle synthetic_bundle(const Settings& s) {
  const auto corpus = data::generate_synthetic(s.synthetic);
  return data::build_bundle(corpus.interactions, s.pipeline, &corpus.item_attributes);
}

Recommender build_model(const Settings& s, const data::DatasetBundle& bundle) {
  ModelConfig mc = s.model;
  mc.vocab_size = static_cast<Index>(bundle.tokenizer.size());
  mc.validate();
  Rng rng(s.seed, 1);
  return Recommender(mc, s.flr, s.flr.n_iters, rng);
}

std::span<const data::Example> split_examples(const data::DatasetBundle& bundle, const std::string& split) {
  if (split == "train") return bundle.splits.train;
  if (split == "valid") return bundle.splits.valid;
  if (split == "test") return bundle.splits.test;
  throw ConfigError("unknown split '" + split + "'");
}

eval::MetricsReport evaluate(const Recommender& model, const data::DatasetBundle& bundle,
                             std::span<const data::Example> examples, const Settings& s, const std::string& hash) {
  const auto trie = decoding::PrefixTrie::build(bundle.catalog);
  eval::EvalOptions opts;
  opts.beam.beam_width = s.eval_beam_width;
  opts.beam.top_k = std::min<std::size_t>({s.eval_beam_width, 10, trie.item_count()});
  opts.max_examples = s.eval_max_examples;
  const auto results = eval::rank_examples(model, examples, bundle.catalog, trie, opts);
  auto report = eval::build_report(results, eval::popularity_split(bundle.train_item_counts()));
  report.seed = s.seed;
  report.config_hash = hash;
  return report;
}

}  // namespace flr::experiment
