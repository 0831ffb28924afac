#include <CLI11.hpp>

#include <fstream>
#include <sstream>

#include <spdlog/spdlog.h>

#include "flr/checkpoint.hpp"
#include "flr/errors.hpp"
#include "flr/experiment.hpp"
#include "flr/tensor_json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace flr;

namespace {

enum ExitCode { kOk = 0, kFailure = 1, kConfig = 2, kNumeric = 3 };

struct Run {
  json config;
  experiment::Settings settings;
  std::string hash;

  fs::path dir(const char* sub) const {
    const auto p = settings.out_dir / sub;
    fs::create_directories(p);
    return p;
  }
};

void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
  spdlog::info("wrote {}", path.string());
}

Run start_run(const std::optional<fs::path>& config_file, const std::vector<std::string>& overrides,
              const std::string& command) {
  Run run;
  run.config = experiment::resolve_config(config_file, overrides);
  run.settings = experiment::parse_settings(run.config);
  run.hash = experiment::config_hash(run.config);
  fs::create_directories(run.settings.out_dir);
  write_text(run.settings.out_dir / "config.resolved.json", run.config.dump(2) + "\n");
  const json info{{"version", experiment::kVersion}, {"config_hash", run.hash}, {"command", command}};
  write_text(run.settings.out_dir / "run.json", info.dump(2) + "\n");
  return run;
}

fs::path attributes_path(const fs::path& raw) { return raw.parent_path() / "attributes.json"; }

// Bundle directory, raw interactions or the synthetic generator, in that order.
data::DatasetBundle load_data(const experiment::Settings& s) {
  if (!s.bundle_dir.empty()) return data::read_bundle(s.bundle_dir);
  if (!s.raw_path.empty()) {
    const auto rows = data::read_interactions_jsonl(s.raw_path);
    std::vector<std::vector<int>> attrs;
    if (fs::exists(attributes_path(s.raw_path))) {
      std::ifstream in(attributes_path(s.raw_path));
      attrs = json::parse(in).get<std::vector<std::vector<int>>>();
    }
    return data::build_bundle(rows, s.pipeline, attrs.empty() ? nullptr : &attrs);
  }
  return experiment::synthetic_bundle(s);
}

LoadedCheckpoint load_model(const fs::path& path, const data::DatasetBundle& bundle) {
  auto ck = load_checkpoint(path);
  if (ck.model->backbone().config().vocab_size != static_cast<Index>(bundle.tokenizer.size())) {
    throw ConfigError("checkpoint vocabulary does not match the dataset");
  }
  if (!ck.weights) ck.weights = std::make_unique<RegWeights>();
  return ck;
}

std::string valid_curve_csv(const SftResult& r) {
  std::ostringstream os;
  os.precision(10);
  os << "step,valid_ndcg5\n";
  for (const auto& [step, v] : r.valid_ndcg5) os << step << ',' << v << '\n';
  return os.str();
}

int cmd_gen_data(const Run& run) {
  const auto corpus = data::generate_synthetic(run.settings.synthetic);
  const auto dir = run.dir("data");
  data::write_interactions_jsonl(dir / "raw.jsonl", corpus.interactions);
  write_text(dir / "attributes.json", json(corpus.item_attributes).dump() + "\n");
  spdlog::info("{} interactions, {} users, {} items", corpus.interactions.size(), corpus.users.size(),
               corpus.item_attributes.size());
  return kOk;
}

int cmd_preprocess(const Run& run) {
  if (run.settings.raw_path.empty()) throw ConfigError("preprocess needs data.raw");
  if (!run.settings.bundle_dir.empty()) throw ConfigError("preprocess writes the bundle; leave data.bundle_dir empty");
  const auto bundle = load_data(run.settings);
  const auto dir = run.dir("data") / "bundle";
  data::write_bundle(dir, bundle);
  spdlog::info("bundle {:016x}: {} items, {} train / {} valid / {} test", bundle.content_hash(),
               bundle.catalog.size(), bundle.splits.train.size(), bundle.splits.valid.size(),
               bundle.splits.test.size());
  return kOk;
}

int cmd_train_sft(const Run& run) {
  const auto& s = run.settings;
  const auto bundle = load_data(s);
  auto model = experiment::build_model(s, bundle);
  RegWeights weights;
  const auto ckpt = run.dir("checkpoints") / "sft.ckpt";
  const json meta{{"stage", "sft"}, {"config_hash", run.hash}, {"dataset_hash", bundle.content_hash()}};
  SftResult result;
  try {
    result = train_sft(model, weights, bundle, s.sft);
  } catch (const NumericError&) {
    save_checkpoint(ckpt, model, &weights, meta);
    spdlog::error("training diverged; last good parameters saved to {}", ckpt.string());
    throw;
  }
  auto m = meta;
  m["best_step"] = result.best_step;
  m["best_valid_ndcg5"] = result.best_valid_ndcg5;
  save_checkpoint(ckpt, model, &weights, m);
  write_text(run.dir("logs") / "sft_loss.csv", sft_log_csv(result.log));
  write_text(run.dir("logs") / "sft_valid.csv", valid_curve_csv(result));
  return kOk;
}

int cmd_train_grpo(const Run& run, const fs::path& checkpoint) {
  const auto& s = run.settings;
  const auto bundle = load_data(s);
  auto ck = load_model(checkpoint, bundle);
  if (!ck.model->has_flr() || ck.model->n_iters() == 0) throw ConfigError("GRPO needs a model with reasoning enabled");
  const auto result = grpo::train_grpo(*ck.model, *ck.weights, bundle, s.grpo, s.toggles, s.seed);
  const json meta{{"stage", "grpo"},
                  {"config_hash", run.hash},
                  {"dataset_hash", bundle.content_hash()},
                  {"backbone_checksum", result.backbone_checksum_after}};
  save_checkpoint(run.dir("checkpoints") / "grpo.ckpt", *ck.model, ck.weights.get(), meta);
  write_text(run.dir("logs") / "grpo.csv", grpo::grpo_log_csv(result.log));
  return kOk;
}

int cmd_evaluate(const Run& run, const fs::path& checkpoint) {
  const auto& s = run.settings;
  const auto bundle = load_data(s);
  const auto ck = load_model(checkpoint, bundle);
  const auto report =
      experiment::evaluate(*ck.model, bundle, experiment::split_examples(bundle, s.eval_split), s, run.hash);
  write_text(run.dir("reports") / "metrics.json", report.to_json().dump(2) + "\n");
  const auto& a = report.all;
  spdlog::info("hr@5 {:.4f} hr@10 {:.4f} ndcg@5 {:.4f} ndcg@10 {:.4f} (n={})", a.hr5, a.hr10, a.ndcg5, a.ndcg10, a.n);
  return kOk;
}

json matrix_json(const Matrix& m) {
  json rows = json::array();
  for (Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(row);
  }
  return rows;
}

int cmd_analyze(const Run& run, const fs::path& checkpoint) {
  const auto& s = run.settings;
  const auto bundle = load_data(s);
  const auto ck = load_model(checkpoint, bundle);
  if (!ck.model->has_flr() || ck.model->n_iters() == 0) throw ConfigError("analysis needs a model with reasoning enabled");
  const auto examples = experiment::split_examples(bundle, s.eval_split);
  const auto samples = eval::collect_factors(*ck.model, examples, bundle.catalog, s.analyze_samples);
  const auto corr = eval::factor_correlation(samples.factors);
  const auto ds = eval::disentanglement_score(samples.attention);
  const json report{{"n_samples", samples.factors.size()},
                    {"cosine", matrix_json(corr.cosine)},
                    {"pearson", matrix_json(corr.pearson)},
                    {"avg_abs_off_diagonal", corr.avg_abs_off_diagonal},
                    {"avg_abs_off_diagonal_pearson", corr.avg_abs_off_diagonal_pearson},
                    {"per_sample_avg_abs_off_diagonal", corr.per_sample_avg_abs_off_diagonal},
                    {"s_avg", ds.s_avg},
                    {"a_max", ds.a_max},
                    {"ds", ds.ds},
                    {"config_hash", run.hash}};
  const auto dir = run.dir("reports");
  write_text(dir / "disentanglement.json", report.dump(2) + "\n");
  write_text(dir / "heatmap.csv", eval::matrix_csv(corr.cosine));

  // Final-iteration factor bundles, one JSON object per example.
  std::ostringstream lines;
  const Index budget = ck.model->prompt_budget(static_cast<Index>(bundle.catalog.max_title_tokens() + 1));
  for (std::size_t i = 0; i < samples.factors.size(); ++i) {
    const auto& ex = examples[i];
    const auto ctx = ck.model->reason(fit_prompt(ex.history, bundle.catalog, budget));
    const auto& b = ctx.trace.last();
    const json row{{"user", ex.user_id},
                   {"target", ex.target},
                   {"attention", tensor_to_json(b.attention)},
                   {"factors", tensor_to_json(b.factors)},
                   {"gate", tensor_to_json(b.gate)},
                   {"thought", tensor_to_json(b.thought)}};
    lines << row.dump() << '\n';
  }
  write_text(dir / "factor_bundles.jsonl", lines.str());
  spdlog::info("avg |corr| {:.4f}, DS {:.4f}", corr.avg_abs_off_diagonal, ds.ds);
  return kOk;
}

int cmd_bench(const Run& run, const std::optional<fs::path>& checkpoint) {
  const auto& s = run.settings;
  const auto bundle = load_data(s);
  std::unique_ptr<Recommender> model;
  if (checkpoint) {
    model = std::move(load_model(*checkpoint, bundle).model);
  } else {
    auto cfg = s;
    if (cfg.flr.n_iters == 0) cfg.flr.n_iters = 1;  // FLR weights are needed for the reasoning variants
    model = std::make_unique<Recommender>(experiment::build_model(cfg, bundle));
  }
  const auto trie = decoding::PrefixTrie::build(bundle.catalog);
  const auto rows = eval::latency_bench(*model, s.bench_iters, experiment::split_examples(bundle, s.eval_split),
                                        bundle.catalog, trie, s.bench);
  write_text(run.dir("reports") / "latency.csv", eval::latency_csv(rows));
  for (const auto& r : rows) {
    spdlog::info("{}: {:.3f} ± {:.3f} ms/sample, {:.1f} reasoning + {:.1f} decode passes", r.variant, r.mean_ms,
                 r.std_ms, r.reasoning_passes, r.decode_passes);
  }
  return kOk;
}

int cmd_sweep_k(const Run& run) {
  const auto bundle = load_data(run.settings);
  const auto dataset_hash = fmt::format("{:016x}", bundle.content_hash());
  std::ostringstream csv;
  csv.precision(10);
  csv << "k,dataset_hash,hr5,hr10,ndcg5,ndcg10,best_valid_ndcg5\n";
  for (Index k : run.settings.sweep_k) {
    json cfg = run.config;
    cfg["flr"]["k"] = k;
    const auto s = experiment::parse_settings(cfg);
    auto model = experiment::build_model(s, bundle);
    RegWeights weights;
    const auto result = train_sft(model, weights, bundle, s.sft);
    const auto report = experiment::evaluate(model, bundle, experiment::split_examples(bundle, s.eval_split), s,
                                             experiment::config_hash(cfg));
    const auto& a = report.all;
    csv << k << ',' << dataset_hash << ',' << a.hr5 << ',' << a.hr10 << ',' << a.ndcg5 << ',' << a.ndcg10 << ','
        << result.best_valid_ndcg5 << '\n';
    spdlog::info("K={}: ndcg@5 {:.4f}", k, a.ndcg5);
  }
  write_text(run.dir("reports") / "sweep_k.csv", csv.str());
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Factorized latent reasoning for generative sequential recommendation"};
  app.require_subcommand(1);
  app.fallthrough();
  std::optional<fs::path> config_file;
  std::vector<std::string> overrides;
  std::string out_dir;
  std::string log_level = "info";
  app.add_option("-c,--config", config_file, "JSON config file")->check(CLI::ExistingFile);
  app.add_option("-s,--set", overrides, "override a config key, e.g. --set flr.k=4");
  app.add_option("-o,--out-dir", out_dir, "output directory (overrides out_dir)");
  app.add_option("--log-level", log_level, "trace, debug, info, warn or error");

  fs::path checkpoint;
  auto* gen = app.add_subcommand("gen-data", "write a synthetic interaction log");
  auto* pre = app.add_subcommand("preprocess", "build the dataset bundle from data.raw");
  auto* sft = app.add_subcommand("train-sft", "supervised training of backbone and FLR module");
  auto* rl = app.add_subcommand("train-grpo", "latent-noise policy optimization from an SFT checkpoint");
  rl->add_option("--checkpoint", checkpoint, "SFT checkpoint")->required()->check(CLI::ExistingFile);
  auto* ev = app.add_subcommand("evaluate", "HR@K / NDCG@K with constrained beam search");
  ev->add_option("--checkpoint", checkpoint, "model checkpoint")->required()->check(CLI::ExistingFile);
  auto* an = app.add_subcommand("analyze", "factor correlation and disentanglement reports");
  an->add_option("--checkpoint", checkpoint, "model checkpoint")->required()->check(CLI::ExistingFile);
  std::optional<fs::path> bench_ckpt;
  auto* bench = app.add_subcommand("bench", "decode latency per reasoning depth");
  bench->add_option("--checkpoint", bench_ckpt, "model checkpoint (random weights if omitted)")
      ->check(CLI::ExistingFile);
  auto* sweep = app.add_subcommand("sweep-k", "train and evaluate for each K in sweep.k_values");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }
  spdlog::set_level(spdlog::level::from_str(log_level));
  if (!out_dir.empty()) overrides.push_back("out_dir=\"" + out_dir + "\"");

  try {
    const std::string command = app.get_subcommands().front()->get_name();
    const Run run = start_run(config_file, overrides, command);
    if (gen->parsed()) return cmd_gen_data(run);
    if (pre->parsed()) return cmd_preprocess(run);
    if (sft->parsed()) return cmd_train_sft(run);
    if (rl->parsed()) return cmd_train_grpo(run, checkpoint);
    if (ev->parsed()) return cmd_evaluate(run, checkpoint);
    if (an->parsed()) return cmd_analyze(run, checkpoint);
    if (bench->parsed()) return cmd_bench(run, bench_ckpt);
    if (sweep->parsed()) return cmd_sweep_k(run);
  } catch (const ConfigError& e) {
    spdlog::error("config error: {}", e.what());
    return kConfig;
  } catch (const NumericError& e) {
    spdlog::error("numeric divergence: {}", e.what());
    return kNumeric;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kFailure;
  }
  return kFailure;
}
