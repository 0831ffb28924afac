#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "flr/eval.hpp"
#include "flr/grpo.hpp"
#include "flr/train.hpp"

namespace flr::experiment {

inline constexpr const char* kVersion = "flrec-0.1.0";

// Every recognised key with its default value.
nlohmann::json default_config();

// Defaults, then the file (if any), then `key=value` overrides with dotted
// keys. Values parse as JSON and fall back to plain strings. Unknown keys
// and malformed values throw ConfigError.
nlohmann::json resolve_config(const std::optional<std::filesystem::path>& file,
                              std::span<const std::string> overrides = {});

// Sets one dotted key; the key must already exist.
void set_key(nlohmann::json& config, const std::string& dotted, const std::string& value);

// 16 hex digits of FNV-1a over the resolved config, output dir excluded.
std::string config_hash(const nlohmann::json& config);

struct Settings {
  std::uint64_t seed = 0;
  std::filesystem::path out_dir;
  ModelConfig model;  // vocab_size is filled in from the data
  FlrConfig flr;
  RegToggles toggles;
  std::optional<std::array<double, 3>> fixed_lambdas;
  SftConfig sft;
  grpo::GrpoConfig grpo;
  data::SyntheticConfig synthetic;
  data::PipelineOptions pipeline;
  std::filesystem::path raw_path;
  std::filesystem::path bundle_dir;
  std::size_t eval_beam_width = 10;
  std::size_t eval_max_examples = 0;
  std::string eval_split = "test";
  std::size_t analyze_samples = 200;
  eval::LatencyOptions bench;
  std::vector<Index> bench_iters;
  std::vector<Index> sweep_k;
};

// Typed view of a resolved config; validates every section.
Settings parse_settings(const nlohmann::json& config);

// Synthetic corpus pushed through the preprocessing pipeline.
data::DatasetBundle synthetic_bundle(const Settings& s);

// Fresh model sized to the bundle's vocabulary.
Recommender build_model(const Settings& s, const data::DatasetBundle& bundle);

std::span<const data::Example> split_examples(const data::DatasetBundle& bundle, const std::string& split);

// Beam-search evaluation with the popular/unpopular breakdown.
eval::MetricsReport evaluate(const Recommender& model, const data::DatasetBundle& bundle,
                             std::span<const data::Example> examples, const Settings& s, const std::string& hash);

}  // namespace flr::experiment
