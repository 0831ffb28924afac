#pragma once

#include <filesystem>
#include <memory>

#include <json.hpp>

#include "flr/objectives.hpp"
#include "flr/recommender.hpp"

namespace flr {

inline constexpr int kCheckpointVersion = 1;

struct LoadedCheckpoint {
  std::unique_ptr<Recommender> model;
  std::unique_ptr<RegWeights> weights;  // null when none were saved
  nlohmann::json meta;
};

// Binary layout: 8-byte magic, u64 header length, JSON header (configs,
// tensor names and shapes, `meta`), then the raw doubles of every tensor
// in header order. Round trips are bit-exact.
void save_checkpoint(const std::filesystem::path& path, const Recommender& model, const RegWeights* weights,
                     const nlohmann::json& meta = nlohmann::json::object());
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

nlohmann::json model_config_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j);

}  // namespace flr
