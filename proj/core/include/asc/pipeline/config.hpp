#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "asc/models.hpp"
#include "asc/pipeline/data.hpp"
#include "asc/pipeline/optim.hpp"

namespace asc::pipeline {

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
};

/// JSON with optional "model" and "train" objects whose keys mirror
/// ModelConfig and TrainConfig. Unknown keys raise InvalidConfig. When
/// "milestones" is absent the depth default is used, keeping only the
/// milestones that fall below "epochs".
RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::filesystem::path& path);
std::string to_json(const RunConfig& cfg);

/// What eval needs besides the weights: written next to every checkpoint.
struct ModelCard {
  ModelConfig model;
  Normalization normalization;
  std::uint64_t split_seed = 0;
  std::int64_t val_split = 5000;
};

std::string to_json(const ModelCard& card);
ModelCard parse_model_card(const std::string& json_text);
ModelCard load_model_card(const std::filesystem::path& path);

}  // namespace asc::pipeline
