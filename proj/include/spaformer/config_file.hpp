#pragma once

#include <string>
#include <utility>
#include <vector>

#include "spaformer/model.hpp"
#include "spaformer/trainer.hpp"

namespace spaformer {

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
};

/// Flat "key = value" text; '#' starts a comment. Keys are the field names of
/// ModelConfig and TrainConfig (loss weights as weight_l1, weight_cgan,
/// weight_attention). Unknown keys and bad values throw ContractViolation
/// naming the line.
RunConfig parse_config(const std::string& text);
RunConfig load_config_file(const std::string& path);

/// Sets one ModelConfig field from text. Returns false for an unknown key.
bool set_model_field(ModelConfig& config, const std::string& key, const std::string& value);
/// Every ModelConfig field as (key, value) with round-trippable formatting.
std::vector<std::pair<std::string, std::string>> model_fields(const ModelConfig& config);

}  // namespace spaformer
