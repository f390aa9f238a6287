#pragma once

#include "json.hpp"
#include "ictsp/model.hpp"
#include "ictsp/training.hpp"

namespace ictsp {

// JSON mapping for configs. Readers accept partial objects (missing keys keep
// their defaults) and reject unknown keys with ConfigError.
nlohmann::json config_to_json(const RetrievalConfig& cfg);
nlohmann::json config_to_json(const ModelConfig& cfg);
RetrievalConfig retrieval_config_from_json(const nlohmann::json& j, RetrievalConfig base = {});
ModelConfig model_config_from_json(const nlohmann::json& j, ModelConfig base = {});
nlohmann::json config_to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base = {});

/// Throws ConfigError naming the first key of `j` not listed in `known`.
void check_keys(const nlohmann::json& j, std::initializer_list<const char*> known, const char* where);

}  // namespace ictsp
