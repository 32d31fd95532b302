#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "drift/eval/protocol.hpp"
#include "drift/synthlab/generator.hpp"
#include "drift/train/trainer.hpp"

namespace drift::cli {

// A fully resolved experiment. `canonical` holds every section with optional
// keys filled in; its SHA-256 is the config hash recorded in outputs.
struct ExperimentConfig {
  synth::GeneratorConfig generator;
  train::TrainConfig train;
  eval::ProtocolSpec protocol;
  std::vector<train::Method> methods;
  nlohmann::json canonical;
  std::string hash;
};

// Checks `j` against the schema and builds the config. On failure throws a
// Config error whose message lists every violation with its key path.
ExperimentConfig parse_config_json(const nlohmann::json& j);

// Io error when the file cannot be read, Config error when it is not JSON or
// violates the schema.
ExperimentConfig parse_config(const std::filesystem::path& path);

// Re-derives canonical and hash after fields were changed in code.
void refresh(ExperimentConfig& cfg);

}  // namespace drift::cli
