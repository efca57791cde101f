#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "color_sieve/config.hpp"

namespace color_sieve {

struct StageOutcome {
  std::string name;
  bool ran = false;
};

struct PipelineSummary {
  std::filesystem::path run_dir;
  std::string config_hash;
  std::vector<StageOutcome> stages;

  nlohmann::ordered_json to_json() const;
};

/// Stage names in execution order.
const std::vector<std::string>& pipeline_stages();

/// corpus -> train-prior -> finetune -> score -> select -> train-target ->
/// eval -> report. A stage is skipped when all its outputs exist, carry this
/// config's hash, and no upstream stage ran in this invocation. Any failure
/// is rethrown as Error naming the stage.
PipelineSummary run_pipeline(const RunConfig& config, const std::filesystem::path& run_dir);

/// Config hash embedded in an artifact file, by file type (.seq, .model,
/// .tsv, .json). nullopt when the file is missing or carries no hash.
std::optional<std::string> artifact_config_hash(const std::filesystem::path& path);

}  // namespace color_sieve
