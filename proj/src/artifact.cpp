#include "color_sieve/artifact.hpp"

namespace color_sieve {

nlohmann::json ArtifactMeta::to_json() const {
  return nlohmann::json{{"tool", kToolName},
                        {"tool_version", tool_version},
                        {"config_hash", config_hash},
                        {"seed", seed}};
}

ArtifactMeta ArtifactMeta::from_json(const nlohmann::json& j) {
  ArtifactMeta meta;
  meta.tool_version = j.value("tool_version", std::string{});
  meta.config_hash = j.value("config_hash", std::string{});
  meta.seed = j.value("seed", std::uint64_t{0});
  return meta;
}

}  // namespace color_sieve
