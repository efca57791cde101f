#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

#include <json.hpp>

namespace color_sieve {

inline constexpr std::string_view kToolName = "color-sieve";
inline constexpr std::string_view kToolVersion = "0.1.0";

/// Raised for every recoverable failure: bad input files, invalid
/// configurations, violated preconditions.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Provenance stamped into every artifact file.
struct ArtifactMeta {
  std::string tool_version{kToolVersion};
  std::string config_hash;
  std::uint64_t seed = 0;

  nlohmann::json to_json() const;
  static ArtifactMeta from_json(const nlohmann::json& j);

  bool operator==(const ArtifactMeta&) const = default;
};

}  // namespace color_sieve
