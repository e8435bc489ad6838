#pragma once

// JSON run configuration. Every key has a default; a config file or a
// `section.key=value` override may only name keys that exist in the
// defaults, and values must keep the default's type.

#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "bms/trainer.hpp"

namespace bms::config {

using json = nlohmann::json;

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Default configuration; "objective.kl" is "auto" (variant-dependent).
json defaults();

/// Fully materialized form of `cfg` (kl mode resolved).
json to_json(const train::TrainConfig& cfg);

/// Strict merge of `user` over the defaults, then conversion and validation.
train::TrainConfig from_json(const json& user);

json load_file(const std::filesystem::path& path);

/// Applies `dotted.key=value`. The value is read as JSON when it parses,
/// as a bare string otherwise (`objective.variant=WAE`).
void apply_override(json& user, std::string_view assignment);

/// load_file (when `path` is non-empty) + overrides + from_json.
train::TrainConfig resolve(const std::filesystem::path& path,
                           const std::vector<std::string>& overrides);

/// Git-style blob SHA-1 of the canonical (sorted, compact) dump.
std::string content_hash(const json& j);

}  // namespace bms::config
