#pragma once

#include <string>
#include <vector>

#include "json.hpp"

#include "hydra/experiments.hpp"
#include "hydra/fusion.hpp"

namespace hydra::cli {

using nlohmann::json;

// JSON views of the library configs. Every field is written, so the dump of
// a default-constructed config documents the full schema.
json to_json(const Config1D& c);
Config1D config_1d_from_json(const json& j);

json to_json(const HemisphereConfig& c);
HemisphereConfig hemisphere_config_from_json(const json& j);

json to_json(const FusionSimConfig& c);
FusionSimConfig fusion_config_from_json(const json& j);

/// Overlays `patch` onto `base`. Keys absent from `base` are rejected with
/// kInvalidConfig, so typos in config files never pass silently.
void merge_strict(json& base, const json& patch, const std::string& path = "");

/// Applies "a.b.c=value" overrides; the value is parsed as JSON when
/// possible and taken as a string otherwise.
void apply_overrides(json& base, const std::vector<std::string>& assignments);

json load_json_file(const std::string& path);

}  // namespace hydra::cli
