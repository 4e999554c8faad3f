#pragma once

#include <yaml-cpp/yaml.h>

#include "agentplan/config.hpp"

namespace agentplan::detail {

// Applies a config mapping (the document root or a scenario's `config` key).
void apply_config(const YAML::Node& root, RunConfig& cfg);

}  // namespace agentplan::detail
