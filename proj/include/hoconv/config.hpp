// Copyright 2026 The hoconv Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "hoconv/experiment.hpp"

namespace hoconv {

/// Overlays a JSON tree on the defaults. Unknown keys, wrong types and invalid
/// values raise ConfigError naming the offending key path. The master seed is
/// applied to every component.
ExperimentConfig config_from_json(const nlohmann::json& tree);

/// Every field, fully resolved. Round-trips through config_from_json.
nlohmann::json config_to_json(const ExperimentConfig& config);

ExperimentConfig load_config(const std::filesystem::path& path);

/// Range checks shared by every entry point.
void validate_config(const ExperimentConfig& config);

}  // namespace hoconv
