// Copyright 2026 The FSVG Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <json.hpp>

#include "fsvg/model.hpp"

namespace fsvg {

nlohmann::ordered_json config_to_json(const ModelConfig& config);
// Throws FormatError on missing or mistyped fields.
ModelConfig config_from_json(const nlohmann::ordered_json& j);

}  // namespace fsvg
