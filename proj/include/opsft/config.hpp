// Copyright (c) 2026, the opsft authors
// SPDX-License-Identifier: Apache-2.0

// Flat `key = value` run configuration. '#' starts a comment; blank lines are
// ignored. Unknown or repeated keys are errors, so a typo never silently falls
// back to a default.

#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "opsft/trainer.hpp"

namespace opsft {

/// Every key understood by parse_config, in the order write_config emits them.
const std::vector<std::string>& config_keys();

/// Applies the pairs in `text` on top of `base`, then validates.
TrainConfig parse_config(const std::string& text, const TrainConfig& base = {});
TrainConfig load_config(const std::string& path, const TrainConfig& base = {});

/// Applies one key. Throws ConfigError on an unknown key or a malformed value.
void set_config_value(TrainConfig& cfg, const std::string& key, const std::string& value);

void write_config(std::ostream& out, const TrainConfig& cfg);

}  // namespace opsft
