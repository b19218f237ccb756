// Copyright (c) 2026, the opsft authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace opsft {

/// Invalid parameters or configuration values.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A request the library declines to compute (empty input, state-space guard, ...).
class RefusalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Training diverged or otherwise failed to make progress.
class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Broken internal invariant (e.g. a token outside the vocabulary).
class InternalError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

}  // namespace opsft
