// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace noisegauge {

/// Configuration or argument validation failure (CLI exit code 2).
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A referenced checkpoint, dataset or curve file is missing or unreadable (exit code 3).
class MissingArtifact : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Non-finite loss or gradient encountered during training (exit code 4).
class NumericalAbort : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace noisegauge
