// Copyright 2026 The TaI-DPT Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace tai {

/// Bad input: shapes, hyperparameters, malformed files. Maps to exit code 3.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Filesystem failures and truncated or corrupt artifacts. Maps to exit code 4.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace tai
