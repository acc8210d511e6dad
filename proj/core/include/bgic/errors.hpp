// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace bgic {

// Process exit codes used by the CLI. Library code throws the typed
// exceptions below; the CLI maps them to these codes.
enum ExitCode : int {
  kExitOk = 0,
  kExitConfig = 2,
  kExitNumeric = 3,
  kExitFormat = 4,
};

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Bad or inconsistent user configuration (missing paths, unknown keys).
struct ConfigError : Error {
  using Error::Error;
};

// Numeric failure: shape mismatch, domain violation, non-finite values,
// degenerate geometry.
struct NumericError : Error {
  using Error::Error;
};

// File format problems: bad magic, unsupported version, truncated payload.
struct FormatError : Error {
  using Error::Error;
};

}  // namespace bgic
