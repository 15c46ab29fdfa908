#pragma once

#include <stdexcept>
#include <string>

namespace drd {

// Error taxonomy shared by the library and the CLI. The CLI maps these to
// process exit codes: ConfigError -> 2, MissingDependencyError -> 3,
// NumericalError -> 4, anything else -> 1.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Bad or inconsistent configuration (unknown keys, invalid ranges, unbound
// template placeholders, malformed input files).
struct ConfigError : Error {
  using Error::Error;
};

// A pipeline stage was invoked before the stages it depends on.
struct MissingDependencyError : Error {
  using Error::Error;
};

// Non-finite values, divergence guards, or autodiff misuse.
struct NumericalError : Error {
  using Error::Error;
};

// Remote or simulated generation failure after retries.
struct BackendError : Error {
  using Error::Error;
};

// File read/parse failure; message carries path and, for line-oriented
// formats, the 1-based line number.
struct IoError : Error {
  using Error::Error;
};

}  // namespace drd
