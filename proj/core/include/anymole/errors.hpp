#pragma once

#include <stdexcept>
#include <string>

namespace anymole {

/// Precondition or internal contract broken by the caller (wrong joint
/// count, mismatched shapes, out-of-range timestep, ...).
struct ContractViolation : std::logic_error {
  using std::logic_error::logic_error;
};

/// Malformed input file; the message names the offending key or location.
struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Invalid or inconsistent configuration (unknown view name, unsupported
/// fps, duplicate metric registration, missing seed, ...).
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Resampling rate that the operation cannot represent.
struct UnsupportedRate : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Filesystem read/write failure with path context.
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace anymole
