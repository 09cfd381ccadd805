#pragma once

#include <stdexcept>
#include <string>

namespace segchange {

// Base for everything thrown by this library.
struct Error : std::runtime_error {
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// Missing files, unreadable data, checkpoint/config mismatches.
struct LoadError : Error {
  using Error::Error;
};

// A constructed object violates an invariant (sizes, binary-ness, ids).
struct ValidationError : Error {
  using Error::Error;
};

// Tensor dimensions inconsistent with the operation's contract.
struct ShapeError : Error {
  using Error::Error;
};

// Bad or unknown configuration keys/values.
struct ConfigError : Error {
  using Error::Error;
};

// Synthetic data generation could not satisfy the requested bounds.
struct GenerationError : Error {
  using Error::Error;
};

// A caller-supplied value breaks a runtime contract (e.g. attention rows
// that do not sum to 1).
struct ContractError : Error {
  using Error::Error;
};

// Filesystem write/read failures.
struct IoError : Error {
  using Error::Error;
};

// Text embedding provider failure; `retriable` distinguishes transient
// transport problems from permanent ones.
struct ProviderError : Error {
  ProviderError(const std::string& what, bool retriable_)
      : Error(what), retriable(retriable_) {}
  bool retriable;
};

// Duplicate or missing backbone registry entries.
struct RegistryError : Error {
  using Error::Error;
};

// Training aborted (non-finite loss); message carries diagnostics.
struct TrainError : Error {
  using Error::Error;
};

// Evaluation requested on an empty split.
struct EmptyEvalError : Error {
  using Error::Error;
};

}  // namespace segchange
