#pragma once

#include <stdexcept>

namespace aled {

/// Bad arguments, invalid configuration, contract violations.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Missing, truncated, or inconsistent on-disk data.
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Non-finite values where finite ones are required (diverged training, ...).
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace aled
