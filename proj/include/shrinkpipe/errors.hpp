// SPDX-License-Identifier: Apache-2.0
//
// Error taxonomy. Each class maps to a distinct process exit code so that
// scripted runs can tell a bad config from a bad corpus from a NaN.

#pragma once

#include <stdexcept>
#include <string>

namespace shrinkpipe {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Shape mismatches are programming or data errors; they carry the op name
// and the offending dims in the message.
struct ShapeError : DataError {
  using DataError::DataError;
};

namespace exit_code {
inline constexpr int ok = 0;
inline constexpr int config = 2;
inline constexpr int data = 3;
inline constexpr int numeric = 4;
inline constexpr int io = 5;
}  // namespace exit_code

}  // namespace shrinkpipe
