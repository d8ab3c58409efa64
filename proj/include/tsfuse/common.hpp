#pragma once

// Shared error types and small helpers.
//
// Error categories map onto CLI exit codes:
//   ConfigError -> 2 (bad configuration / arguments)
//   DataError   -> 3 (unreadable or inconsistent input data)
//   RunError    -> 4 (failure while computing, e.g. diverging training)

#include <cstdint>
#include <stdexcept>
#include <string>

namespace tsfuse {

class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

class DataError : public std::runtime_error {
 public:
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

class RunError : public std::runtime_error {
 public:
  explicit RunError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace tsfuse
