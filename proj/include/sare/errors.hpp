#pragma once

#include <stdexcept>
#include <string>

namespace sare {

// Bad configuration or bad arguments (CLI exit code 1).
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// A required upstream artifact is absent or inconsistent (CLI exit code 2).
struct MissingArtifactError : std::runtime_error {
  explicit MissingArtifactError(const std::string& msg) : std::runtime_error(msg) {}
};

// Non-finite values, shape mismatches, divergence (CLI exit code 3).
struct NumericalError : std::runtime_error {
  explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace sare
