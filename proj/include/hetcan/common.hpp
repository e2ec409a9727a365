#pragma once

#include <cstdint>
#include <cstdio>
#include <stdexcept>
#include <string>

namespace hetcan {

using Index = std::int64_t;

// Shortest exact decimal form that round-trips through strtod.
inline std::string format_g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

// Error taxonomy. The CLI maps these onto exit codes:
// ConfigError -> 1, DataError -> 2, NumericError -> 3.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// Invalid configuration value, unknown key, inconsistent hyperparameters.
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error("config error: " + what) {}
};

// Malformed input files, dangling edges, bad labels.
class DataError : public Error {
 public:
  explicit DataError(const std::string& what) : Error("data error: " + what) {}
};

// NaN/Inf encountered, non-deterministic forward, diverged loss.
class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what) : Error("numeric error: " + what) {}
};

// Shape mismatch between tensors; always reports both shapes.
class DimensionError : public Error {
 public:
  explicit DimensionError(const std::string& what) : Error("dimension error: " + what) {}
};

}  // namespace hetcan
