#ifndef TENDUQ_ERROR_HPP
#define TENDUQ_ERROR_HPP

#include <stdexcept>
#include <string>

namespace tenduq {

/// Invalid run configuration or malformed input file. Maps to CLI exit code 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed tabular input; the message names the offending row/column.
class ParseError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

/// Factorization failure, stuck sampler, failing emulator. Maps to CLI exit code 3.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace tenduq

#endif  // TENDUQ_ERROR_HPP
