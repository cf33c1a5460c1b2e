#pragma once

#include <stdexcept>
#include <string>

namespace dqen {

// Array shapes that do not conform to an operation's contract.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Invalid configuration values or unknown configuration keys.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Malformed, mismatched or unsupported files on disk.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Non-finite values where finite input is required.
class NumericError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

}  // namespace dqen
