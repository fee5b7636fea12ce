#pragma once

#include <stdexcept>
#include <string>

namespace sctts {

// Precondition violated by the caller (wrong dimension, negative std, ...).
class ContractError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Operation invoked in the wrong object state (backward before forward).
class StateError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Malformed or foreign file content.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Received data that cannot be decoded (corrupted index field, truncated stream).
class DecodeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Configuration file with an unknown key, a wrong type or an invalid value.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Training loss left the sane range.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void require(bool cond, const std::string& what) {
  if (!cond) throw ContractError(what);
}

}  // namespace sctts
