#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace posemb {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operand shapes do not line up.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// A precondition on how an operation is called was violated.
class ContractError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// Bad user data (token ids, positions, corpus contents).
class InputError : public Error {
 public:
  using Error::Error;
};

// An operation produced NaN or Inf from its inputs.
class NonFiniteError : public Error {
 public:
  explicit NonFiniteError(std::string op)
      : Error("non-finite value produced by " + op), op_(std::move(op)) {}
  const std::string& op() const noexcept { return op_; }

 private:
  std::string op_;
};

// Raised by the encoder when activations of a layer become non-finite.
class DivergenceError : public Error {
 public:
  DivergenceError(int layer, const std::string& what)
      : Error("divergence in layer " + std::to_string(layer) + ": " + what), layer_(layer) {}
  int layer() const noexcept { return layer_; }

 private:
  int layer_;
};

}  // namespace posemb
