#pragma once

#include <stdexcept>
#include <string>

namespace stnet {

// Internal failure (I/O, numerical breakdown). Maps to CLI exit code 2.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Caller supplied something invalid: bad config, bad argument, bad shape.
// Maps to CLI exit code 1.
class ValidationError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

// Training produced a non-finite loss; `layer` names the first node whose
// output went non-finite.
class NonFiniteError : public Error {
 public:
  NonFiniteError(std::string layer, const std::string& what)
      : Error(what), layer_(std::move(layer)) {}
  const std::string& layer() const { return layer_; }

 private:
  std::string layer_;
};

}  // namespace stnet
