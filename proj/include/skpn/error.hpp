#pragma once

#include <stdexcept>
#include <string>

namespace skpn {

// Raised when tensor or image extents do not line up. `dimension()` names
// the offending axis ("N", "C", "H", "W", "groups", "kernel", ...).
class ShapeError : public std::invalid_argument {
 public:
  ShapeError(std::string dimension, const std::string& what)
      : std::invalid_argument(what), dimension_(std::move(dimension)) {}

  const std::string& dimension() const noexcept { return dimension_; }

 private:
  std::string dimension_;
};

// Non-finite value encountered during training or evaluation.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace skpn
