#pragma once

#include <stdexcept>
#include <string>

namespace subquant {

// Raised for malformed inputs (files, configs, shapes supplied by the user).
// The CLI maps it to exit code 2; any other exception maps to 1.
class InputError : public std::runtime_error {
 public:
  explicit InputError(const std::string& what) : std::runtime_error(what) {}
};

// Shape or contract violation inside the library.
class ShapeError : public std::invalid_argument {
 public:
  explicit ShapeError(const std::string& what) : std::invalid_argument(what) {}
};

}  // namespace subquant
