#pragma once

#include <stdexcept>
#include <string>

namespace rectattn {

// Incompatible shapes, extents or sizes between operands.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// An input outside the domain where an operation is defined
// (zero divisor, degenerate attention map, empty mask union, ...).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Malformed or truncated binary file.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace rectattn
