#pragma once

#include <stdexcept>
#include <string>

namespace trainscope {

/// Malformed input data: bad magic, truncated payloads, manifest violations.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Lookup of an id (node, class, layer, iteration, cell) that does not exist.
class NotFound : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Argument outside its documented range.
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

}  // namespace trainscope
