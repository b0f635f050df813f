#ifndef SDPT_ERRORS_HPP
#define SDPT_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace sdpt {

// Base class for all library errors. CLI maps subclasses to exit codes:
// usage errors -> 1, data/shape/config/format -> 2, numeric failures -> 3.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Mismatched tensor extents, invalid axes, out-of-range indices.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Invalid module configuration (bad strides, empty plans, zero extents).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Non-finite values, degenerate linear systems, failed numeric contracts.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Malformed files: bad magic, truncated payload, checksum mismatch.
class FormatError : public Error {
 public:
  using Error::Error;
};

// Filesystem-level failures (missing paths, unreadable files).
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace sdpt

#endif
