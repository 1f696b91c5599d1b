#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace gmn {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A precondition on an argument was violated (degenerate box, bad shape...).
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// Malformed annotation or config file. `line()` is 1-based, 0 if unknown.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : Error(line ? what + " (line " + std::to_string(line) + ")" : what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// Annotation that parsed but lies outside the image.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// The synthetic generator could not place the requested instances.
class PlacementError : public Error {
 public:
  using Error::Error;
};

/// Training produced a non-finite loss.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

/// Lookup of an unknown image, job or map.
class NotFound : public Error {
 public:
  using Error::Error;
};

}  // namespace gmn
