#pragma once

#include <stdexcept>
#include <string>

namespace mgvq {

// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Argument violates a documented precondition (bad shape, empty input, ...).
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

// Non-finite values or a degenerate quantity where a finite one is required.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Malformed file or unsupported on-disk format.
class FormatError : public Error {
 public:
  using Error::Error;
};

// Configuration record failed schema validation.
class ConfigError : public Error {
 public:
  using Error::Error;
};

#define MGVQ_REQUIRE(cond, msg)                                   \
  do {                                                            \
    if (!(cond)) throw ::mgvq::InvalidArgument(std::string(msg)); \
  } while (0)

}  // namespace mgvq
