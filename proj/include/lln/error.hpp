#pragma once

#include <stdexcept>
#include <string>

namespace lln {

// Base for every error raised by the library. `kind()` is a stable,
// machine-readable tag used by the command-line front end.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
  virtual const char* kind() const noexcept = 0;
};

// Shapes, channel counts or hyperparameters that do not fit together.
class ConfigError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "config"; }
};

// Manifest or dataset content that cannot support the requested operation.
class DatasetError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "dataset"; }
};

// Malformed or truncated files.
class FormatError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "format"; }
};

// Files that cannot be opened, read or written.
class IoError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "io"; }
};

// Raised when optimisation produces a non-finite loss.
class TrainingError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "training"; }
};

// Matching could not produce a result (e.g. no mutual matches for a histogram).
class MatchError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "match"; }
};

}  // namespace lln
