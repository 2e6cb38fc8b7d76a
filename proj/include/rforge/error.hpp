#pragma once

#include <stdexcept>
#include <string>

namespace rforge {

// Every failure raised by the library derives from Error. The category()
// string is what the CLI prints in its one-line error report.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual const char* category() const noexcept { return "internal"; }
};

class DimensionError : public Error {
 public:
  using Error::Error;
  const char* category() const noexcept override { return "dimension"; }
};

class FormatError : public Error {
 public:
  using Error::Error;
  const char* category() const noexcept override { return "format"; }
};

class SpecError : public Error {
 public:
  using Error::Error;
  const char* category() const noexcept override { return "config"; }
};

class ConfigError : public Error {
 public:
  using Error::Error;
  const char* category() const noexcept override { return "config"; }
};

class MissingInputError : public Error {
 public:
  using Error::Error;
  const char* category() const noexcept override { return "missing-input"; }
};

class TrainingError : public Error {
 public:
  TrainingError(const std::string& what, int epoch)
      : Error(what + " (epoch " + std::to_string(epoch) + ")"), epoch_(epoch) {}
  const char* category() const noexcept override { return "divergence"; }
  int epoch() const noexcept { return epoch_; }

 private:
  int epoch_;
};

// A NaN or infinity appeared in a tensor value.
class NonFiniteError : public Error {
 public:
  using Error::Error;
  const char* category() const noexcept override { return "divergence"; }
};

class DegenerateMapError : public Error {
 public:
  using Error::Error;
  const char* category() const noexcept override { return "degenerate-map"; }
};

class MetricError : public Error {
 public:
  using Error::Error;
  const char* category() const noexcept override { return "metric"; }
};

class UsageError : public Error {
 public:
  using Error::Error;
  const char* category() const noexcept override { return "usage"; }
};

class RangeError : public Error {
 public:
  using Error::Error;
  const char* category() const noexcept override { return "range"; }
};

}  // namespace rforge
