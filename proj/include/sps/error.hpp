#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace sps {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input bytes. `offset` is the byte position of the offending record.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::size_t offset)
      : Error(what + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}

  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

/// Events or records delivered out of timestamp order.
class OrderingError : public Error {
 public:
  using Error::Error;
};

/// Master-equation integration left the physical state space.
class IntegrationError : public Error {
 public:
  using Error::Error;
};

/// Requested value lies outside what the model can reach.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Visibility requested from a histogram with no nonzero-lag correlations.
class UndefinedVisibility : public Error {
 public:
  using Error::Error;
};

/// Bad configuration key or value.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace sps
