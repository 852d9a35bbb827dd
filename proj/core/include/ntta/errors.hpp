#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace ntta {

/// Extents of two operands do not fit together.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A value lies outside an operation's mathematical domain (e.g. log of a non-positive number).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// A caller violated an API precondition (non-scalar loss, empty tape, ...).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Invalid configuration: bad hyperparameters, unknown keys, inconsistent sizes.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Malformed on-disk data. Carries the byte offset at which parsing failed.
class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& what, std::size_t offset)
      : std::runtime_error(what + " (at byte " + std::to_string(offset) + ")"), offset_(offset) {}

  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

}  // namespace ntta
