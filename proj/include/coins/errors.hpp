#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace coins {

/// Bad shapes, out-of-range labels, inconsistent arguments.
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Input is numerically degenerate (e.g. normalizing a zero vector).
class DegenerateInput : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Operation requested in the wrong phase, e.g. proxy loss before clustering.
class StateError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Constants outside the domain of a bound formula.
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Data violates an assumption the analysis needs (e.g. non-uniform class size).
class UnsupportedData : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class PlacementError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed binary or text file. Carries the byte offset where parsing failed.
class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& what, std::size_t offset)
      : std::runtime_error(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}

  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

}  // namespace coins
