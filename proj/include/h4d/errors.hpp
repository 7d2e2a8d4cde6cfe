#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace h4d {

// Base of every error raised by the library. CLI maps subclasses to exit
// codes: InputError -> 2, NumericalError -> 3.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InputError : public Error {
 public:
  using Error::Error;
};

class NumericalError : public Error {
 public:
  using Error::Error;
};

class DegenerateInput : public InputError {
 public:
  using InputError::InputError;
};

class DimensionMismatch : public InputError {
 public:
  using InputError::InputError;
};

class ParseError : public InputError {
 public:
  ParseError(std::string field, const std::string& what)
      : InputError("parse error in '" + field + "': " + what),
        field_(std::move(field)) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

class InvariantViolation : public InputError {
 public:
  InvariantViolation(std::string check, const std::string& what)
      : InputError("invariant violation (" + check + "): " + what),
        check_(std::move(check)) {}
  const std::string& check() const { return check_; }

 private:
  std::string check_;
};

class BehindCamera : public InputError {
 public:
  explicit BehindCamera(std::size_t index)
      : InputError("point " + std::to_string(index) + " is behind the camera"),
        index_(index) {}
  std::size_t index() const { return index_; }

 private:
  std::size_t index_;
};

class InsufficientConstraints : public InputError {
 public:
  using InputError::InputError;
};

class NumericalFailure : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

class UnliftableDetection : public InputError {
 public:
  using InputError::InputError;
};

class NonMonotoneFrame : public InputError {
 public:
  NonMonotoneFrame(long long frame, long long last)
      : InputError("frame " + std::to_string(frame) +
                   " is not after last processed frame " +
                   std::to_string(last)) {}
};

class DegenerateConfiguration : public InputError {
 public:
  using InputError::InputError;
};

class NoValidKeypoints : public InputError {
 public:
  using InputError::InputError;
};

}  // namespace h4d
