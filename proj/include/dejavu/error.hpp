#pragma once

#include <stdexcept>
#include <string>

namespace dejavu {

/// Base class for every error raised by the library. `exit_code()` is the
/// process status the CLI reports for this category.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual int exit_code() const noexcept { return 2; }
};

/// Invalid argument to an operation (k out of range, bad fraction, ...).
class ArgumentError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 1; }
};

/// Malformed file contents.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Well-formed input that violates a data invariant (duplicate IDs, NaN, ...).
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Caller broke an operation precondition, e.g. passed unnormalized rows.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// ID sets that should line up do not.
class AlignmentError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 3; }
};

/// Referenced record is missing from a table.
class DataError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 3; }
};

/// Non-finite loss during training.
class TrainingError : public Error {
 public:
  TrainingError(const std::string& what, int epoch) : Error(what), epoch_(epoch) {}
  int epoch() const noexcept { return epoch_; }
  int exit_code() const noexcept override { return 4; }

 private:
  int epoch_;
};

}  // namespace dejavu
