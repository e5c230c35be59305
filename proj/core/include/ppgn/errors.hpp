#pragma once

#include <stdexcept>
#include <string>

#include "ppgn/config.hpp"

PPGN_NAMESPACE_BEGIN

/// Process exit codes used by the command-line tool.
enum class ExitCode : int {
  kOk = 0,
  kInvalidInput = 2,
  kIo = 3,
  kNumeric = 4,
};

class Error : public std::runtime_error {
 public:
  Error(ExitCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}
  ExitCode code() const noexcept { return code_; }

 private:
  ExitCode code_;
};

class InvalidInputError : public Error {
 public:
  explicit InvalidInputError(const std::string& what)
      : Error(ExitCode::kInvalidInput, what) {}
};

/// A caller violated a documented precondition (e.g. a box outside its cell).
class PreconditionError : public Error {
 public:
  explicit PreconditionError(const std::string& what)
      : Error(ExitCode::kInvalidInput, what) {}
};

class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& what)
      : Error(ExitCode::kInvalidInput, what) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error(ExitCode::kIo, what) {}
};

class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what)
      : Error(ExitCode::kNumeric, what) {}
};

/// Internal invariant broken between cooperating components.
class ConsistencyError : public Error {
 public:
  explicit ConsistencyError(const std::string& what)
      : Error(ExitCode::kNumeric, what) {}
};

PPGN_NAMESPACE_END
