#pragma once

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace lvqa {

/// Process exit codes shared by every command.
enum class ExitCode : int {
  kOk = 0,
  kValidation = 1,
  kIo = 2,
  kBackend = 3,
  kUsage = 4,
};

/// Root of the error taxonomy. Each subclass maps to one exit code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual ExitCode exit_code() const noexcept { return ExitCode::kValidation; }
};

// Malformed annotation record; the message names the offending field.
class SchemaError : public Error {
 public:
  using Error::Error;
};

// Item fails an admissibility rule required by the operation.
class InvalidItemError : public Error {
 public:
  using Error::Error;
};

class GeometryError : public Error {
 public:
  using Error::Error;
};

class EmptyMaskError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
  ExitCode exit_code() const noexcept override { return ExitCode::kUsage; }
};

class EmptyInputError : public Error {
 public:
  using Error::Error;
};

// Length mismatch or constant input to a rank correlation.
class DegenerateInputError : public Error {
 public:
  using Error::Error;
};

// Item id sets of two score maps differ.
class AlignmentError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
  ExitCode exit_code() const noexcept override { return ExitCode::kIo; }
};

class BackendError : public Error {
 public:
  using Error::Error;
  ExitCode exit_code() const noexcept override { return ExitCode::kBackend; }
  virtual bool retryable() const noexcept { return false; }
};

// Transport failure; safe to retry.
class BackendUnavailableError : public BackendError {
 public:
  using BackendError::BackendError;
  bool retryable() const noexcept override { return true; }
};

// Backend answered but the payload violates the wire contract.
class ProtocolError : public BackendError {
 public:
  using BackendError::BackendError;
};

// Study service errors. The HTTP layer maps these onto status codes.
class NotFoundError : public Error {
 public:
  using Error::Error;
};

class ConflictError : public Error {
 public:
  using Error::Error;
};

class InsufficientDataError : public Error {
 public:
  using Error::Error;
};

// Operation not available for the study's protocol.
class ModeError : public Error {
 public:
  using Error::Error;
};

// Some localized tasks have no response yet.
class IncompleteStudyError : public Error {
 public:
  IncompleteStudyError(const std::string& what, std::vector<std::string> unanswered)
      : Error(what), unanswered_(std::move(unanswered)) {}
  const std::vector<std::string>& unanswered() const noexcept { return unanswered_; }

 private:
  std::vector<std::string> unanswered_;
};

}  // namespace lvqa
