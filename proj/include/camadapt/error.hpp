#pragma once

#include <stdexcept>
#include <string>

namespace camadapt {

// Exit codes shared by every CLI command.
enum class ErrorKind {
  kCheckFailure = 1,
  kConfig = 2,
  kArtifactMismatch = 3,
  kIo = 4,
  kInvalidArgument = 5,
  kDegenerateInput = 6,
  kNumerical = 7,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const { return kind_; }

  // Maps the error onto the CLI exit-code contract (0 ok, 1 check, 2 config,
  // 3 artifact mismatch, 4 I/O). Data-level errors are reported as config
  // errors since they originate from user-supplied inputs.
  int exit_code() const {
    switch (kind_) {
      case ErrorKind::kCheckFailure:
        return 1;
      case ErrorKind::kArtifactMismatch:
        return 3;
      case ErrorKind::kIo:
        return 4;
      default:
        return 2;
    }
  }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

}  // namespace camadapt
