#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace teamfusion {

// Base of every error the library throws. `code()` is the machine-readable
// name surfaced by the service and the CLI (e.g. "IllegalTransition").
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& message)
      : std::runtime_error(message), code_(std::move(code)) {}

  const std::string& code() const noexcept { return code_; }

 private:
  std::string code_;
};

#define TEAMFUSION_DEFINE_ERROR(Name)                                   \
  class Name : public Error {                                           \
   public:                                                              \
    explicit Name(const std::string& message) : Error(#Name, message) {} \
  };

TEAMFUSION_DEFINE_ERROR(IllegalTransition)
TEAMFUSION_DEFINE_ERROR(EmptyInput)
TEAMFUSION_DEFINE_ERROR(NonPermutation)
TEAMFUSION_DEFINE_ERROR(InvalidArgument)
TEAMFUSION_DEFINE_ERROR(TemplateKindMismatch)
TEAMFUSION_DEFINE_ERROR(TemplateError)
TEAMFUSION_DEFINE_ERROR(MissingEvidence)
TEAMFUSION_DEFINE_ERROR(EmptyOpinions)
TEAMFUSION_DEFINE_ERROR(EmptyResponse)
TEAMFUSION_DEFINE_ERROR(NoJsonFound)
TEAMFUSION_DEFINE_ERROR(UnknownOption)
TEAMFUSION_DEFINE_ERROR(KTooLarge)
TEAMFUSION_DEFINE_ERROR(TooSmall)
TEAMFUSION_DEFINE_ERROR(NonPermutationRow)
TEAMFUSION_DEFINE_ERROR(DomainError)
TEAMFUSION_DEFINE_ERROR(LengthMismatch)
TEAMFUSION_DEFINE_ERROR(UnparseableChoice)
TEAMFUSION_DEFINE_ERROR(Timeout)
TEAMFUSION_DEFINE_ERROR(TapeExhausted)
TEAMFUSION_DEFINE_ERROR(ParseError)
TEAMFUSION_DEFINE_ERROR(InvariantViolation)
TEAMFUSION_DEFINE_ERROR(PolicyInadmissible)
TEAMFUSION_DEFINE_ERROR(ValidationFailed)
TEAMFUSION_DEFINE_ERROR(NotFound)
TEAMFUSION_DEFINE_ERROR(Busy)
TEAMFUSION_DEFINE_ERROR(WrongPhase)
TEAMFUSION_DEFINE_ERROR(UnknownParticipant)
TEAMFUSION_DEFINE_ERROR(ConfigError)

#undef TEAMFUSION_DEFINE_ERROR

class SchemaViolation : public Error {
 public:
  SchemaViolation(std::string path, std::string detail)
      : Error("SchemaViolation", path + ": " + detail),
        path_(std::move(path)),
        detail_(std::move(detail)) {}

  const std::string& path() const noexcept { return path_; }
  const std::string& detail() const noexcept { return detail_; }

 private:
  std::string path_;
  std::string detail_;
};

class HttpError : public Error {
 public:
  HttpError(int status, const std::string& body)
      : Error("HttpError", "HTTP " + std::to_string(status) + ": " + body),
        status_(status) {}

  int status() const noexcept { return status_; }

 private:
  int status_;
};

class TapeMismatch : public Error {
 public:
  TapeMismatch(std::size_t call_index, std::string expected, std::string got)
      : Error("TapeMismatch", "call " + std::to_string(call_index) +
                                  ": expected digest " + expected + ", got " + got),
        call_index_(call_index),
        expected_(std::move(expected)),
        got_(std::move(got)) {}

  std::size_t call_index() const noexcept { return call_index_; }
  const std::string& expected_digest() const noexcept { return expected_; }
  const std::string& got_digest() const noexcept { return got_; }

 private:
  std::size_t call_index_;
  std::string expected_;
  std::string got_;
};

// A model call failed during a session step. `turn` is the 1-based index of
// the proxy turn within the current discussion (0 for non-discussion calls).
class BackendFailure : public Error {
 public:
  BackendFailure(std::size_t turn, std::string cause)
      : Error("BackendFailure",
              "backend failure at turn " + std::to_string(turn) + ": " + cause),
        turn_(turn),
        cause_(std::move(cause)) {}

  std::size_t turn() const noexcept { return turn_; }
  const std::string& cause() const noexcept { return cause_; }

 private:
  std::size_t turn_;
  std::string cause_;
};

}  // namespace teamfusion
