#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace hlpd {

// Coarse error class; the CLI maps it onto process exit codes.
enum class ErrorKind {
  usage,     // bad configuration or arguments
  data,      // malformed or unusable input data
  endpoint,  // remote model endpoint failure
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, std::string code, const std::string& message)
      : std::runtime_error(code + ": " + message), kind_(kind), code_(std::move(code)) {}

  ErrorKind kind() const noexcept { return kind_; }
  const std::string& code() const noexcept { return code_; }

 private:
  ErrorKind kind_;
  std::string code_;
};

#define HLPD_DEFINE_ERROR(Name, Kind)                                 \
  class Name : public Error {                                         \
   public:                                                            \
    explicit Name(const std::string& message)                         \
        : Error(ErrorKind::Kind, #Name, message) {}                   \
  }

HLPD_DEFINE_ERROR(InvalidConfig, usage);
HLPD_DEFINE_ERROR(EmptyText, data);
HLPD_DEFINE_ERROR(ContextOverflow, data);
HLPD_DEFINE_ERROR(InvalidSequence, data);
HLPD_DEFINE_ERROR(FrozenModel, usage);
HLPD_DEFINE_ERROR(EmptyBatch, data);
HLPD_DEFINE_ERROR(EmptyClass, data);
HLPD_DEFINE_ERROR(EmptyCorpus, data);
HLPD_DEFINE_ERROR(PoolExhausted, usage);
HLPD_DEFINE_ERROR(PrefixTooShort, data);
HLPD_DEFINE_ERROR(TextTooShort, data);
HLPD_DEFINE_ERROR(DegenerateRevision, data);
HLPD_DEFINE_ERROR(SchemaMismatch, data);
HLPD_DEFINE_ERROR(CheckpointError, data);
HLPD_DEFINE_ERROR(IoError, data);
HLPD_DEFINE_ERROR(EmptyCompletion, endpoint);

#undef HLPD_DEFINE_ERROR

class MalformedLine : public Error {
 public:
  MalformedLine(std::size_t line, const std::string& detail)
      : Error(ErrorKind::data, "MalformedLine",
              "line " + std::to_string(line) + ": " + detail),
        line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class EndpointError : public Error {
 public:
  EndpointError(const std::string& message, bool retryable)
      : Error(ErrorKind::endpoint, "EndpointError", message), retryable_(retryable) {}

  bool retryable() const noexcept { return retryable_; }

 private:
  bool retryable_;
};

}  // namespace hlpd
