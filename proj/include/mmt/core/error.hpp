#pragma once

#include <stdexcept>
#include <string>

namespace mmt {

// Error classes surface verbatim in CLI diagnostics ("error: <class>: ...").
enum class ErrorKind {
  io,
  empty_corpus,
  config,
  shape,
  value,
  range,
  format,
  insufficient_data,
  runtime,
};

inline const char* error_kind_name(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::io: return "io_error";
    case ErrorKind::empty_corpus: return "empty_corpus";
    case ErrorKind::config: return "config_error";
    case ErrorKind::shape: return "shape_error";
    case ErrorKind::value: return "value_error";
    case ErrorKind::range: return "range_error";
    case ErrorKind::format: return "format_error";
    case ErrorKind::insufficient_data: return "insufficient_data";
    case ErrorKind::runtime: return "runtime_error";
  }
  return "error";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }
  const char* kind_name() const noexcept { return error_kind_name(kind_); }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

}  // namespace mmt
