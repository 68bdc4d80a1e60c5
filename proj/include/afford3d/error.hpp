#pragma once

#include <stdexcept>
#include <string>

namespace afford3d {

enum class ErrorKind {
  InvalidInput,
  Parameter,
  Shape,
  NumericDomain,
  Format,
  Taxonomy,
  Reference,
  Dataset,
  Config,
  UndefinedMetric,
  Io,
};

const char* to_string(ErrorKind kind);

// Single exception type for the library; callers switch on kind().
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidInput: return "invalid input";
    case ErrorKind::Parameter: return "parameter error";
    case ErrorKind::Shape: return "shape error";
    case ErrorKind::NumericDomain: return "numeric domain error";
    case ErrorKind::Format: return "format error";
    case ErrorKind::Taxonomy: return "taxonomy error";
    case ErrorKind::Reference: return "reference error";
    case ErrorKind::Dataset: return "dataset error";
    case ErrorKind::Config: return "configuration error";
    case ErrorKind::UndefinedMetric: return "undefined metric";
    case ErrorKind::Io: return "i/o error";
  }
  return "error";
}

}  // namespace afford3d
