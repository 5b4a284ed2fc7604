#pragma once

#include <stdexcept>
#include <string>

namespace pft {

enum class ErrorKind {
  dimension,   // tensor shape / extent mismatch
  config,      // invalid configuration value or combination
  data,        // dataset content problem (missing class, empty split, ...)
  index,       // out-of-range index (labels, token ids, ...)
  contract,    // API misuse (non-scalar backward root, double backward, ...)
  integrity,   // checksum or file-structure violation
  io,          // filesystem failure
  length,      // sequence does not fit the context window
  usage,       // bad command line
  runtime,     // anything that went wrong mid-run (NaN loss, ...)
};

inline const char* to_string(ErrorKind k) {
  switch (k) {
    case ErrorKind::dimension: return "dimension";
    case ErrorKind::config:    return "config";
    case ErrorKind::data:      return "data";
    case ErrorKind::index:     return "index";
    case ErrorKind::contract:  return "contract";
    case ErrorKind::integrity: return "integrity";
    case ErrorKind::io:        return "io";
    case ErrorKind::length:    return "length";
    case ErrorKind::usage:     return "usage";
    case ErrorKind::runtime:   return "runtime";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + " error: " + message),
        kind_(kind) {}

  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

inline Error dimension_error(const std::string& m) { return {ErrorKind::dimension, m}; }
inline Error config_error(const std::string& m)    { return {ErrorKind::config, m}; }
inline Error data_error(const std::string& m)      { return {ErrorKind::data, m}; }
inline Error index_error(const std::string& m)     { return {ErrorKind::index, m}; }
inline Error contract_error(const std::string& m)  { return {ErrorKind::contract, m}; }
inline Error integrity_error(const std::string& m) { return {ErrorKind::integrity, m}; }
inline Error io_error(const std::string& m)        { return {ErrorKind::io, m}; }
inline Error length_error(const std::string& m)    { return {ErrorKind::length, m}; }
inline Error usage_error(const std::string& m)     { return {ErrorKind::usage, m}; }
inline Error runtime_error(const std::string& m)   { return {ErrorKind::runtime, m}; }

}  // namespace pft
