#pragma once

#include <stdexcept>
#include <string>

namespace mrp {

enum class ErrorKind {
  invalid_shape,
  invalid_config,
  contract_violation,
  no_grad,
  io,
  missing_artifact,
  divergence,
  unknown_symbol,
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::invalid_shape: return "invalid shape";
    case ErrorKind::invalid_config: return "invalid config";
    case ErrorKind::contract_violation: return "contract violation";
    case ErrorKind::no_grad: return "no gradient";
    case ErrorKind::io: return "io error";
    case ErrorKind::missing_artifact: return "missing artifact";
    case ErrorKind::divergence: return "divergence";
    case ErrorKind::unknown_symbol: return "unknown symbol";
  }
  return "error";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) {
  throw Error(kind, what);
}

// Takes a literal so the passing path allocates nothing; build dynamic
// messages behind an explicit branch.
inline void require(bool cond, ErrorKind kind, const char* what) {
  if (!cond) fail(kind, what);
}

}  // namespace mrp
