#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace lmw {

/// Stable error codes surfaced by every module (and by the CLI as `error[<code>]`).
enum class ErrorCode {
  io,               // file missing or unreadable
  parse,            // malformed CSV cell or formula syntax
  missing_value,    // empty / NA cell
  empty_dataset,
  unknown_column,
  invalid_role,     // role column has the wrong type or range
  single_level,     // treatment with fewer than two levels
  formula,          // semantic formula error (outcome on LHS, bad transform)
  singular,         // rank-deficient system after aliasing
  invalid_argument, // inconsistent options (focal without ATT, ...)
  leverage,         // hat value of one under HC2/HC3
  clusters,         // fewer than two clusters
  separation,       // logistic regression diverged
  matching,         // not enough controls
  infeasible,       // oracle constraints inconsistent
  verification,     // --verify cross-check failed
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::io: return "io";
    case ErrorCode::parse: return "parse";
    case ErrorCode::missing_value: return "missing_value";
    case ErrorCode::empty_dataset: return "empty_dataset";
    case ErrorCode::unknown_column: return "unknown_column";
    case ErrorCode::invalid_role: return "invalid_role";
    case ErrorCode::single_level: return "single_level";
    case ErrorCode::formula: return "formula";
    case ErrorCode::singular: return "singular";
    case ErrorCode::invalid_argument: return "invalid_argument";
    case ErrorCode::leverage: return "leverage";
    case ErrorCode::clusters: return "clusters";
    case ErrorCode::separation: return "separation";
    case ErrorCode::matching: return "matching";
    case ErrorCode::infeasible: return "infeasible";
    case ErrorCode::verification: return "verification";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace lmw
