#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace ibss {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

// Every failure the library raises deliberately goes through Error so callers
// can branch on the category instead of parsing message strings.
enum class ErrorCategory {
  k_io,
  k_format,
  k_invalid_argument,
  k_insufficient_data,
  k_degenerate,
  k_numeric,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, std::string message)
      : std::runtime_error(std::move(message)), category_(category) {}

  ErrorCategory category() const { return category_; }

 private:
  ErrorCategory category_;
};

inline const char* error_category_name(ErrorCategory c) {
  switch (c) {
    case ErrorCategory::k_io: return "io";
    case ErrorCategory::k_format: return "format";
    case ErrorCategory::k_invalid_argument: return "invalid_argument";
    case ErrorCategory::k_insufficient_data: return "insufficient_data";
    case ErrorCategory::k_degenerate: return "degenerate";
    case ErrorCategory::k_numeric: return "numeric";
  }
  return "unknown";
}

}  // namespace ibss
