#pragma once

#include <stdexcept>
#include <string>

namespace matchdiff {

// Exit codes shared with the command-line tool.
enum class ErrorCode : int {
  config = 2,
  data = 3,
  numeric = 4,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& what) : Error(ErrorCode::config, what) {}
};

struct DataError : Error {
  explicit DataError(const std::string& what) : Error(ErrorCode::data, what) {}
};

struct NumericError : Error {
  explicit NumericError(const std::string& what) : Error(ErrorCode::numeric, what) {}
};

// Operand shapes do not agree.
struct DimensionError : Error {
  explicit DimensionError(const std::string& what) : Error(ErrorCode::numeric, what) {}
};

// Rank-deficient alignment problem (collinear or empty correspondences).
struct DegenerateError : NumericError {
  using NumericError::NumericError;
};

}  // namespace matchdiff
