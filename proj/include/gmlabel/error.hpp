#pragma once

#include <stdexcept>
#include <string>

namespace gmlabel {

// Every failure the library reports carries a stable machine-readable code
// next to the human message. The CLI serializes both into its error JSON.
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& what)
      : std::runtime_error(what), code_(std::move(code)) {}

  const std::string& code() const noexcept { return code_; }

 private:
  std::string code_;
};

struct ShapeError : Error {
  explicit ShapeError(const std::string& what) : Error("shape_mismatch", what) {}
};

struct NumericError : Error {
  explicit NumericError(const std::string& what) : Error("non_finite", what) {}
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& what) : Error("invalid_config", what) {}
};

struct CorruptCheckpoint : Error {
  explicit CorruptCheckpoint(const std::string& what) : Error("corrupt_checkpoint", what) {}
};

struct IoError : Error {
  explicit IoError(const std::string& what) : Error("io_error", what) {}
};

}  // namespace gmlabel
