#pragma once

#include <stdexcept>
#include <string>

namespace stseq {

enum class ErrorKind {
  kConfig = 1,
  kDimension = 2,
  kIndex = 3,
  kContract = 4,
  kNumeric = 5,
  kIo = 6,
};

// Base of every error raised by the library. The kind maps 1:1 onto the
// C API status codes.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& w) : Error(ErrorKind::kConfig, w) {}
};

class DimensionError : public Error {
 public:
  explicit DimensionError(const std::string& w)
      : Error(ErrorKind::kDimension, w) {}
};

class IndexError : public Error {
 public:
  explicit IndexError(const std::string& w) : Error(ErrorKind::kIndex, w) {}
};

class ContractError : public Error {
 public:
  explicit ContractError(const std::string& w)
      : Error(ErrorKind::kContract, w) {}
};

class NumericError : public Error {
 public:
  explicit NumericError(const std::string& w)
      : Error(ErrorKind::kNumeric, w) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& w) : Error(ErrorKind::kIo, w) {}
};

}  // namespace stseq
