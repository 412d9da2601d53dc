#pragma once

#include <stdexcept>
#include <string>

namespace cssl {

// Broad failure categories. The CLI maps these onto exit codes.
enum class ErrorKind {
  kConfig,
  kShape,
  kInput,
  kNumeric,
  kState,
  kStorage,
  kData,
};

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
  explicit ConfigError(const std::string& what) : Error(ErrorKind::kConfig, what) {}
};

class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& what) : Error(ErrorKind::kShape, what) {}
};

class InputError : public Error {
 public:
  explicit InputError(const std::string& what) : Error(ErrorKind::kInput, what) {}
};

class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what) : Error(ErrorKind::kNumeric, what) {}
};

class StateError : public Error {
 public:
  explicit StateError(const std::string& what) : Error(ErrorKind::kState, what) {}
};

class StorageError : public Error {
 public:
  explicit StorageError(const std::string& what) : Error(ErrorKind::kStorage, what) {}
};

// Malformed or missing dataset / snapshot files.
class DataError : public Error {
 public:
  explicit DataError(const std::string& what) : Error(ErrorKind::kData, what) {}
};

}  // namespace cssl
