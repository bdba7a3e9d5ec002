#pragma once

#include <stdexcept>
#include <string>

namespace end2 {

enum class ErrorKind {
  Config,
  Data,
  Shape,
  Contract,
  DegenerateProjection,
  DistortionFailed,
  NumericalAbort,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& what) : Error(ErrorKind::Config, what) {}
};

// Missing, unreadable or corrupt input data (NaN pixels, undecodable files).
struct DataError : Error {
  explicit DataError(const std::string& what) : Error(ErrorKind::Data, what) {}
};

struct ShapeError : Error {
  explicit ShapeError(const std::string& what) : Error(ErrorKind::Shape, what) {}
};

struct ContractError : Error {
  explicit ContractError(const std::string& what) : Error(ErrorKind::Contract, what) {}
};

struct DegenerateProjectionError : Error {
  explicit DegenerateProjectionError(const std::string& what)
      : Error(ErrorKind::DegenerateProjection, what) {}
};

class DistortionFailedError : public Error {
 public:
  DistortionFailedError(std::string distortion, const std::string& what)
      : Error(ErrorKind::DistortionFailed, distortion + ": " + what), distortion_(std::move(distortion)) {}
  const std::string& distortion() const noexcept { return distortion_; }

 private:
  std::string distortion_;
};

struct NumericalAbort : Error {
  explicit NumericalAbort(const std::string& what) : Error(ErrorKind::NumericalAbort, what) {}
};

/// Process exit code for an error kind: 2 config, 3 data, 4 numerical abort, 1 otherwise.
int exit_code(ErrorKind kind) noexcept;

}  // namespace end2
