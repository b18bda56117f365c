// wgicp - weighted generalized ICP registration and lidar odometry
// SPDX-License-Identifier: MIT

#ifndef WGICP_ERRORS_HPP
#define WGICP_ERRORS_HPP

#include <cstddef>
#include <stdexcept>
#include <string>

namespace wgicp {

/// Base class for every error thrown by this library.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IoError : Error {
  using Error::Error;
};

// File length is not a whole number of point records.
struct TruncatedFileError : IoError {
  using IoError::IoError;
};

struct MalformedLineError : IoError {
  MalformedLineError(const std::string& msg, std::size_t line)
      : IoError(msg + " (line " + std::to_string(line) + ")"), line_number(line) {}
  std::size_t line_number;
};

// Pose rotation block too far from any rotation matrix.
struct NonRotationError : IoError {
  NonRotationError(const std::string& msg, std::size_t line)
      : IoError(msg + " (line " + std::to_string(line) + ")"), line_number(line) {}
  std::size_t line_number;
};

struct EmptyCloudError : Error {
  using Error::Error;
};

struct NonPositiveVoxelError : Error {
  using Error::Error;
};

struct TooFewPointsError : Error {
  using Error::Error;
};

struct AngleNearPiError : Error {
  using Error::Error;
};

struct SingularMatrixError : Error {
  using Error::Error;
};

struct DomainError : Error {
  using Error::Error;
};

struct SingularNormalEquationsError : Error {
  using Error::Error;
};

struct DivergedError : Error {
  using Error::Error;
};

struct SequenceTooShortError : Error {
  using Error::Error;
};

struct InvalidArgumentError : Error {
  using Error::Error;
};

}  // namespace wgicp

#endif  // WGICP_ERRORS_HPP
