#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace dhi {

using Real = double;
using Index = Eigen::Index;

template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using RowMatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using Vector = VectorX<Real>;
using Matrix = MatrixX<Real>;

// Error hierarchy. The CLI maps each family onto a stable exit code:
// ConfigError -> 1, DataError -> 2, NumericalError -> 3.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Library misuse, e.g. backward() without a recorded forward pass.
class StateError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

class DataError : public Error {
 public:
  using Error::Error;
};

/// Tensor or vector extents disagree; the message names the offending axis.
class DimensionError : public DataError {
 public:
  using DataError::DataError;
};

class ParseError : public DataError {
 public:
  using DataError::DataError;
};

class NotFoundError : public DataError {
 public:
  using DataError::DataError;
};

/// Series that cannot be scored or normalized (constant, too short).
class DegenerateSeriesError : public DataError {
 public:
  using DataError::DataError;
};

class InsufficientHistoryError : public DataError {
 public:
  using DataError::DataError;
};

class NumericalError : public Error {
 public:
  using Error::Error;
};

/// Warning sink used by numerically-guarded operations. Defaults to stderr.
using WarningHandler = void (*)(const std::string&);
void set_warning_handler(WarningHandler handler);
void warn(const std::string& message);

}  // namespace dhi
