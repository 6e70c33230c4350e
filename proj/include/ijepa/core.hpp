#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace ijepa {

// All tensors are row-major; one token (or one patch, one sample) per row.
template <class T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <class T>
using RowVec = Eigen::Matrix<T, 1, Eigen::Dynamic>;

using Index = std::int64_t;

// Error classes. Each maps onto one CLI exit code (see exit_code()).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class ContractViolation : public Error {
 public:
  using Error::Error;
};

class SamplerExhausted : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class NumericalFailure : public Error {
 public:
  NumericalFailure(std::string where, int layer)
      : Error("non-finite value in " + where +
              (layer >= 0 ? " at layer " + std::to_string(layer) : std::string())),
        where_(std::move(where)),
        layer_(layer) {}

  const std::string& where() const { return where_; }
  int layer() const { return layer_; }

 private:
  std::string where_;
  int layer_;
};

enum class CheckpointErrorKind { kVersion, kTruncated, kShape, kMissing, kFormat };

class CheckpointError : public Error {
 public:
  CheckpointError(CheckpointErrorKind kind, const std::string& msg) : Error(msg), kind_(kind) {}
  CheckpointErrorKind kind() const { return kind_; }

 private:
  CheckpointErrorKind kind_;
};

enum ExitCode : int {
  kExitOk = 0,
  kExitRuntime = 1,
  kExitUsage = 2,
  kExitNumerical = 3,
};

inline int exit_code(const std::exception& e) {
  if (dynamic_cast<const NumericalFailure*>(&e) != nullptr) return kExitNumerical;
  return kExitRuntime;
}

template <class T>
bool all_finite(const Mat<T>& m) {
  return m.allFinite();
}

template <class To, class From>
Mat<To> cast(const Mat<From>& m) {
  return m.template cast<To>();
}

// Gather rows of `src` at `rows` into a new matrix.
template <class T>
Mat<T> gather_rows(const Mat<T>& src, const std::vector<int>& rows) {
  Mat<T> out(static_cast<Index>(rows.size()), src.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= src.rows()) {
      throw DimensionError("row index " + std::to_string(rows[i]) + " out of range [0, " +
                           std::to_string(src.rows()) + ")");
    }
    out.row(static_cast<Index>(i)) = src.row(rows[i]);
  }
  return out;
}

}  // namespace ijepa
