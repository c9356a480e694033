#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <string_view>

#include <Eigen/Dense>

namespace cslid {

// All internal math is done in 64-bit. Matrices are time-major: one row per
// frame.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;
using MatrixMap = Eigen::Map<Matrix>;
using ConstMatrixMap = Eigen::Map<const Matrix>;

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();
inline constexpr double kInf = std::numeric_limits<double>::infinity();

/// Base error for everything thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input: bad shapes, bad files, bad flags. The CLI maps this to
/// exit code 1; every other Error is a runtime failure (exit code 2).
class ValidationError : public Error {
 public:
  using Error::Error;
};

#define CSLID_CHECK(cond, msg)                                 \
  do {                                                         \
    if (!(cond)) throw ::cslid::ValidationError(msg);          \
  } while (0)

inline double log_add(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  if (a < b) std::swap(a, b);
  return a + std::log1p(std::exp(b - a));
}

/// Row-wise log-softmax.
Matrix log_softmax_rows(const Matrix& logits);

/// Row-wise softmax.
Matrix softmax_rows(const Matrix& logits);

/// Index of the largest entry in a row; ties go to the lowest index.
Eigen::Index argmax_row(const Eigen::Ref<const RowVector>& row);

/// 64-bit FNV-1a, used for vocabulary fingerprints.
std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);

/// Deterministic sub-seed derivation (splitmix64 finalizer over the inputs).
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0);

}  // namespace cslid
