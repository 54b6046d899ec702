#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace cme {

// Activation tensors live in f32 (the interchange precision); learners work in f64.
using RowMatrixF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using IntMatrix = Eigen::Matrix<int32_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixD = Eigen::MatrixXd;
using VectorD = Eigen::VectorXd;
using Labels = std::vector<int32_t>;
using IndexList = std::vector<std::size_t>;

/// Concept value code for "not annotated".
inline constexpr int32_t kMissing = -1;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or inconsistent on-disk artifact.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Input that violates a documented precondition or invariant.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Index of the largest entry; ties resolve toward the lowest index.
template <typename Row>
std::size_t argmax_lowest(const Row& row) {
  std::size_t best = 0;
  for (Eigen::Index j = 1; j < row.size(); ++j) {
    if (row(j) > row(best)) best = static_cast<std::size_t>(j);
  }
  return best;
}

/// Stable 64-bit seed derived from a parent seed and a label.
uint64_t derive_seed(uint64_t parent, std::string_view label);

/// Worker count: CME_THREADS if set (>= 1), otherwise hardware concurrency.
std::size_t thread_budget();

/// Runs fn(i) for i in [0, count) on up to thread_budget() threads. Each index is
/// processed exactly once; the first exception thrown is rethrown on the caller.
void parallel_for(std::size_t count, const std::function<void(std::size_t)>& fn);

/// Gathers rows of a matrix in the given order.
RowMatrixF take_rows(const RowMatrixF& m, const IndexList& rows);
IntMatrix take_rows(const IntMatrix& m, const IndexList& rows);
Labels take(const Labels& v, const IndexList& rows);

MatrixD to_double(const RowMatrixF& m);

}  // namespace cme
