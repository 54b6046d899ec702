#pragma once

#include <vector>

#include "cme/common.hpp"

namespace cme::learn {

struct LogisticParams {
  double l2 = 1e-3;
  int max_iter = 500;
  double tol = 1e-6;
};

/// Multinomial logistic regression; class c scores W.row(c) . x + bias(c).
struct LogisticModel {
  MatrixD weights;  // [classes x features]
  VectorD bias;
  std::vector<int32_t> classes;

  /// Row-stochastic [n x classes].
  MatrixD probabilities(const MatrixD& features) const;
  Labels predict(const MatrixD& features) const;
};

struct LogisticFit {
  LogisticModel model;
  bool converged = false;  // false: best iterate returned after max_iter
  int iterations = 0;
  double loss = 0.0;
  double gradient_norm = 0.0;
};

/// Mean cross-entropy + (l2/2)||W||^2 (bias unpenalised). targets are class
/// positions in [0, weights.rows()). Gradients are written when the pointers are non-null.
double logistic_objective(const MatrixD& weights, const VectorD& bias, const MatrixD& features,
                          const std::vector<int>& targets, double l2, MatrixD* grad_weights, VectorD* grad_bias);

/// Gradient descent with backtracking line search from the zero initialisation.
/// Needs at least two distinct labels. Parameters are stored at f32 precision.
LogisticFit fit_logistic(const MatrixD& features, const Labels& labels, const LogisticParams& params = {});

}  // namespace cme::learn
