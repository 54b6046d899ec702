#include "cme/logistic.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

namespace cme::learn {

namespace {

MatrixD row_softmax(MatrixD scores) {
  const VectorD top = scores.rowwise().maxCoeff();
  scores.colwise() -= top;
  scores = scores.array().exp().matrix();
  const VectorD sums = scores.rowwise().sum();
  return sums.asDiagonal().inverse() * scores;
}

}  // namespace

MatrixD LogisticModel::probabilities(const MatrixD& features) const {
  if (features.cols() != weights.cols()) {
    throw ValidationError(fmt::format("logistic model expects {} features, got {}", weights.cols(), features.cols()));
  }
  MatrixD scores = features * weights.transpose();
  scores.rowwise() += bias.transpose();
  return row_softmax(std::move(scores));
}

Labels LogisticModel::predict(const MatrixD& features) const {
  if (features.cols() != weights.cols()) {
    throw ValidationError(fmt::format("logistic model expects {} features, got {}", weights.cols(), features.cols()));
  }
  MatrixD scores = features * weights.transpose();
  scores.rowwise() += bias.transpose();
  Labels out(static_cast<std::size_t>(features.rows()));
  for (Eigen::Index r = 0; r < scores.rows(); ++r) out[static_cast<std::size_t>(r)] = classes[argmax_lowest(scores.row(r))];
  return out;
}

double logistic_objective(const MatrixD& weights, const VectorD& bias, const MatrixD& features,
                          const std::vector<int>& targets, double l2, MatrixD* grad_weights, VectorD* grad_bias) {
  const Eigen::Index n = features.rows();
  MatrixD scores = features * weights.transpose();
  scores.rowwise() += bias.transpose();
  const VectorD top = scores.rowwise().maxCoeff();
  scores.colwise() -= top;
  const MatrixD expd = scores.array().exp().matrix();
  const VectorD sums = expd.rowwise().sum();

  double loss = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) loss += std::log(sums(i)) - scores(i, targets[static_cast<std::size_t>(i)]);
  loss = loss / static_cast<double>(n) + 0.5 * l2 * weights.squaredNorm();

  if (grad_weights || grad_bias) {
    MatrixD residual = sums.asDiagonal().inverse() * expd;
    for (Eigen::Index i = 0; i < n; ++i) residual(i, targets[static_cast<std::size_t>(i)]) -= 1.0;
    residual /= static_cast<double>(n);
    if (grad_weights) *grad_weights = residual.transpose() * features + l2 * weights;
    if (grad_bias) *grad_bias = residual.colwise().sum().transpose();
  }
  return loss;
}

LogisticFit fit_logistic(const MatrixD& features, const Labels& labels, const LogisticParams& params) {
  if (static_cast<std::size_t>(features.rows()) != labels.size()) throw ValidationError("features and labels differ in count");
  const std::set<int32_t> class_set(labels.begin(), labels.end());
  if (class_set.size() < 2) throw ValidationError("logistic regression needs at least 2 classes");

  LogisticFit fit;
  auto& m = fit.model;
  m.classes.assign(class_set.begin(), class_set.end());
  std::vector<int> targets(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    targets[i] = static_cast<int>(std::lower_bound(m.classes.begin(), m.classes.end(), labels[i]) - m.classes.begin());
  }
  const auto c = static_cast<Eigen::Index>(m.classes.size());
  MatrixD w = MatrixD::Zero(c, features.cols());
  VectorD b = VectorD::Zero(c);
  MatrixD gw;
  VectorD gb;
  double loss = logistic_objective(w, b, features, targets, params.l2, &gw, &gb);
  double step = 1.0;

  for (int it = 0; it < params.max_iter; ++it) {
    const double gnorm2 = gw.squaredNorm() + gb.squaredNorm();
    fit.gradient_norm = std::sqrt(gnorm2);
    if (fit.gradient_norm < params.tol) {
      fit.converged = true;
      break;
    }
    // Armijo backtracking; the trial step grows again after each accepted move.
    step = std::min(step * 2.0, 1e6);
    MatrixD w_try;
    VectorD b_try;
    double trial = 0.0;
    bool accepted = false;
    for (int halvings = 0; halvings < 60; ++halvings) {
      w_try = w - step * gw;
      b_try = b - step * gb;
      trial = logistic_objective(w_try, b_try, features, targets, params.l2, nullptr, nullptr);
      if (trial <= loss - 1e-4 * step * gnorm2) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;  // no descent possible at working precision
    w = std::move(w_try);
    b = std::move(b_try);
    loss = logistic_objective(w, b, features, targets, params.l2, &gw, &gb);
    fit.iterations = it + 1;
  }
  if (!fit.converged) {
    fit.gradient_norm = std::sqrt(gw.squaredNorm() + gb.squaredNorm());
    fit.converged = fit.gradient_norm < params.tol;
    if (!fit.converged) {
      spdlog::debug("logistic regression stopped after {} iterations, gradient norm {:.3g}", fit.iterations,
                    fit.gradient_norm);
    }
  }
  fit.loss = loss;
  m.weights = w.cast<float>().cast<double>();
  m.bias = b.cast<float>().cast<double>();
  return fit;
}

}  // namespace cme::learn
