#include "cme/mlp.hpp"

#include <cmath>
#include <numeric>
#include <random>

#include <fmt/format.h>

namespace cme::ref {

Mlp Mlp::init(const std::vector<int>& dims, std::vector<int> head_sizes, uint64_t seed) {
  if (dims.size() < 2) throw ValidationError("network needs at least input and output dims");
  for (int d : dims) {
    if (d < 1) throw ValidationError("layer widths must be positive");
  }
  if (head_sizes.empty()) head_sizes = {dims.back()};
  if (std::accumulate(head_sizes.begin(), head_sizes.end(), 0) != dims.back()) {
    throw ValidationError("softmax heads must partition the output layer");
  }
  Mlp net;
  net.head_sizes = std::move(head_sizes);
  std::mt19937_64 rng(seed);
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    const int fan_in = dims[l], fan_out = dims[l + 1];
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    MatrixD w(fan_out, fan_in);
    for (Eigen::Index j = 0; j < w.cols(); ++j) {
      for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = dist(rng);
    }
    net.weights.push_back(std::move(w));
    net.biases.push_back(VectorD::Zero(fan_out));
  }
  return net;
}

std::size_t Mlp::parameter_count() const {
  std::size_t n = 0;
  for (std::size_t l = 0; l < weights.size(); ++l) n += static_cast<std::size_t>(weights[l].size() + biases[l].size());
  return n;
}

std::vector<int> Mlp::dims() const {
  std::vector<int> d{input_dim()};
  for (const auto& w : weights) d.push_back(static_cast<int>(w.rows()));
  return d;
}

bool Mlp::all_finite() const {
  for (std::size_t l = 0; l < weights.size(); ++l) {
    if (!weights[l].allFinite() || !biases[l].allFinite()) return false;
  }
  return true;
}

void Mlp::quantize_to_f32() {
  for (std::size_t l = 0; l < weights.size(); ++l) {
    weights[l] = weights[l].cast<float>().cast<double>();
    biases[l] = biases[l].cast<float>().cast<double>();
  }
}

ForwardPass forward(const Mlp& net, const MatrixD& inputs) {
  if (inputs.rows() != net.input_dim()) {
    throw ValidationError(fmt::format("network expects {} inputs, got {}", net.input_dim(), inputs.rows()));
  }
  ForwardPass pass;
  pass.activations.reserve(net.layer_count() + 1);
  pass.activations.push_back(inputs);
  for (std::size_t l = 0; l < net.layer_count(); ++l) {
    MatrixD z = net.weights[l] * pass.activations.back();
    z.colwise() += net.biases[l];
    if (l + 1 < net.layer_count()) z = z.cwiseMax(0.0);
    pass.activations.push_back(std::move(z));
  }
  return pass;
}

MatrixD softmax_heads(const std::vector<int>& head_sizes, const MatrixD& logits) {
  MatrixD probs(logits.rows(), logits.cols());
  Eigen::Index offset = 0;
  for (int h : head_sizes) {
    auto block = logits.middleRows(offset, h);
    const Eigen::RowVectorXd top = block.colwise().maxCoeff();
    MatrixD e = (block.rowwise() - top).array().exp().matrix();
    const Eigen::RowVectorXd sums = e.colwise().sum();
    probs.middleRows(offset, h) = e.array().rowwise() / sums.array();
    offset += h;
  }
  return probs;
}

IntMatrix predict_heads(const Mlp& net, const MatrixD& inputs) {
  const MatrixD logits = forward(net, inputs).logits();
  IntMatrix out(logits.cols(), static_cast<Eigen::Index>(net.head_sizes.size()));
  for (Eigen::Index s = 0; s < logits.cols(); ++s) {
    Eigen::Index offset = 0;
    for (std::size_t h = 0; h < net.head_sizes.size(); ++h) {
      const int width = net.head_sizes[h];
      out(s, static_cast<Eigen::Index>(h)) =
          static_cast<int32_t>(argmax_lowest(logits.col(s).segment(offset, width)));
      offset += width;
    }
  }
  return out;
}

double loss_and_gradient(const Mlp& net, const MatrixD& inputs, const IntMatrix& targets, Gradients* grad) {
  const Eigen::Index batch = inputs.cols();
  if (targets.rows() != batch || targets.cols() != static_cast<Eigen::Index>(net.head_sizes.size())) {
    throw ValidationError("targets must be [batch x heads]");
  }
  const ForwardPass pass = forward(net, inputs);
  MatrixD delta = softmax_heads(net.head_sizes, pass.logits());

  double loss = 0.0;
  Eigen::Index offset = 0;
  for (std::size_t h = 0; h < net.head_sizes.size(); ++h) {
    const int width = net.head_sizes[h];
    for (Eigen::Index s = 0; s < batch; ++s) {
      const int32_t t = targets(s, static_cast<Eigen::Index>(h));
      if (t < 0 || t >= width) throw ValidationError(fmt::format("target {} outside head of width {}", t, width));
      loss -= std::log(std::max(delta(offset + t, s), 1e-300));
      delta(offset + t, s) -= 1.0;
    }
    offset += width;
  }
  loss /= static_cast<double>(batch);
  if (!grad) return loss;

  delta /= static_cast<double>(batch);
  const std::size_t L = net.layer_count();
  grad->weights.resize(L);
  grad->biases.resize(L);
  for (std::size_t l = L; l-- > 0;) {
    grad->weights[l] = delta * pass.activations[l].transpose();
    grad->biases[l] = delta.rowwise().sum();
    if (l == 0) break;
    MatrixD back = net.weights[l].transpose() * delta;
    // ReLU derivative, taken as 0 at the kink.
    back.array() *= (pass.activations[l].array() > 0.0).cast<double>();
    delta = std::move(back);
  }
  return loss;
}

VectorD flatten_parameters(const Mlp& net) {
  VectorD flat(static_cast<Eigen::Index>(net.parameter_count()));
  Eigen::Index o = 0;
  for (std::size_t l = 0; l < net.layer_count(); ++l) {
    flat.segment(o, net.weights[l].size()) = net.weights[l].reshaped();
    o += net.weights[l].size();
    flat.segment(o, net.biases[l].size()) = net.biases[l];
    o += net.biases[l].size();
  }
  return flat;
}

void assign_parameters(Mlp& net, const VectorD& flat) {
  if (flat.size() != static_cast<Eigen::Index>(net.parameter_count())) throw ValidationError("parameter vector size mismatch");
  Eigen::Index o = 0;
  for (std::size_t l = 0; l < net.layer_count(); ++l) {
    net.weights[l].reshaped() = flat.segment(o, net.weights[l].size());
    o += net.weights[l].size();
    net.biases[l] = flat.segment(o, net.biases[l].size());
    o += net.biases[l].size();
  }
}

VectorD flatten_gradients(const Gradients& grad) {
  Eigen::Index n = 0;
  for (std::size_t l = 0; l < grad.weights.size(); ++l) n += grad.weights[l].size() + grad.biases[l].size();
  VectorD flat(n);
  Eigen::Index o = 0;
  for (std::size_t l = 0; l < grad.weights.size(); ++l) {
    flat.segment(o, grad.weights[l].size()) = grad.weights[l].reshaped();
    o += grad.weights[l].size();
    flat.segment(o, grad.biases[l].size()) = grad.biases[l];
    o += grad.biases[l].size();
  }
  return flat;
}

std::vector<double> train_network(Mlp& net, const MatrixD& inputs, const IntMatrix& targets,
                                  const SgdParams& params, uint64_t seed) {
  const auto n = static_cast<std::size_t>(inputs.cols());
  if (n == 0) throw ValidationError("no training samples");
  if (params.batch_size < 1 || params.epochs < 0) throw ValidationError("invalid SGD parameters");

  Gradients velocity;
  for (std::size_t l = 0; l < net.layer_count(); ++l) {
    velocity.weights.push_back(MatrixD::Zero(net.weights[l].rows(), net.weights[l].cols()));
    velocity.biases.push_back(VectorD::Zero(net.biases[l].size()));
  }
  std::vector<Eigen::Index> order(n);
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::mt19937_64 rng(seed);
  std::vector<double> epoch_loss;
  Gradients grad;

  for (int epoch = 0; epoch < params.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(params.batch_size)) {
      const std::size_t stop = std::min(n, start + static_cast<std::size_t>(params.batch_size));
      const std::vector<Eigen::Index> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                          order.begin() + static_cast<std::ptrdiff_t>(stop));
      const MatrixD xb = inputs(Eigen::all, idx);
      const IntMatrix tb = targets(idx, Eigen::all);
      const double loss = loss_and_gradient(net, xb, tb, &grad);
      if (!std::isfinite(loss)) {
        throw TrainingDiverged(fmt::format("training loss became non-finite at epoch {}", epoch));
      }
      total += loss * static_cast<double>(stop - start);
      for (std::size_t l = 0; l < net.layer_count(); ++l) {
        velocity.weights[l] = params.momentum * velocity.weights[l] - params.learning_rate * grad.weights[l];
        velocity.biases[l] = params.momentum * velocity.biases[l] - params.learning_rate * grad.biases[l];
        net.weights[l] += velocity.weights[l];
        net.biases[l] += velocity.biases[l];
      }
    }
    epoch_loss.push_back(total / static_cast<double>(n));
  }
  if (!net.all_finite()) throw TrainingDiverged("weights became non-finite");
  return epoch_loss;
}

}  // namespace cme::ref
