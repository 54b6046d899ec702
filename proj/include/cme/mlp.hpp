#pragma once

#include <vector>

#include "cme/common.hpp"

namespace cme::ref {

/// Fully connected ReLU network. The output layer is partitioned into softmax
/// heads (one head for a plain classifier, one per concept for a bottleneck).
/// Samples are columns throughout: inputs are [input_dim x batch].
struct Mlp {
  std::vector<MatrixD> weights;  // weights[l] is [out_l x in_l]
  std::vector<VectorD> biases;
  std::vector<int> head_sizes;

  static Mlp init(const std::vector<int>& dims, std::vector<int> head_sizes, uint64_t seed);

  int input_dim() const { return static_cast<int>(weights.front().cols()); }
  int output_dim() const { return static_cast<int>(weights.back().rows()); }
  std::size_t layer_count() const { return weights.size(); }
  std::size_t parameter_count() const;
  std::vector<int> dims() const;
  bool all_finite() const;

  /// Rounds every parameter to the nearest f32 so checkpoints round-trip exactly.
  void quantize_to_f32();
};

/// activations[0] is the input; activations[l] for 0 < l < L is the post-ReLU
/// hidden layer; activations[L] holds the output logits.
struct ForwardPass {
  std::vector<MatrixD> activations;
  const MatrixD& logits() const { return activations.back(); }
};

ForwardPass forward(const Mlp& net, const MatrixD& inputs);

/// Per-head softmax of a logits matrix.
MatrixD softmax_heads(const std::vector<int>& head_sizes, const MatrixD& logits);

/// Per-head argmax (ties toward the lowest code); [batch x heads].
IntMatrix predict_heads(const Mlp& net, const MatrixD& inputs);

struct Gradients {
  std::vector<MatrixD> weights;
  std::vector<VectorD> biases;
};

/// Mean over the batch of the summed per-head cross-entropy; targets is [batch x heads].
/// Fills grad when non-null.
double loss_and_gradient(const Mlp& net, const MatrixD& inputs, const IntMatrix& targets, Gradients* grad);

VectorD flatten_parameters(const Mlp& net);
void assign_parameters(Mlp& net, const VectorD& flat);
VectorD flatten_gradients(const Gradients& grad);

struct SgdParams {
  double learning_rate = 0.01;
  double momentum = 0.9;
  int epochs = 50;
  int batch_size = 128;
};

class TrainingDiverged : public Error {
 public:
  using Error::Error;
};

/// Mini-batch SGD with momentum; returns the mean training loss of each epoch.
/// Throws TrainingDiverged if the loss becomes non-finite.
std::vector<double> train_network(Mlp& net, const MatrixD& inputs, const IntMatrix& targets,
                                  const SgdParams& params, uint64_t seed);

}  // namespace cme::ref
