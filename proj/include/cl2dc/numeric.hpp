#pragma once

// Dense feed-forward networks with exact reverse-mode gradients, plus the
// small set of training primitives (softmax, cross-entropy, momentum SGD,
// cosine learning-rate schedule) shared by every learned component.

#include <cstddef>
#include <random>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace cl2dc {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Rng = std::mt19937_64;

/// Floor applied to probabilities before taking a logarithm.
inline constexpr double kProbabilityFloor = 1e-12;

enum class Activation { kRelu, kIdentity };

struct DenseLayer {
  Matrix weight;  // out x in
  Vector bias;    // out
  Activation activation = Activation::kIdentity;
};

/// Gradient (or velocity) buffers shaped like a DenseNetwork.
struct NetworkGradient {
  std::vector<Matrix> weight;
  std::vector<Vector> bias;

  void set_zero();
  double max_abs() const;
  bool all_finite() const;
};

/// Intermediate values of a batched forward pass, consumed by backward().
struct ForwardTape {
  std::vector<Matrix> inputs;          // input to layer k, one column per sample
  std::vector<Matrix> pre_activation;  // W x + b of layer k
};

class DenseNetwork {
 public:
  DenseNetwork() = default;
  explicit DenseNetwork(std::vector<DenseLayer> layers);

  /// ReLU hidden layers, identity output layer, Glorot-uniform weights and
  /// zero biases.
  static DenseNetwork mlp(std::size_t input_dim, std::span<const std::size_t> hidden,
                          std::size_t output_dim, Rng& rng);
  /// Same topology as mlp() with every parameter set to zero.
  static DenseNetwork zeros(std::size_t input_dim, std::span<const std::size_t> hidden,
                            std::size_t output_dim);

  std::size_t input_dim() const;
  std::size_t output_dim() const;
  std::size_t parameter_count() const;
  bool empty() const { return layers_.empty(); }

  const std::vector<DenseLayer>& layers() const { return layers_; }
  std::vector<DenseLayer>& mutable_layers() { return layers_; }

  /// Logits for a single input. Throws ShapeError / DomainError.
  Vector forward(const Vector& x) const;

  /// Logits for a batch stored column-wise. When `tape` is non-null the
  /// intermediate values needed by backward() are recorded.
  Matrix forward_batch(const Matrix& inputs, ForwardTape* tape = nullptr) const;

  /// Back-propagates d(objective)/d(logits) through the recorded pass,
  /// accumulating parameter gradients into `grad`. Returns the gradient with
  /// respect to the network inputs.
  Matrix backward(const ForwardTape& tape, const Matrix& grad_logits, NetworkGradient& grad) const;

  NetworkGradient zero_gradient() const;

  bool operator==(const DenseNetwork& other) const;

 private:
  void validate() const;

  std::vector<DenseLayer> layers_;
};

/// Numerically stable softmax. Entries equal to -infinity receive zero mass.
Vector softmax(const Vector& logits);
/// Column-wise softmax.
Matrix softmax_columns(const Matrix& logits);

/// -log(max(p[label], floor)).
double cross_entropy(std::size_t label, const Vector& predicted);
/// -sum_c t_c log(max(p_c, floor)).
double cross_entropy(const Vector& target, const Vector& predicted);

/// Gradient of mean softmax cross-entropy of `net` over a labelled batch.
/// Returns the mean loss; `grad` is overwritten.
double softmax_cross_entropy_gradient(const DenseNetwork& net, const Matrix& inputs,
                                      std::span<const int> labels, NetworkGradient& grad);

struct OptimizerState {
  double lr0 = 0.01;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::vector<NetworkGradient> velocity;  // one entry per optimised network
  int epoch = 0;
  int total_epochs = 1;

  /// Zero velocity buffers congruent with `nets`.
  static OptimizerState create(double lr0, double momentum, double weight_decay,
                               int total_epochs, std::span<const DenseNetwork* const> nets);
};

/// v <- momentum * v + grad + weight_decay * param;  param <- param - lr * v.
/// Throws TrainingError when `grad` contains a non-finite entry.
void sgd_step(DenseNetwork& net, const NetworkGradient& grad, NetworkGradient& velocity,
              double lr, double momentum, double weight_decay);

/// lr0 * 0.5 * (1 + cos(pi * k / K)).
double cosine_lr(int k, int total_epochs, double lr0);

/// Index of the largest entry; the lowest index wins ties.
std::size_t argmax(const Vector& values);

}  // namespace cl2dc
