#include "cl2dc/numeric.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "cl2dc/error.hpp"

namespace cl2dc {

namespace {

Matrix apply_activation(const Matrix& z, Activation act) {
  if (act == Activation::kRelu) return z.cwiseMax(0.0);
  return z;
}

DenseNetwork build(std::size_t input_dim, std::span<const std::size_t> hidden,
                   std::size_t output_dim, Rng* rng) {
  if (input_dim == 0 || output_dim == 0) throw ShapeError("network dimensions must be positive");
  std::vector<std::size_t> dims;
  dims.push_back(input_dim);
  for (auto h : hidden) {
    if (h == 0) throw ShapeError("hidden width must be positive");
    dims.push_back(h);
  }
  dims.push_back(output_dim);

  std::vector<DenseLayer> layers;
  for (std::size_t k = 0; k + 1 < dims.size(); ++k) {
    const auto in = static_cast<Eigen::Index>(dims[k]);
    const auto out = static_cast<Eigen::Index>(dims[k + 1]);
    DenseLayer layer;
    layer.weight = Matrix::Zero(out, in);
    layer.bias = Vector::Zero(out);
    layer.activation = (k + 2 < dims.size()) ? Activation::kRelu : Activation::kIdentity;
    if (rng) {
      const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
      std::uniform_real_distribution<double> dist(-limit, limit);
      for (Eigen::Index r = 0; r < out; ++r)
        for (Eigen::Index c = 0; c < in; ++c) layer.weight(r, c) = dist(*rng);
    }
    layers.push_back(std::move(layer));
  }
  return DenseNetwork(std::move(layers));
}

}  // namespace

void NetworkGradient::set_zero() {
  for (auto& w : weight) w.setZero();
  for (auto& b : bias) b.setZero();
}

double NetworkGradient::max_abs() const {
  double m = 0.0;
  for (const auto& w : weight)
    if (w.size()) m = std::max(m, w.cwiseAbs().maxCoeff());
  for (const auto& b : bias)
    if (b.size()) m = std::max(m, b.cwiseAbs().maxCoeff());
  return m;
}

bool NetworkGradient::all_finite() const {
  for (const auto& w : weight)
    if (!w.allFinite()) return false;
  for (const auto& b : bias)
    if (!b.allFinite()) return false;
  return true;
}

DenseNetwork::DenseNetwork(std::vector<DenseLayer> layers) : layers_(std::move(layers)) {
  validate();
}

void DenseNetwork::validate() const {
  if (layers_.empty()) throw ShapeError("network has no layers");
  for (std::size_t k = 0; k < layers_.size(); ++k) {
    const auto& l = layers_[k];
    if (l.weight.rows() == 0 || l.weight.cols() == 0)
      throw ShapeError("layer " + std::to_string(k) + " has an empty weight matrix");
    if (l.bias.size() != l.weight.rows())
      throw ShapeError("layer " + std::to_string(k) + " bias length does not match its output");
    if (k > 0 && l.weight.cols() != layers_[k - 1].weight.rows())
      throw ShapeError("layer " + std::to_string(k) + " input does not chain with layer " +
                       std::to_string(k - 1));
    if (!l.weight.allFinite() || !l.bias.allFinite())
      throw DomainError("layer " + std::to_string(k) + " has non-finite parameters");
  }
}

DenseNetwork DenseNetwork::mlp(std::size_t input_dim, std::span<const std::size_t> hidden,
                               std::size_t output_dim, Rng& rng) {
  return build(input_dim, hidden, output_dim, &rng);
}

DenseNetwork DenseNetwork::zeros(std::size_t input_dim, std::span<const std::size_t> hidden,
                                 std::size_t output_dim) {
  return build(input_dim, hidden, output_dim, nullptr);
}

std::size_t DenseNetwork::input_dim() const {
  return layers_.empty() ? 0 : static_cast<std::size_t>(layers_.front().weight.cols());
}

std::size_t DenseNetwork::output_dim() const {
  return layers_.empty() ? 0 : static_cast<std::size_t>(layers_.back().weight.rows());
}

std::size_t DenseNetwork::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers_) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
  return n;
}

Vector DenseNetwork::forward(const Vector& x) const {
  if (static_cast<std::size_t>(x.size()) != input_dim())
    throw ShapeError("input length " + std::to_string(x.size()) + " != network input dim " +
                     std::to_string(input_dim()));
  if (!x.allFinite()) throw DomainError("non-finite network input");
  Vector h = x;
  for (const auto& l : layers_) h = apply_activation(l.weight * h + l.bias, l.activation);
  return h;
}

Matrix DenseNetwork::forward_batch(const Matrix& inputs, ForwardTape* tape) const {
  if (static_cast<std::size_t>(inputs.rows()) != input_dim())
    throw ShapeError("batch row count " + std::to_string(inputs.rows()) +
                     " != network input dim " + std::to_string(input_dim()));
  if (!inputs.allFinite()) throw DomainError("non-finite network input");
  if (tape) {
    tape->inputs.clear();
    tape->pre_activation.clear();
  }
  Matrix h = inputs;
  for (const auto& l : layers_) {
    Matrix z = l.weight * h;
    z.colwise() += l.bias;
    if (tape) {
      tape->inputs.push_back(h);
      tape->pre_activation.push_back(z);
    }
    h = apply_activation(z, l.activation);
  }
  return h;
}

Matrix DenseNetwork::backward(const ForwardTape& tape, const Matrix& grad_logits,
                              NetworkGradient& grad) const {
  if (tape.inputs.size() != layers_.size()) throw ShapeError("forward tape does not match network");
  if (grad.weight.size() != layers_.size()) grad = zero_gradient();
  Matrix delta = grad_logits;
  for (std::size_t k = layers_.size(); k-- > 0;) {
    const auto& l = layers_[k];
    if (l.activation == Activation::kRelu) {
      // Subgradient 0 at the kink.
      delta = delta.cwiseProduct((tape.pre_activation[k].array() > 0.0).cast<double>().matrix());
    }
    grad.weight[k].noalias() += delta * tape.inputs[k].transpose();
    grad.bias[k] += delta.rowwise().sum();
    delta = l.weight.transpose() * delta;
  }
  return delta;
}

NetworkGradient DenseNetwork::zero_gradient() const {
  NetworkGradient g;
  for (const auto& l : layers_) {
    g.weight.push_back(Matrix::Zero(l.weight.rows(), l.weight.cols()));
    g.bias.push_back(Vector::Zero(l.bias.size()));
  }
  return g;
}

bool DenseNetwork::operator==(const DenseNetwork& other) const {
  if (layers_.size() != other.layers_.size()) return false;
  for (std::size_t k = 0; k < layers_.size(); ++k) {
    const auto& a = layers_[k];
    const auto& b = other.layers_[k];
    if (a.activation != b.activation || a.weight.rows() != b.weight.rows() ||
        a.weight.cols() != b.weight.cols() || a.weight != b.weight || a.bias != b.bias)
      return false;
  }
  return true;
}

Vector softmax(const Vector& logits) {
  if (logits.size() == 0) throw ShapeError("softmax of an empty vector");
  if (logits.hasNaN()) throw DomainError("softmax of a NaN logit");
  const double max = logits.maxCoeff();
  if (!std::isfinite(max)) throw DomainError("softmax needs at least one finite logit");
  Vector e = (logits.array() - max).exp();
  // Eigen's vectorised exp leaves a denormal for -inf.
  for (Eigen::Index i = 0; i < e.size(); ++i)
    if (logits(i) == -std::numeric_limits<double>::infinity()) e(i) = 0.0;
  return e / e.sum();
}

Matrix softmax_columns(const Matrix& logits) {
  if (logits.rows() == 0) throw ShapeError("softmax of an empty vector");
  Matrix out(logits.rows(), logits.cols());
  for (Eigen::Index c = 0; c < logits.cols(); ++c) out.col(c) = softmax(logits.col(c));
  return out;
}

double cross_entropy(std::size_t label, const Vector& predicted) {
  if (label >= static_cast<std::size_t>(predicted.size()))
    throw DomainError("class index " + std::to_string(label) + " out of range for " +
                      std::to_string(predicted.size()) + " classes");
  return -std::log(std::max(predicted(static_cast<Eigen::Index>(label)), kProbabilityFloor));
}

double cross_entropy(const Vector& target, const Vector& predicted) {
  if (target.size() != predicted.size()) throw ShapeError("cross-entropy length mismatch");
  double loss = 0.0;
  for (Eigen::Index c = 0; c < target.size(); ++c)
    if (target(c) != 0.0) loss -= target(c) * std::log(std::max(predicted(c), kProbabilityFloor));
  return loss;
}

double softmax_cross_entropy_gradient(const DenseNetwork& net, const Matrix& inputs,
                                      std::span<const int> labels, NetworkGradient& grad) {
  if (static_cast<std::size_t>(inputs.cols()) != labels.size())
    throw ShapeError("label count does not match batch size");
  ForwardTape tape;
  Matrix probs = softmax_columns(net.forward_batch(inputs, &tape));
  const double inv_n = 1.0 / static_cast<double>(labels.size());
  double loss = 0.0;
  Matrix dlogits = probs;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto col = static_cast<Eigen::Index>(i);
    const auto y = static_cast<std::size_t>(labels[i]);
    loss += cross_entropy(y, probs.col(col));
    if (probs(labels[i], col) > kProbabilityFloor) {
      dlogits(labels[i], col) -= 1.0;
    } else {
      dlogits.col(col).setZero();
    }
  }
  dlogits *= inv_n;
  grad = net.zero_gradient();
  net.backward(tape, dlogits, grad);
  return loss * inv_n;
}

OptimizerState OptimizerState::create(double lr0, double momentum, double weight_decay,
                                      int total_epochs, std::span<const DenseNetwork* const> nets) {
  if (!(lr0 > 0.0)) throw ConfigError("learning rate must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
  if (weight_decay < 0.0) throw ConfigError("weight decay must be non-negative");
  OptimizerState s;
  s.lr0 = lr0;
  s.momentum = momentum;
  s.weight_decay = weight_decay;
  s.total_epochs = total_epochs;
  for (const auto* n : nets) s.velocity.push_back(n->zero_gradient());
  return s;
}

void sgd_step(DenseNetwork& net, const NetworkGradient& grad, NetworkGradient& velocity, double lr,
              double momentum, double weight_decay) {
  auto& layers = net.mutable_layers();
  if (grad.weight.size() != layers.size() || velocity.weight.size() != layers.size())
    throw ShapeError("gradient buffers are not congruent with the network");
  if (!grad.all_finite()) throw TrainingError("non-finite gradient in sgd_step");
  for (std::size_t k = 0; k < layers.size(); ++k) {
    velocity.weight[k] = momentum * velocity.weight[k] + grad.weight[k] + weight_decay * layers[k].weight;
    velocity.bias[k] = momentum * velocity.bias[k] + grad.bias[k] + weight_decay * layers[k].bias;
    layers[k].weight -= lr * velocity.weight[k];
    layers[k].bias -= lr * velocity.bias[k];
  }
}

double cosine_lr(int k, int total_epochs, double lr0) {
  if (total_epochs <= 0) throw DomainError("cosine schedule needs a positive epoch count");
  if (k < 0 || k > total_epochs) throw DomainError("epoch outside [0, K]");
  return lr0 * 0.5 *
         (1.0 + std::cos(std::numbers::pi * static_cast<double>(k) / static_cast<double>(total_epochs)));
}

std::size_t argmax(const Vector& values) {
  if (values.size() == 0) throw ShapeError("argmax of an empty vector");
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < values.size(); ++i)
    if (values(i) > values(best)) best = i;
  return static_cast<std::size_t>(best);
}

}  // namespace cl2dc
