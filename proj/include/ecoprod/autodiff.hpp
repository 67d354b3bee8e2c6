#pragma once

#include "ecoprod/common.hpp"

#include <functional>
#include <memory>
#include <vector>

namespace ecoprod::ad {

class AutodiffError : public Error {
 public:
  using Error::Error;
};

/// Trainable tensor that outlives individual tapes. `grad` accumulates across
/// backward passes until an optimizer step clears it.
struct Parameter {
  explicit Parameter(Matrix v) : value(std::move(v)), grad(Matrix::Zero(value.rows(), value.cols())) {}
  Matrix value;
  Matrix grad;
};

using ParameterPtr = std::shared_ptr<Parameter>;

class Tape;

/// Handle to a node on a tape. Cheap to copy; valid while its tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Matrix& value() const;
  const Matrix& grad() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  double scalar() const;

  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Reverse-mode tape over dense 2-D tensors. Operations append nodes in
/// execution order; backward() walks them in exact reverse order once.
class Tape {
 public:
  using Backward = std::function<void(Tape&, std::size_t)>;

  struct Node {
    Matrix value;
    Matrix grad;
    ParameterPtr parameter;
    Backward backward;
  };

  Var constant(Matrix value);
  Var parameter(const ParameterPtr& p);
  Var push(Matrix value, Backward backward);

  /// Seeds d(root)/d(root) = 1 for a 1x1 root, zeroes every node gradient
  /// first, and adds parameter gradients into Parameter::grad.
  void backward(const Var& root);

  Node& node(std::size_t id) { return nodes_[id]; }
  const Node& node(std::size_t id) const { return nodes_[id]; }
  std::size_t size() const { return nodes_.size(); }

 private:
  std::vector<Node> nodes_;
};

// --- operations --------------------------------------------------------------

Var matmul(const Var& a, const Var& b);
/// x (n x c) plus a broadcast row vector b (1 x c).
Var add_bias(const Var& x, const Var& b);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var relu(const Var& a);
Var tanh(const Var& a);
Var sigmoid(const Var& a);
Var softplus(const Var& a);
Var exp(const Var& a);
/// Column-wise concatenation [a | b].
Var concat(const Var& a, const Var& b);
/// Columns [start, start + count).
Var slice(const Var& a, Eigen::Index start, Eigen::Index count);
Var sum(const Var& a);
Var mean(const Var& a);

/// mu + exp(logvar / 2) * noise.
Var gaussian_reparameterize(const Var& mu, const Var& logvar, const Matrix& noise);
/// KL(N(mu, exp(logvar)) || N(0, I)) summed over all entries.
Var kl_diag_gaussian(const Var& mu, const Var& logvar);
/// sum y log p + (1 - y) log(1 - p), p clamped to [1e-7, 1 - 1e-7].
Var bernoulli_logpmf(const Var& prob, const Matrix& y);
/// Same likelihood parameterised by logits: sum y l - softplus(l).
Var bernoulli_logpmf_logits(const Var& logits, const Matrix& y);
/// sum of -1/2 (log 2 pi + logvar + (x - mu)^2 / exp(logvar)).
Var gaussian_logpdf(const Matrix& x, const Var& mu, const Var& logvar);

inline constexpr double kProbClamp = 1e-7;

// --- networks ----------------------------------------------------------------

enum class Activation { Relu, Tanh };

/// Fully connected network: widths = {in, hidden..., out}; the activation is
/// applied after every hidden layer, the output layer is linear.
class Mlp {
 public:
  Mlp(std::vector<int> widths, Activation activation, Rng& rng);

  Var forward(Tape& tape, const Var& x) const;
  std::vector<ParameterPtr> parameters() const;
  std::size_t parameter_count() const;
  const std::vector<int>& widths() const { return widths_; }

 private:
  std::vector<int> widths_;
  Activation activation_;
  std::vector<ParameterPtr> weights_;
  std::vector<ParameterPtr> biases_;
};

struct AdamState {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  long step = 0;
  std::vector<Matrix> first_moment;
  std::vector<Matrix> second_moment;
};

/// Bias-corrected Adam update of every parameter, then zeroes the gradients.
void adam_step(const std::vector<ParameterPtr>& params, AdamState& state);

}  // namespace ecoprod::ad
