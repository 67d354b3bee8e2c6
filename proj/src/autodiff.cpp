#include "ecoprod/autodiff.hpp"

#include <cmath>
#include <numbers>

namespace ecoprod::ad {

const Matrix& Var::value() const { return tape_->node(id_).value; }
const Matrix& Var::grad() const { return tape_->node(id_).grad; }

double Var::scalar() const {
  const auto& v = value();
  if (v.size() != 1) {
    throw AutodiffError("scalar() on a non-scalar tensor");
  }
  return v(0, 0);
}

Var Tape::constant(Matrix value) { return push(std::move(value), nullptr); }

Var Tape::parameter(const ParameterPtr& p) {
  Var v = push(p->value, nullptr);
  nodes_[v.id()].parameter = p;
  return v;
}

Var Tape::push(Matrix value, Backward backward) {
  nodes_.push_back(Node{std::move(value), Matrix(), nullptr, std::move(backward)});
  return Var(this, nodes_.size() - 1);
}

void Tape::backward(const Var& root) {
  if (root.tape() != this) {
    throw AutodiffError("backward on a variable from another tape");
  }
  if (root.value().size() != 1) {
    throw AutodiffError("backward needs a scalar root");
  }
  for (auto& n : nodes_) {
    n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
  }
  nodes_[root.id()].grad(0, 0) = 1.0;
  for (std::size_t id = root.id() + 1; id-- > 0;) {
    auto& n = nodes_[id];
    if (n.backward) {
      n.backward(*this, id);
    }
    if (n.parameter) {
      n.parameter->grad += n.grad;
    }
  }
}

namespace {

Tape& same_tape(const Var& a, const Var& b) {
  if (a.tape() == nullptr || a.tape() != b.tape()) {
    throw AutodiffError("operands live on different tapes");
  }
  return *a.tape();
}

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw AutodiffError(std::string(op) + ": shape mismatch (" + std::to_string(a.rows()) + "x" +
                        std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                        std::to_string(b.cols()) + ")");
  }
}

// Elementwise unary op with derivative expressed through input and output.
template <typename Forward, typename Derivative>
Var unary(const Var& a, Forward forward, Derivative derivative) {
  Tape& tape = *a.tape();
  const std::size_t ia = a.id();
  Matrix out = a.value().unaryExpr(forward);
  return tape.push(std::move(out), [ia, derivative](Tape& t, std::size_t self) {
    const auto& in = t.node(ia).value;
    const auto& outv = t.node(self).value;
    const auto& g = t.node(self).grad;
    Matrix local(in.rows(), in.cols());
    for (Eigen::Index k = 0; k < in.size(); ++k) {
      local(k) = derivative(in(k), outv(k));
    }
    t.node(ia).grad.array() += g.array() * local.array();
  });
}

double stable_softplus(double v) {
  return v > 0.0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v));
}

}  // namespace

Var matmul(const Var& a, const Var& b) {
  Tape& tape = same_tape(a, b);
  if (a.cols() != b.rows()) {
    throw AutodiffError("matmul: inner dimensions differ (" + std::to_string(a.cols()) + " vs " +
                        std::to_string(b.rows()) + ")");
  }
  const std::size_t ia = a.id();
  const std::size_t ib = b.id();
  Matrix out = a.value() * b.value();
  return tape.push(std::move(out), [ia, ib](Tape& t, std::size_t self) {
    const auto& g = t.node(self).grad;
    t.node(ia).grad.noalias() += g * t.node(ib).value.transpose();
    t.node(ib).grad.noalias() += t.node(ia).value.transpose() * g;
  });
}

Var add_bias(const Var& x, const Var& b) {
  Tape& tape = same_tape(x, b);
  if (b.rows() != 1 || b.cols() != x.cols()) {
    throw AutodiffError("add_bias: bias must be 1 x " + std::to_string(x.cols()));
  }
  const std::size_t ix = x.id();
  const std::size_t ib = b.id();
  Matrix out = x.value().rowwise() + b.value().row(0);
  return tape.push(std::move(out), [ix, ib](Tape& t, std::size_t self) {
    const auto& g = t.node(self).grad;
    t.node(ix).grad += g;
    t.node(ib).grad += g.colwise().sum();
  });
}

Var add(const Var& a, const Var& b) {
  Tape& tape = same_tape(a, b);
  require_same_shape(a, b, "add");
  const std::size_t ia = a.id();
  const std::size_t ib = b.id();
  return tape.push(a.value() + b.value(), [ia, ib](Tape& t, std::size_t self) {
    t.node(ia).grad += t.node(self).grad;
    t.node(ib).grad += t.node(self).grad;
  });
}

Var sub(const Var& a, const Var& b) {
  Tape& tape = same_tape(a, b);
  require_same_shape(a, b, "sub");
  const std::size_t ia = a.id();
  const std::size_t ib = b.id();
  return tape.push(a.value() - b.value(), [ia, ib](Tape& t, std::size_t self) {
    t.node(ia).grad += t.node(self).grad;
    t.node(ib).grad -= t.node(self).grad;
  });
}

Var mul(const Var& a, const Var& b) {
  Tape& tape = same_tape(a, b);
  require_same_shape(a, b, "mul");
  const std::size_t ia = a.id();
  const std::size_t ib = b.id();
  Matrix out = a.value().cwiseProduct(b.value());
  return tape.push(std::move(out), [ia, ib](Tape& t, std::size_t self) {
    const auto& g = t.node(self).grad;
    t.node(ia).grad += g.cwiseProduct(t.node(ib).value);
    t.node(ib).grad += g.cwiseProduct(t.node(ia).value);
  });
}

Var scale(const Var& a, double s) {
  Tape& tape = *a.tape();
  const std::size_t ia = a.id();
  return tape.push(a.value() * s, [ia, s](Tape& t, std::size_t self) {
    t.node(ia).grad += s * t.node(self).grad;
  });
}

Var relu(const Var& a) {
  return unary(
      a, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double in, double) { return in > 0.0 ? 1.0 : 0.0; });
}

Var tanh(const Var& a) {
  return unary(
      a, [](double v) { return std::tanh(v); }, [](double, double out) { return 1.0 - out * out; });
}

Var sigmoid(const Var& a) {
  return unary(
      a, [](double v) { return logistic(v); }, [](double, double out) { return out * (1.0 - out); });
}

Var softplus(const Var& a) {
  return unary(
      a, [](double v) { return stable_softplus(v); }, [](double in, double) { return logistic(in); });
}

Var exp(const Var& a) {
  return unary(
      a, [](double v) { return std::exp(v); }, [](double, double out) { return out; });
}

Var concat(const Var& a, const Var& b) {
  Tape& tape = same_tape(a, b);
  if (a.rows() != b.rows()) {
    throw AutodiffError("concat: row counts differ");
  }
  const std::size_t ia = a.id();
  const std::size_t ib = b.id();
  const auto ca = a.cols();
  const auto cb = b.cols();
  Matrix out(a.rows(), ca + cb);
  out << a.value(), b.value();
  return tape.push(std::move(out), [ia, ib, ca, cb](Tape& t, std::size_t self) {
    const auto& g = t.node(self).grad;
    t.node(ia).grad += g.leftCols(ca);
    t.node(ib).grad += g.rightCols(cb);
  });
}

Var slice(const Var& a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a.cols()) {
    throw AutodiffError("slice: column range out of bounds");
  }
  Tape& tape = *a.tape();
  const std::size_t ia = a.id();
  Matrix out = a.value().middleCols(start, count);
  return tape.push(std::move(out), [ia, start, count](Tape& t, std::size_t self) {
    t.node(ia).grad.middleCols(start, count) += t.node(self).grad;
  });
}

Var sum(const Var& a) {
  Tape& tape = *a.tape();
  const std::size_t ia = a.id();
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  return tape.push(std::move(out), [ia](Tape& t, std::size_t self) {
    t.node(ia).grad.array() += t.node(self).grad(0, 0);
  });
}

Var mean(const Var& a) {
  const auto n = static_cast<double>(a.value().size());
  if (n == 0.0) {
    throw AutodiffError("mean of an empty tensor");
  }
  return scale(sum(a), 1.0 / n);
}

Var gaussian_reparameterize(const Var& mu, const Var& logvar, const Matrix& noise) {
  require_same_shape(mu, logvar, "gaussian_reparameterize");
  if (noise.rows() != mu.rows() || noise.cols() != mu.cols()) {
    throw AutodiffError("gaussian_reparameterize: noise shape mismatch");
  }
  Tape& tape = same_tape(mu, logvar);
  const Var std_dev = exp(scale(logvar, 0.5));
  return add(mu, mul(std_dev, tape.constant(noise)));
}

Var kl_diag_gaussian(const Var& mu, const Var& logvar) {
  Tape& tape = same_tape(mu, logvar);
  require_same_shape(mu, logvar, "kl_diag_gaussian");
  const std::size_t im = mu.id();
  const std::size_t il = logvar.id();
  const auto& m = mu.value().array();
  const auto& lv = logvar.value().array();
  Matrix out(1, 1);
  out(0, 0) = -0.5 * (1.0 + lv - m.square() - lv.exp()).sum();
  return tape.push(std::move(out), [im, il](Tape& t, std::size_t self) {
    const double g = t.node(self).grad(0, 0);
    t.node(im).grad.array() += g * t.node(im).value.array();
    t.node(il).grad.array() += g * 0.5 * (t.node(il).value.array().exp() - 1.0);
  });
}

Var bernoulli_logpmf(const Var& prob, const Matrix& y) {
  if (y.rows() != prob.rows() || y.cols() != prob.cols()) {
    throw AutodiffError("bernoulli_logpmf: shape mismatch");
  }
  Tape& tape = *prob.tape();
  const std::size_t ip = prob.id();
  const auto p = prob.value().array().max(kProbClamp).min(1.0 - kProbClamp);
  Matrix out(1, 1);
  out(0, 0) = (y.array() * p.log() + (1.0 - y.array()) * (1.0 - p).log()).sum();
  return tape.push(std::move(out), [ip, y](Tape& t, std::size_t self) {
    const double g = t.node(self).grad(0, 0);
    const auto& raw = t.node(ip).value;
    auto& grad = t.node(ip).grad;
    for (Eigen::Index k = 0; k < raw.size(); ++k) {
      const double v = raw(k);
      if (v < kProbClamp || v > 1.0 - kProbClamp) {
        continue;  // clamped region: locally constant
      }
      grad(k) += g * (y(k) / v - (1.0 - y(k)) / (1.0 - v));
    }
  });
}

Var bernoulli_logpmf_logits(const Var& logits, const Matrix& y) {
  if (y.rows() != logits.rows() || y.cols() != logits.cols()) {
    throw AutodiffError("bernoulli_logpmf_logits: shape mismatch");
  }
  Tape& tape = *logits.tape();
  const std::size_t il = logits.id();
  const auto& l = logits.value();
  double total = 0.0;
  for (Eigen::Index k = 0; k < l.size(); ++k) {
    total += y(k) * l(k) - stable_softplus(l(k));
  }
  Matrix out(1, 1);
  out(0, 0) = total;
  return tape.push(std::move(out), [il, y](Tape& t, std::size_t self) {
    const double g = t.node(self).grad(0, 0);
    const auto& lv = t.node(il).value;
    auto& grad = t.node(il).grad;
    for (Eigen::Index k = 0; k < lv.size(); ++k) {
      grad(k) += g * (y(k) - logistic(lv(k)));
    }
  });
}

Var gaussian_logpdf(const Matrix& x, const Var& mu, const Var& logvar) {
  Tape& tape = same_tape(mu, logvar);
  require_same_shape(mu, logvar, "gaussian_logpdf");
  if (x.rows() != mu.rows() || x.cols() != mu.cols()) {
    throw AutodiffError("gaussian_logpdf: shape mismatch");
  }
  const std::size_t im = mu.id();
  const std::size_t il = logvar.id();
  const auto diff = (x - mu.value()).array();
  const auto lv = logvar.value().array();
  const double log2pi = std::log(2.0 * std::numbers::pi);
  Matrix out(1, 1);
  out(0, 0) = (-0.5 * (log2pi + lv + diff.square() * (-lv).exp())).sum();
  return tape.push(std::move(out), [im, il, x](Tape& t, std::size_t self) {
    const double g = t.node(self).grad(0, 0);
    const auto d = (x - t.node(im).value).array();
    const auto inv_var = (-t.node(il).value.array()).exp();
    t.node(im).grad.array() += g * d * inv_var;
    t.node(il).grad.array() += g * 0.5 * (d.square() * inv_var - 1.0);
  });
}

Mlp::Mlp(std::vector<int> widths, Activation activation, Rng& rng)
    : widths_(std::move(widths)), activation_(activation) {
  if (widths_.size() < 2) {
    throw AutodiffError("an MLP needs at least an input and an output width");
  }
  for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
    const int in = widths_[l];
    const int out = widths_[l + 1];
    if (in < 1 || out < 1) {
      throw AutodiffError("MLP layer widths must be positive");
    }
    const double limit = activation_ == Activation::Relu ? std::sqrt(6.0 / in)
                                                         : std::sqrt(6.0 / (in + out));
    std::uniform_real_distribution<double> init(-limit, limit);
    Matrix w(in, out);
    for (Eigen::Index k = 0; k < w.size(); ++k) {
      w(k) = init(rng);
    }
    weights_.push_back(std::make_shared<Parameter>(std::move(w)));
    biases_.push_back(std::make_shared<Parameter>(Matrix::Zero(1, out)));
  }
}

Var Mlp::forward(Tape& tape, const Var& x) const {
  if (x.cols() != widths_.front()) {
    throw AutodiffError("MLP input has " + std::to_string(x.cols()) + " columns, expected " +
                        std::to_string(widths_.front()));
  }
  Var h = x;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    h = add_bias(matmul(h, tape.parameter(weights_[l])), tape.parameter(biases_[l]));
    if (l + 1 < weights_.size()) {
      h = activation_ == Activation::Relu ? relu(h) : tanh(h);
    }
  }
  return h;
}

std::vector<ParameterPtr> Mlp::parameters() const {
  std::vector<ParameterPtr> out;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    out.push_back(weights_[l]);
    out.push_back(biases_[l]);
  }
  return out;
}

std::size_t Mlp::parameter_count() const {
  std::size_t total = 0;
  for (const auto& p : parameters()) {
    total += static_cast<std::size_t>(p->value.size());
  }
  return total;
}

void adam_step(const std::vector<ParameterPtr>& params, AdamState& state) {
  if (state.first_moment.empty()) {
    for (const auto& p : params) {
      state.first_moment.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
      state.second_moment.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
    }
  }
  if (state.first_moment.size() != params.size()) {
    throw AutodiffError("Adam state was created for a different parameter list");
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = *params[k];
    auto& m = state.first_moment[k];
    auto& v = state.second_moment[k];
    m = state.beta1 * m + (1.0 - state.beta1) * p.grad;
    v = state.beta2 * v + (1.0 - state.beta2) * p.grad.cwiseProduct(p.grad);
    p.value.array() -= state.learning_rate * (m.array() / c1) /
                       ((v.array() / c2).sqrt() + state.epsilon);
    p.grad.setZero();
  }
}

}  // namespace ecoprod::ad
