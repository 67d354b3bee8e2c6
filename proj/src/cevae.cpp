#include "ecoprod/causal.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace ecoprod::causal {

// Decoder variances are floored at 0.01 (standardised units) so constant
// covariates cannot drive the likelihood to infinity.
namespace {
constexpr double kLogVarianceFloor = -4.605170185988091;  // log(0.01)
}

struct CevaeNetworks {
  CevaeNetworks(int p, const CevaeConfig& c, Rng& rng)
      : encoder(widths(p + 2, 2 * c.latent_dim, c), ad::Activation::Relu, rng),
        decoder_x(widths(c.latent_dim, 2 * p, c), ad::Activation::Relu, rng),
        decoder_t(widths(c.latent_dim, 1, c), ad::Activation::Relu, rng),
        decoder_y0(widths(c.latent_dim, 1, c), ad::Activation::Relu, rng),
        decoder_y1(widths(c.latent_dim, 1, c), ad::Activation::Relu, rng),
        aux_t(widths(p, 1, c), ad::Activation::Relu, rng),
        aux_y(widths(p + 1, 1, c), ad::Activation::Relu, rng) {}

  static std::vector<int> widths(int in, int out, const CevaeConfig& c) {
    std::vector<int> w = {in};
    for (int l = 0; l < c.hidden_layers; ++l) {
      w.push_back(c.hidden_units);
    }
    w.push_back(out);
    return w;
  }

  std::vector<ad::ParameterPtr> parameters() const {
    std::vector<ad::ParameterPtr> all;
    for (const auto* net :
         {&encoder, &decoder_x, &decoder_t, &decoder_y0, &decoder_y1, &aux_t, &aux_y}) {
      const auto p = net->parameters();
      all.insert(all.end(), p.begin(), p.end());
    }
    return all;
  }

  ad::Mlp encoder;
  ad::Mlp decoder_x;
  ad::Mlp decoder_t;
  ad::Mlp decoder_y0;
  ad::Mlp decoder_y1;
  ad::Mlp aux_t;
  ad::Mlp aux_y;
};

CevaeModel::CevaeModel() = default;
CevaeModel::~CevaeModel() = default;
CevaeModel::CevaeModel(CevaeModel&&) noexcept = default;
CevaeModel& CevaeModel::operator=(CevaeModel&&) noexcept = default;

CevaeConfig CevaeConfig::paper() { return CevaeConfig{}; }

CevaeConfig CevaeConfig::desk() {
  CevaeConfig c;
  c.latent_dim = 8;
  c.hidden_layers = 2;
  c.hidden_units = 64;
  c.epochs = 250;
  c.batch_size = 256;
  return c;
}

void CevaeConfig::validate() const {
  if (latent_dim < 1 || hidden_layers < 1 || hidden_units < 1 || epochs < 1 || batch_size < 1 ||
      mc_samples < 1 || !(learning_rate > 0.0)) {
    throw CausalError("CEVAE configuration values must all be positive");
  }
}

namespace {

Matrix column(const std::vector<int>& v, const std::vector<Eigen::Index>& rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), 1);
  for (std::size_t k = 0; k < rows.size(); ++k) {
    out(static_cast<Eigen::Index>(k), 0) = v[static_cast<std::size_t>(rows[k])];
  }
  return out;
}

Matrix standard_normal(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix m(rows, cols);
  for (Eigen::Index k = 0; k < m.size(); ++k) {
    m(k) = normal(rng);
  }
  return m;
}

// floor + softplus(raw - floor): starts near log-variance 0 when raw ~ 0.
ad::Var floored_logvar(ad::Tape& tape, const ad::Var& raw) {
  const auto shift = [&](double v) { return tape.constant(Matrix::Constant(raw.rows(), raw.cols(), v)); };
  return ad::add(ad::softplus(ad::add(raw, shift(-kLogVarianceFloor))), shift(kLogVarianceFloor));
}

Eigen::Index xs_cols(const CausalDataset& data) { return data.x.cols(); }

}  // namespace

CevaeModel cevae_fit(const CausalDataset& data, const CevaeConfig& config) {
  data.validate();
  config.validate();
  const auto n = data.size();
  const auto p = static_cast<int>(data.x.cols());
  if (p < 1) {
    throw CausalError("CEVAE needs at least one covariate");
  }

  CevaeModel model;
  model.config_ = config;
  model.x_mean_ = data.x.colwise().mean();
  model.x_scale_.resize(p);
  for (int j = 0; j < p; ++j) {
    const double sd =
        std::sqrt((data.x.col(j).array() - model.x_mean_[j]).square().sum() / static_cast<double>(n));
    model.x_scale_[j] = sd > 1e-12 ? sd : 1.0;
  }
  const Matrix xs = (data.x.rowwise() - model.x_mean_).array().rowwise() / model.x_scale_.array();

  Rng rng(config.seed);
  model.nets_ = std::make_unique<CevaeNetworks>(p, config, rng);
  auto& nets = *model.nets_;
  const auto params = nets.parameters();
  ad::AdamState adam;
  adam.learning_rate = config.learning_rate;

  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  const auto batch = static_cast<std::size_t>(config.batch_size);
  const int latent = config.latent_dim;

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    double elbo_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::vector<Eigen::Index> rows(order.begin() + static_cast<std::ptrdiff_t>(start),
                                           order.begin() + static_cast<std::ptrdiff_t>(
                                                               std::min(order.size(), start + batch)));
      const auto b = static_cast<Eigen::Index>(rows.size());
      const Matrix xb = xs(rows, Eigen::all);
      const Matrix tb = column(data.t, rows);
      const Matrix yb = column(data.y, rows);

      ad::Tape tape;
      const auto x = tape.constant(xb);
      const auto t = tape.constant(tb);
      const auto y = tape.constant(yb);

      const auto enc = nets.encoder.forward(tape, ad::concat(ad::concat(x, t), y));
      const auto mu = ad::slice(enc, 0, latent);
      const auto logvar = ad::slice(enc, latent, latent);
      const auto z = ad::gaussian_reparameterize(mu, logvar, standard_normal(b, latent, rng));

      const auto dx = nets.decoder_x.forward(tape, z);
      const auto log_px = ad::gaussian_logpdf(xb, ad::slice(dx, 0, p),
                                              floored_logvar(tape, ad::slice(dx, p, p)));
      const auto log_pt = ad::bernoulli_logpmf_logits(nets.decoder_t.forward(tape, z), tb);
      const auto y_logit =
          ad::add(ad::mul(nets.decoder_y0.forward(tape, z), tape.constant(Matrix::Ones(b, 1) - tb)),
                  ad::mul(nets.decoder_y1.forward(tape, z), t));
      const auto log_py = ad::bernoulli_logpmf_logits(y_logit, yb);
      const auto kl = ad::kl_diag_gaussian(mu, logvar);
      const auto log_qt = ad::bernoulli_logpmf_logits(nets.aux_t.forward(tape, x), tb);
      const auto log_qy = ad::bernoulli_logpmf_logits(nets.aux_y.forward(tape, ad::concat(x, t)), yb);

      const auto elbo = ad::sub(ad::add(ad::add(log_px, log_pt), log_py), kl);
      const auto objective = ad::add(elbo, ad::add(log_qt, log_qy));
      const auto loss = ad::scale(objective, -1.0 / static_cast<double>(b));

      const double loss_value = loss.scalar();
      if (!std::isfinite(loss_value)) {
        throw TrainingDivergence(epoch, "CEVAE training diverged (non-finite loss) in epoch " +
                                            std::to_string(epoch));
      }
      loss_sum += loss_value * static_cast<double>(b);
      elbo_sum += elbo.scalar();
      tape.backward(loss);
      ad::adam_step(params, adam);
    }
    model.loss_history_.push_back(loss_sum / static_cast<double>(n));
    model.elbo_history_.push_back(elbo_sum / static_cast<double>(n));
  }
  return model;
}

std::pair<Vector, Vector> CevaeModel::potential_outcomes(const CausalDataset& data, int mc_samples,
                                                         std::uint64_t seed,
                                                         CevaePosterior posterior) const {
  if (!nets_) {
    throw CausalError("CEVAE model has not been fitted");
  }
  if (data.x.cols() != x_mean_.size()) {
    throw CausalError("covariate count differs from the fitted model");
  }
  const auto n = data.size();
  const auto p = xs_cols(data);
  const int latent = config_.latent_dim;
  Matrix input(n, p + 2);
  input.leftCols(p) = (data.x.rowwise() - x_mean_).array().rowwise() / x_scale_.array();
  for (Eigen::Index i = 0; i < n; ++i) {
    input(i, p) = data.t[static_cast<std::size_t>(i)];
    input(i, p + 1) = data.y[static_cast<std::size_t>(i)];
  }
  Matrix aux_t_prob;
  if (posterior == CevaePosterior::Auxiliary) {
    ad::Tape tape;
    aux_t_prob = nets_->aux_t.forward(tape, tape.constant(input.leftCols(p))).value().unaryExpr(
        [](double v) { return logistic(v); });
  }

  Rng rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  Vector y0 = Vector::Zero(n);
  Vector y1 = Vector::Zero(n);
  auto sample_z = [&](ad::Tape& tape) {
    const Matrix enc = nets_->encoder.forward(tape, tape.constant(input)).value();
    return Matrix(enc.leftCols(latent) + (0.5 * enc.rightCols(latent).array()).exp().matrix().cwiseProduct(
                                             standard_normal(n, latent, rng)));
  };
  // Fills the y column from q(y | x, t) for the t column currently in `input`.
  auto sample_aux_y = [&](ad::Tape& tape) {
    const Matrix ly = nets_->aux_y.forward(tape, tape.constant(input.leftCols(p + 1))).value();
    for (Eigen::Index i = 0; i < n; ++i) {
      input(i, p + 1) = unif(rng) < logistic(ly(i, 0)) ? 1.0 : 0.0;
    }
  };
  auto accumulate = [&](ad::Tape& tape, const Matrix& z, const ad::Mlp& head, Vector& out) {
    const Matrix l = head.forward(tape, tape.constant(z)).value();
    for (Eigen::Index i = 0; i < n; ++i) {
      out[i] += logistic(l(i, 0));
    }
  };
  for (int s = 0; s < mc_samples; ++s) {
    ad::Tape tape;
    if (posterior == CevaePosterior::Arm) {
      for (int arm = 0; arm < 2; ++arm) {
        input.col(p).setConstant(arm);
        sample_aux_y(tape);
        accumulate(tape, sample_z(tape), arm == 0 ? nets_->decoder_y0 : nets_->decoder_y1,
                   arm == 0 ? y0 : y1);
      }
      continue;
    }
    if (posterior == CevaePosterior::Auxiliary) {
      // t ~ q(t | x), then y ~ q(y | x, t), then z ~ q(z | x, t, y).
      for (Eigen::Index i = 0; i < n; ++i) {
        input(i, p) = unif(rng) < aux_t_prob(i, 0) ? 1.0 : 0.0;
      }
      sample_aux_y(tape);
    }
    const Matrix z = sample_z(tape);
    accumulate(tape, z, nets_->decoder_y0, y0);
    accumulate(tape, z, nets_->decoder_y1, y1);
  }
  y0 /= static_cast<double>(mc_samples);
  y1 /= static_cast<double>(mc_samples);
  return {y0, y1};
}

}  // namespace ecoprod::causal
