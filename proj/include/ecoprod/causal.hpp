#pragma once

#include "ecoprod/autodiff.hpp"
#include "ecoprod/common.hpp"
#include "ecoprod/gbm.hpp"

#include <json.hpp>

#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace ecoprod::causal {

class CausalError : public Error {
 public:
  using Error::Error;
};

class TrainingDivergence : public CausalError {
 public:
  TrainingDivergence(int epoch, const std::string& what) : CausalError(what), epoch_(epoch) {}
  int epoch() const { return epoch_; }

 private:
  int epoch_;
};

/// Rows are units. `groups` optionally tags each row with its province so
/// estimates can be aggregated at province level.
struct CausalDataset {
  Matrix x;
  std::vector<int> t;
  std::vector<int> y;
  std::vector<std::string> covariate_names;
  std::vector<std::string> groups;

  Eigen::Index size() const { return x.rows(); }
  /// Throws unless t and y are binary, both arms are present and x is finite.
  void validate() const;
  CausalDataset subset(const std::vector<Eigen::Index>& rows) const;
  int treated_count() const;
};

enum class Method { Cevae, S, T, X, R, DiffMeans };

const char* to_string(Method method);
Method parse_method(const std::string& text);

struct AteEstimate {
  double ate = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  Method method = Method::DiffMeans;
  nlohmann::ordered_json diagnostics = nlohmann::ordered_json::object();
};

// --- synthetic generators ------------------------------------------------

/// X ~ N(0, I_p); P(t = 1 | x) = sigmoid(confounding * (x1 + x3 / 2));
/// P(y = 1 | x, t) = b(x) + ate * t with
/// b(x) = (1 - ate) / 2 + 0.95 (1 - |ate|) / 2 * tanh(x1 + x2 / 2).
/// The effect is constant on the probability scale, so the population ATE is
/// exactly `ate`. ate = 0 gives the null-effect generator.
struct ConfoundedSpec {
  int n = 2000;
  int p = 7;
  double ate = 0.24;
  double confounding = 1.0;
  std::uint64_t seed = 0;
};

CausalDataset generate_confounded(const ConfoundedSpec& spec);

/// Randomised treatment (P(t=1) = 1/2), y ~ Bernoulli(p1) if treated else
/// Bernoulli(p0), covariates pure noise.
CausalDataset generate_randomized(int n, int p, double p0, double p1, std::uint64_t seed);

// --- meta-learners -------------------------------------------------------

inline constexpr double kPropensityClip = 0.01;

struct LearnerConfig {
  gbm::TrainConfig base = default_base();
  int crossfit_folds = 5;
  /// R-learner: fit a boosted tau(x) instead of a constant.
  bool heterogeneous_r = false;
  /// Average unit effects within each group before averaging groups.
  bool group_level = false;

  static gbm::TrainConfig default_base();
  void validate() const;
};

/// Boosted estimate of P(t = 1 | x), clipped to [0.01, 0.99].
Vector propensity(const CausalDataset& data, const LearnerConfig& config);

/// Unit-level effect estimates; their (group-)mean is the ATE.
Vector s_learner_effects(const CausalDataset& data, const LearnerConfig& config);
Vector t_learner_effects(const CausalDataset& data, const LearnerConfig& config);
Vector x_learner_effects(const CausalDataset& data, const LearnerConfig& config);
Vector r_learner_effects(const CausalDataset& data, const LearnerConfig& config);

double difference_in_means(const CausalDataset& data);

/// Mean of unit effects, or the mean of per-group means when `group_level`.
double aggregate_effects(const Vector& effects, const CausalDataset& data, bool group_level);

/// Point estimate for one meta-learner or difference in means (no CI).
double point_estimate(Method method, const CausalDataset& data, const LearnerConfig& config);

// --- bootstrap -----------------------------------------------------------

using Estimator = std::function<double(const CausalDataset&)>;

struct BootstrapResult {
  double ci_low = 0.0;
  double ci_high = 0.0;
  int failures = 0;
  std::vector<double> replicates;  // successful replicates in replicate order
};

/// 1-based order statistics of a percentile interval:
/// k_low = max(1, round(B (1 - level) / 2)), k_high = min(B, round(B (1 + level) / 2)).
std::pair<std::size_t, std::size_t> percentile_ranks(std::size_t count, double level);

/// Percentile interval from `B` resamples of the rows. Replicates whose
/// estimator throws are dropped; more than 10% failures is an error.
BootstrapResult bootstrap_ci(const Estimator& estimator, const CausalDataset& data, int replicates,
                             double level, std::uint64_t seed);

/// Meta-learner or difference-in-means estimate with a bootstrap interval.
AteEstimate estimate_ate(Method method, const CausalDataset& data, const LearnerConfig& config,
                         int bootstrap, double level, std::uint64_t seed);

// --- CEVAE ---------------------------------------------------------------

struct CevaeConfig {
  int latent_dim = 20;
  int hidden_layers = 3;
  int hidden_units = 200;
  int epochs = 100;
  int batch_size = 100;
  double learning_rate = 1e-3;
  int mc_samples = 100;
  std::uint64_t seed = 0;

  static CevaeConfig paper();
  /// Reduced network for quick runs: 2 x 64 hidden, latent 8, 250 epochs of
  /// 256-row batches.
  static CevaeConfig desk();
  void validate() const;
};

/// How z is inferred when predicting potential outcomes: from the observed
/// (t, y) of each unit, or from (t, y) drawn through the auxiliary networks
/// q(t | x) and q(y | x, t).
enum class CevaePosterior { Observed, Auxiliary, Arm };

struct CevaeNetworks;

class CevaeModel {
 public:
  CevaeModel();
  ~CevaeModel();
  CevaeModel(CevaeModel&&) noexcept;
  CevaeModel& operator=(CevaeModel&&) noexcept;

  const CevaeConfig& config() const { return config_; }
  /// Per-epoch mean training objective (negative ELBO plus auxiliary terms).
  const std::vector<double>& loss_history() const { return loss_history_; }
  /// Per-epoch mean ELBO per unit.
  const std::vector<double>& elbo_history() const { return elbo_history_; }

  /// Outcome probabilities under control and treatment for each row, averaged
  /// over `mc_samples` draws of z ~ q(z | x, t, y).
  std::pair<Vector, Vector> potential_outcomes(
      const CausalDataset& data, int mc_samples, std::uint64_t seed,
      CevaePosterior posterior = CevaePosterior::Observed) const;

 private:
  friend CevaeModel cevae_fit(const CausalDataset& data, const CevaeConfig& config);

  CevaeConfig config_;
  Eigen::RowVectorXd x_mean_;
  Eigen::RowVectorXd x_scale_;
  std::unique_ptr<CevaeNetworks> nets_;
  std::vector<double> loss_history_;
  std::vector<double> elbo_history_;
};

CevaeModel cevae_fit(const CausalDataset& data, const CevaeConfig& config);

/// ATE from the fitted model. The interval resamples the per-unit effects
/// (the networks are not refit per replicate).
AteEstimate cevae_ate(const CevaeModel& model, const CausalDataset& data, int mc_samples,
                      int bootstrap = 200, double level = 0.95, bool group_level = false,
                      CevaePosterior posterior = CevaePosterior::Observed);

nlohmann::ordered_json to_json(const AteEstimate& estimate);

}  // namespace ecoprod::causal
