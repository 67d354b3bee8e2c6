#include "ecoprod/causal.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

namespace ecoprod::causal {

void CausalDataset::validate() const {
  const auto n = x.rows();
  if (n == 0) {
    throw CausalError("causal dataset is empty");
  }
  if (static_cast<Eigen::Index>(t.size()) != n || static_cast<Eigen::Index>(y.size()) != n) {
    throw CausalError("treatment and outcome vectors must have one entry per row");
  }
  if (!groups.empty() && static_cast<Eigen::Index>(groups.size()) != n) {
    throw CausalError("group labels must have one entry per row");
  }
  if (!covariate_names.empty() && static_cast<Eigen::Index>(covariate_names.size()) != x.cols()) {
    throw CausalError("covariate name count does not match the covariate matrix");
  }
  if (!x.allFinite()) {
    throw CausalError("non-finite covariate value");
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto k = static_cast<std::size_t>(i);
    if ((t[k] != 0 && t[k] != 1) || (y[k] != 0 && y[k] != 1)) {
      throw CausalError("treatment and outcome must be binary (row " + std::to_string(i) + ")");
    }
  }
  const int treated = treated_count();
  if (treated == 0 || treated == n) {
    throw CausalError("both treatment arms must be non-empty");
  }
}

CausalDataset CausalDataset::subset(const std::vector<Eigen::Index>& rows) const {
  CausalDataset out;
  out.x = x(rows, Eigen::all);
  out.covariate_names = covariate_names;
  for (auto r : rows) {
    const auto k = static_cast<std::size_t>(r);
    out.t.push_back(t[k]);
    out.y.push_back(y[k]);
    if (!groups.empty()) {
      out.groups.push_back(groups[k]);
    }
  }
  return out;
}

int CausalDataset::treated_count() const { return std::accumulate(t.begin(), t.end(), 0); }

const char* to_string(Method method) {
  switch (method) {
    case Method::Cevae: return "cevae";
    case Method::S: return "s";
    case Method::T: return "t";
    case Method::X: return "x";
    case Method::R: return "r";
    case Method::DiffMeans: return "diff_means";
  }
  return "?";
}

Method parse_method(const std::string& text) {
  for (auto m : {Method::Cevae, Method::S, Method::T, Method::X, Method::R, Method::DiffMeans}) {
    if (text == to_string(m)) {
      return m;
    }
  }
  throw CausalError("unknown causal method '" + text + "'");
}

// ---------------------------------------------------------------------------

CausalDataset generate_confounded(const ConfoundedSpec& spec) {
  if (spec.n < 10) {
    throw CausalError("generator needs n >= 10");
  }
  if (spec.p < 3) {
    throw CausalError("generator needs at least 3 covariates");
  }
  if (!(std::abs(spec.ate) < 1.0)) {
    throw CausalError("generator ATE must lie in (-1, 1)");
  }
  Rng rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const double tau = spec.ate;
  CausalDataset data;
  data.x.resize(spec.n, spec.p);
  for (int i = 0; i < spec.n; ++i) {
    for (int j = 0; j < spec.p; ++j) {
      data.x(i, j) = normal(rng);
    }
    const double score = data.x(i, 0) + 0.5 * data.x(i, 2);
    const int t = unif(rng) < logistic(spec.confounding * score) ? 1 : 0;
    const double base = 0.5 * (1.0 - tau) +
                        0.95 * 0.5 * (1.0 - std::abs(tau)) * std::tanh(data.x(i, 0) + 0.5 * data.x(i, 1));
    const int y = unif(rng) < base + tau * t ? 1 : 0;
    data.t.push_back(t);
    data.y.push_back(y);
  }
  for (int j = 0; j < spec.p; ++j) {
    data.covariate_names.push_back("x" + std::to_string(j + 1));
  }
  return data;
}

CausalDataset generate_randomized(int n, int p, double p0, double p1, std::uint64_t seed) {
  if (n < 2 || p < 1) {
    throw CausalError("randomized generator needs n >= 2 and p >= 1");
  }
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  CausalDataset data;
  data.x.resize(n, p);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < p; ++j) {
      data.x(i, j) = normal(rng);
    }
    const int t = unif(rng) < 0.5 ? 1 : 0;
    data.t.push_back(t);
    data.y.push_back(unif(rng) < (t == 1 ? p1 : p0) ? 1 : 0);
  }
  for (int j = 0; j < p; ++j) {
    data.covariate_names.push_back("x" + std::to_string(j + 1));
  }
  return data;
}

// ---------------------------------------------------------------------------

gbm::TrainConfig LearnerConfig::default_base() {
  gbm::TrainConfig c;
  c.rounds = 100;
  c.max_depth = 3;
  c.eta = 0.05;
  c.lambda = 1.0;
  c.min_child_cover = 20.0;
  return c;
}

void LearnerConfig::validate() const {
  base.validate();
  if (crossfit_folds < 2) {
    throw CausalError("crossfit_folds must be >= 2");
  }
}

namespace {

Vector to_vector(const std::vector<int>& v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[static_cast<Eigen::Index>(i)] = v[i];
  }
  return out;
}

std::vector<Eigen::Index> rows_where(const std::vector<int>& v, int value) {
  std::vector<Eigen::Index> rows;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (v[i] == value) {
      rows.push_back(static_cast<Eigen::Index>(i));
    }
  }
  return rows;
}

void require_both_classes(const Vector& y, const char* what) {
  const double s = y.sum();
  if (s <= 0.0 || s >= static_cast<double>(y.size())) {
    throw CausalError(std::string(what) + " has a single class; cannot fit a classifier");
  }
}

gbm::BoostedModel fit_classifier(const Matrix& x, const Vector& y, const gbm::TrainConfig& base,
                                 const char* what) {
  require_both_classes(y, what);
  gbm::TrainConfig cfg = base;
  cfg.objective = gbm::Objective::Logistic;
  return gbm::train(x, y, cfg);
}

gbm::BoostedModel fit_regressor(const Matrix& x, const Vector& y, const gbm::TrainConfig& base,
                                const Vector& weights = Vector()) {
  gbm::TrainConfig cfg = base;
  cfg.objective = gbm::Objective::Squared;
  cfg.base_score.reset();
  return gbm::train(x, y, cfg, {}, weights);
}

Matrix with_treatment(const Matrix& x, double t) {
  Matrix out(x.rows(), x.cols() + 1);
  out.leftCols(x.cols()) = x;
  out.col(x.cols()).setConstant(t);
  return out;
}

void clip_propensity(Vector& e, const char* where) {
  int clipped = 0;
  for (Eigen::Index i = 0; i < e.size(); ++i) {
    if (e[i] < kPropensityClip || e[i] > 1.0 - kPropensityClip) {
      e[i] = std::clamp(e[i], kPropensityClip, 1.0 - kPropensityClip);
      ++clipped;
    }
  }
  if (clipped > 0) {
    log_warning(std::string(where) + ": clipped " + std::to_string(clipped) +
                " propensity score(s) to [0.01, 0.99]");
  }
}

// Out-of-fold predictions of a boosted classifier of `target` on x.
Vector crossfit_probabilities(const Matrix& x, const std::vector<int>& target,
                              const LearnerConfig& config, const char* what) {
  const auto folds = gbm::stratified_folds(target, config.crossfit_folds, config.base.seed);
  const Vector y = to_vector(target);
  Vector out(x.rows());
  for (int f = 0; f < config.crossfit_folds; ++f) {
    std::vector<Eigen::Index> fit_rows;
    std::vector<Eigen::Index> held_rows;
    for (std::size_t i = 0; i < folds.size(); ++i) {
      (folds[i] == f ? held_rows : fit_rows).push_back(static_cast<Eigen::Index>(i));
    }
    if (held_rows.empty()) {
      continue;
    }
    const auto model = fit_classifier(x(fit_rows, Eigen::all), y(fit_rows), config.base, what);
    const Vector p = model.predict(x(held_rows, Eigen::all));
    for (std::size_t k = 0; k < held_rows.size(); ++k) {
      out[held_rows[k]] = p[static_cast<Eigen::Index>(k)];
    }
  }
  return out;
}

Vector clamp_effects(Vector v) { return v.cwiseMax(-1.0).cwiseMin(1.0); }

}  // namespace

Vector propensity(const CausalDataset& data, const LearnerConfig& config) {
  data.validate();
  config.validate();
  const auto model = fit_classifier(data.x, to_vector(data.t), config.base, "treatment");
  Vector e = model.predict(data.x);
  clip_propensity(e, "propensity");
  return e;
}

Vector s_learner_effects(const CausalDataset& data, const LearnerConfig& config) {
  data.validate();
  config.validate();
  Matrix xt(data.size(), data.x.cols() + 1);
  xt.leftCols(data.x.cols()) = data.x;
  xt.col(data.x.cols()) = to_vector(data.t);
  const auto model = fit_classifier(xt, to_vector(data.y), config.base, "outcome");
  return clamp_effects(model.predict(with_treatment(data.x, 1.0)) -
                       model.predict(with_treatment(data.x, 0.0)));
}

namespace {

struct ArmModels {
  gbm::BoostedModel mu0;
  gbm::BoostedModel mu1;
  std::vector<Eigen::Index> control;
  std::vector<Eigen::Index> treated;
};

ArmModels fit_arms(const CausalDataset& data, const LearnerConfig& config) {
  ArmModels arms;
  arms.control = rows_where(data.t, 0);
  arms.treated = rows_where(data.t, 1);
  const Vector y = to_vector(data.y);
  arms.mu0 = fit_classifier(data.x(arms.control, Eigen::all), y(arms.control), config.base,
                            "control-arm outcome");
  arms.mu1 = fit_classifier(data.x(arms.treated, Eigen::all), y(arms.treated), config.base,
                            "treated-arm outcome");
  return arms;
}

}  // namespace

Vector t_learner_effects(const CausalDataset& data, const LearnerConfig& config) {
  data.validate();
  config.validate();
  const auto arms = fit_arms(data, config);
  return clamp_effects(arms.mu1.predict(data.x) - arms.mu0.predict(data.x));
}

Vector x_learner_effects(const CausalDataset& data, const LearnerConfig& config) {
  data.validate();
  config.validate();
  const auto arms = fit_arms(data, config);
  const Vector y = to_vector(data.y);
  const Matrix x1 = data.x(arms.treated, Eigen::all);
  const Matrix x0 = data.x(arms.control, Eigen::all);
  const Vector d1 = y(arms.treated) - arms.mu0.predict(x1);
  const Vector d0 = arms.mu1.predict(x0) - y(arms.control);
  const auto tau1 = fit_regressor(x1, d1, config.base);
  const auto tau0 = fit_regressor(x0, d0, config.base);
  const Vector g = propensity(data, config);
  const Vector t0 = tau0.predict(data.x);
  const Vector t1 = tau1.predict(data.x);
  return clamp_effects(g.cwiseProduct(t0) + (Vector::Ones(g.size()) - g).cwiseProduct(t1));
}

Vector r_learner_effects(const CausalDataset& data, const LearnerConfig& config) {
  data.validate();
  config.validate();
  const Vector m = crossfit_probabilities(data.x, data.y, config, "outcome");
  Vector e = crossfit_probabilities(data.x, data.t, config, "treatment");
  clip_propensity(e, "r-learner propensity");
  const Vector ry = to_vector(data.y) - m;
  const Vector rt = to_vector(data.t) - e;
  if (!config.heterogeneous_r) {
    const double denom = rt.squaredNorm();
    if (denom <= 0.0) {
      throw CausalError("treatment residuals vanish; the R-learner is undefined");
    }
    const double tau = std::clamp(ry.dot(rt) / denom, -1.0, 1.0);
    return Vector::Constant(data.size(), tau);
  }
  // Weighted regression of the pseudo-outcome ry / rt with weights rt^2.
  const Vector pseudo = ry.cwiseQuotient(rt);
  const Vector weights = rt.cwiseProduct(rt);
  const auto model = fit_regressor(data.x, pseudo, config.base, weights);
  return clamp_effects(model.predict(data.x));
}

double difference_in_means(const CausalDataset& data) {
  data.validate();
  double s1 = 0.0;
  double s0 = 0.0;
  int n1 = 0;
  for (std::size_t i = 0; i < data.t.size(); ++i) {
    if (data.t[i] == 1) {
      s1 += data.y[i];
      ++n1;
    } else {
      s0 += data.y[i];
    }
  }
  const auto n0 = static_cast<double>(data.t.size()) - n1;
  return s1 / n1 - s0 / n0;
}

double aggregate_effects(const Vector& effects, const CausalDataset& data, bool group_level) {
  if (effects.size() == 0) {
    throw CausalError("no unit effects to aggregate");
  }
  if (!group_level) {
    return effects.mean();
  }
  if (static_cast<Eigen::Index>(data.groups.size()) != effects.size()) {
    throw CausalError("group-level aggregation needs a group label per row");
  }
  std::map<std::string, std::pair<double, int>> by_group;
  for (Eigen::Index i = 0; i < effects.size(); ++i) {
    auto& acc = by_group[data.groups[static_cast<std::size_t>(i)]];
    acc.first += effects[i];
    ++acc.second;
  }
  double total = 0.0;
  for (const auto& [_, acc] : by_group) {
    total += acc.first / acc.second;
  }
  return total / static_cast<double>(by_group.size());
}

double point_estimate(Method method, const CausalDataset& data, const LearnerConfig& config) {
  switch (method) {
    case Method::S: return aggregate_effects(s_learner_effects(data, config), data, config.group_level);
    case Method::T: return aggregate_effects(t_learner_effects(data, config), data, config.group_level);
    case Method::X: return aggregate_effects(x_learner_effects(data, config), data, config.group_level);
    case Method::R: return aggregate_effects(r_learner_effects(data, config), data, config.group_level);
    case Method::DiffMeans: return difference_in_means(data);
    case Method::Cevae: break;
  }
  throw CausalError("point_estimate does not fit CEVAE; use cevae_fit and cevae_ate");
}

// ---------------------------------------------------------------------------

std::pair<std::size_t, std::size_t> percentile_ranks(std::size_t count, double level) {
  if (count == 0) {
    throw CausalError("percentile interval of an empty sample");
  }
  if (!(level > 0.0 && level < 1.0)) {
    throw CausalError("confidence level must lie in (0, 1)");
  }
  const double b = static_cast<double>(count);
  const double alpha = 1.0 - level;
  const auto low = static_cast<std::size_t>(std::max(1L, std::lround(b * alpha / 2.0)));
  const auto high = static_cast<std::size_t>(
      std::min(static_cast<long>(count), std::lround(b * (1.0 - alpha / 2.0))));
  return {low, std::max(low, high)};
}

BootstrapResult bootstrap_ci(const Estimator& estimator, const CausalDataset& data, int replicates,
                             double level, std::uint64_t seed) {
  if (replicates < 50) {
    throw CausalError("bootstrap needs at least 50 replicates");
  }
  data.validate();
  const auto n = data.size();
  const auto count = static_cast<std::size_t>(replicates);
  std::vector<double> value(count, 0.0);
  std::vector<char> ok(count, 0);
  parallel_for(count, [&](std::size_t b) {
    Rng rng(derive_seed(seed, b + 1));
    std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);
    std::vector<Eigen::Index> rows(static_cast<std::size_t>(n));
    for (auto& r : rows) {
      r = pick(rng);
    }
    try {
      const QuietWarnings quiet;
      const double v = estimator(data.subset(rows));
      if (std::isfinite(v)) {
        value[b] = v;
        ok[b] = 1;
      }
    } catch (const Error&) {
      // dropped and counted below
    }
  });
  BootstrapResult result;
  for (std::size_t b = 0; b < count; ++b) {
    if (ok[b] != 0) {
      result.replicates.push_back(value[b]);
    } else {
      ++result.failures;
    }
  }
  if (result.failures * 10 > replicates) {
    throw CausalError("bootstrap: " + std::to_string(result.failures) + " of " +
                      std::to_string(replicates) + " replicates failed (limit 10%)");
  }
  std::vector<double> sorted = result.replicates;
  std::sort(sorted.begin(), sorted.end());
  const auto [low, high] = percentile_ranks(sorted.size(), level);
  result.ci_low = sorted[low - 1];
  result.ci_high = sorted[high - 1];
  return result;
}

namespace {

double sample_sd(const std::vector<double>& v) {
  if (v.size() < 2) {
    return 0.0;
  }
  const double m = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) {
    ss += (x - m) * (x - m);
  }
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

void finish_interval(AteEstimate& est, const BootstrapResult& boot, int replicates, double level) {
  est.ci_low = boot.ci_low;
  est.ci_high = boot.ci_high;
  bool widened = false;
  if (est.ate < est.ci_low || est.ate > est.ci_high) {
    est.ci_low = std::min(est.ci_low, est.ate);
    est.ci_high = std::max(est.ci_high, est.ate);
    widened = true;
  }
  est.diagnostics["bootstrap_replicates"] = replicates;
  est.diagnostics["bootstrap_failures"] = boot.failures;
  est.diagnostics["level"] = level;
  est.diagnostics["bootstrap_sd"] = sample_sd(boot.replicates);
  est.diagnostics["interval_widened_to_point"] = widened;
}

}  // namespace

AteEstimate estimate_ate(Method method, const CausalDataset& data, const LearnerConfig& config,
                         int bootstrap, double level, std::uint64_t seed) {
  data.validate();
  AteEstimate est;
  est.method = method;
  est.ate = std::clamp(point_estimate(method, data, config), -1.0, 1.0);
  est.diagnostics["n"] = data.size();
  est.diagnostics["treated"] = data.treated_count();
  const auto boot = bootstrap_ci(
      [&](const CausalDataset& d) { return point_estimate(method, d, config); }, data, bootstrap,
      level, seed);
  finish_interval(est, boot, bootstrap, level);
  return est;
}

AteEstimate cevae_ate(const CevaeModel& model, const CausalDataset& data, int mc_samples,
                      int bootstrap, double level, bool group_level, CevaePosterior posterior) {
  data.validate();
  if (mc_samples < 1) {
    throw CausalError("mc_samples must be >= 1");
  }
  const std::uint64_t seed = derive_seed(model.config().seed, 1000);
  const auto [y0, y1] = model.potential_outcomes(data, mc_samples, seed, posterior);
  const Vector effects = y1 - y0;
  AteEstimate est;
  est.method = Method::Cevae;
  est.ate = std::clamp(aggregate_effects(effects, data, group_level), -1.0, 1.0);
  est.diagnostics["n"] = data.size();
  est.diagnostics["treated"] = data.treated_count();
  est.diagnostics["mc_samples"] = mc_samples;
  est.diagnostics["posterior"] = posterior == CevaePosterior::Observed ? "observed" : "auxiliary";
  est.diagnostics["interval"] = "unit-effect bootstrap";
  const auto boot = bootstrap_ci(
      [&](const CausalDataset& d) {
        // Rows of the resample carry their unit index in the first column.
        Vector e(d.size());
        for (Eigen::Index i = 0; i < d.size(); ++i) {
          e[i] = effects[static_cast<Eigen::Index>(d.x(i, 0))];
        }
        return aggregate_effects(e, d, group_level);
      },
      [&] {
        CausalDataset index_only;
        index_only.x.resize(data.size(), 1);
        for (Eigen::Index i = 0; i < data.size(); ++i) {
          index_only.x(i, 0) = static_cast<double>(i);
        }
        index_only.t = data.t;
        index_only.y = data.y;
        index_only.groups = data.groups;
        return index_only;
      }(),
      bootstrap, level, derive_seed(model.config().seed, 1001));
  finish_interval(est, boot, bootstrap, level);
  est.diagnostics["loss_history"] = model.loss_history();
  est.diagnostics["elbo_history"] = model.elbo_history();
  return est;
}

nlohmann::ordered_json to_json(const AteEstimate& estimate) {
  nlohmann::ordered_json j;
  j["method"] = to_string(estimate.method);
  j["ate"] = estimate.ate;
  j["ci"] = {estimate.ci_low, estimate.ci_high};
  j["diagnostics"] = estimate.diagnostics;
  return j;
}

}  // namespace ecoprod::causal
