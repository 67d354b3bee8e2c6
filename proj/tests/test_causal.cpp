#include "ecoprod/causal.hpp"

#include <doctest.h>

#include <cstdlib>
#include <numeric>
#include <random>

using ecoprod::Matrix;
using ecoprod::Vector;
using namespace ecoprod::causal;

namespace {

LearnerConfig fast_learner() {
  LearnerConfig c;
  c.base.rounds = 40;
  c.base.eta = 0.1;
  return c;
}

}  // namespace

TEST_CASE("causal: method names round trip") {
  for (auto m : {Method::Cevae, Method::S, Method::T, Method::X, Method::R, Method::DiffMeans}) {
    CHECK(parse_method(to_string(m)) == m);
  }
  CHECK_THROWS_AS(parse_method("q"), CausalError);
}

TEST_CASE("causal: dataset validation") {
  auto d = generate_randomized(50, 2, 0.3, 0.6, 1);
  CHECK_NOTHROW(d.validate());
  auto one_arm = d;
  std::fill(one_arm.t.begin(), one_arm.t.end(), 1);
  CHECK_THROWS_AS(one_arm.validate(), CausalError);
  auto short_y = d;
  short_y.y.pop_back();
  CHECK_THROWS_AS(short_y.validate(), CausalError);
  auto bad_x = d;
  bad_x.x(0, 0) = std::nan("");
  CHECK_THROWS_AS(bad_x.validate(), CausalError);
  const auto sub = d.subset({0, 0, 5});
  CHECK(sub.size() == 3);
  CHECK(sub.y[1] == d.y[0]);
}

TEST_CASE("causal: generator effect by Monte Carlo") {
  // Without confounding the difference in means is unbiased for the planted effect.
  ConfoundedSpec spec;
  spec.n = 200000;
  spec.confounding = 0.0;
  spec.seed = 3;
  CHECK(std::abs(difference_in_means(generate_confounded(spec)) - 0.24) < 0.01);
  spec.ate = 0.0;
  CHECK(std::abs(difference_in_means(generate_confounded(spec))) < 0.01);
  // With confounding the naive contrast is biased upwards.
  spec.ate = 0.24;
  spec.confounding = 1.0;
  CHECK(difference_in_means(generate_confounded(spec)) > 0.3);
  // Same spec, same data.
  spec.n = 500;
  CHECK(generate_confounded(spec).y == generate_confounded(spec).y);
}

TEST_CASE("causal: percentile ranks") {
  CHECK(percentile_ranks(200, 0.95) == std::pair<std::size_t, std::size_t>{5, 195});
  CHECK(percentile_ranks(100, 0.9) == std::pair<std::size_t, std::size_t>{5, 95});
  CHECK(percentile_ranks(10, 0.99) == std::pair<std::size_t, std::size_t>{1, 10});
}

TEST_CASE("causal: bootstrap of a mean matches the normal approximation") {
  const auto d = generate_randomized(2000, 1, 0.3, 0.3, 5);
  const Estimator est = [](const CausalDataset& s) {
    return std::accumulate(s.y.begin(), s.y.end(), 0.0) / static_cast<double>(s.size());
  };
  const auto r = bootstrap_ci(est, d, 400, 0.95, 9);
  const double p = est(d);
  const double half = 1.96 * std::sqrt(p * (1 - p) / 2000.0);
  CHECK(r.ci_low < p);
  CHECK(r.ci_high > p);
  CHECK((r.ci_high - r.ci_low) == doctest::Approx(2 * half).epsilon(0.15));
  CHECK(r.replicates.size() == 400);
  CHECK(r.failures == 0);
}

TEST_CASE("causal: bootstrap rules") {
  const auto d = generate_randomized(200, 1, 0.3, 0.5, 6);
  const Estimator est = difference_in_means;
  CHECK_THROWS_AS(bootstrap_ci(est, d, 49, 0.95, 1), CausalError);
  setenv("ECOPROD_THREADS", "1", 1);
  const auto a = bootstrap_ci(est, d, 60, 0.9, 2);
  setenv("ECOPROD_THREADS", "4", 1);
  const auto b = bootstrap_ci(est, d, 60, 0.9, 2);
  unsetenv("ECOPROD_THREADS");
  CHECK(a.replicates == b.replicates);
  const Estimator flaky = [&](const CausalDataset& s) {
    if (s.y[0] == 1 && s.y[1] == 1 && s.y[2] == 1) throw CausalError("fail");
    return difference_in_means(s);
  };
  setenv("ECOPROD_THREADS", "1", 1);
  const Estimator always = [](const CausalDataset&) -> double { throw CausalError("fail"); };
  CHECK_THROWS_AS(bootstrap_ci(always, d, 60, 0.9, 2), CausalError);
  const auto f = bootstrap_ci(flaky, d, 200, 0.9, 3);
  unsetenv("ECOPROD_THREADS");
  CHECK(f.failures > 0);
  CHECK(f.replicates.size() + static_cast<std::size_t>(f.failures) == 200);
}

TEST_CASE("causal: learners on a randomised trial") {
  const auto d = generate_randomized(2000, 3, 0.3, 0.6, 7);
  const auto cfg = fast_learner();
  for (auto m : {Method::S, Method::T, Method::X, Method::R, Method::DiffMeans}) {
    CAPTURE(to_string(m));
    CHECK(std::abs(point_estimate(m, d, cfg) - 0.3) < 0.06);
  }
  auto het = cfg;
  het.heterogeneous_r = true;
  const Vector tau = r_learner_effects(d, het);
  CHECK(tau.size() == 2000);
  CHECK(std::abs(tau.mean() - 0.3) < 0.08);
  CHECK(tau.maxCoeff() <= 1.0);
  CHECK(tau.minCoeff() >= -1.0);
}

TEST_CASE("causal: propensity is clipped") {
  auto d = generate_randomized(400, 1, 0.3, 0.6, 8);
  for (Eigen::Index i = 0; i < d.size(); ++i) d.x(i, 0) = d.t[static_cast<std::size_t>(i)];  // perfect separation
  const Vector e = propensity(d, fast_learner());
  CHECK(e.minCoeff() >= kPropensityClip);
  CHECK(e.maxCoeff() <= 1.0 - kPropensityClip);
}

TEST_CASE("causal: group-level aggregation") {
  CausalDataset d = generate_randomized(4, 1, 0.3, 0.6, 9);
  d.groups = {"a", "a", "a", "b"};
  const Vector effects{{0.0, 0.0, 0.0, 1.0}};
  CHECK(aggregate_effects(effects, d, false) == doctest::Approx(0.25));
  CHECK(aggregate_effects(effects, d, true) == doctest::Approx(0.5));
}

TEST_CASE("causal: estimate_ate output") {
  const auto d = generate_randomized(500, 2, 0.3, 0.6, 10);
  const auto e = estimate_ate(Method::T, d, fast_learner(), 60, 0.9, 11);
  CHECK(e.ci_low <= e.ate);
  CHECK(e.ate <= e.ci_high);
  const auto j = to_json(e);
  CHECK(j.at("method") == "t");
  CHECK(j.at("ci").size() == 2);
  CHECK(j.at("diagnostics").at("bootstrap_replicates") == 60);
  CHECK(to_json(estimate_ate(Method::T, d, fast_learner(), 60, 0.9, 11)).dump() == j.dump());
}

TEST_CASE("causal: CEVAE fit and effect") {
  ConfoundedSpec spec;
  spec.n = 600;
  spec.p = 4;
  spec.seed = 12;
  const auto d = generate_confounded(spec);
  auto cfg = CevaeConfig::desk();
  cfg.epochs = 15;
  cfg.seed = 4;
  cfg.mc_samples = 10;
  CHECK_NOTHROW(cfg.validate());
  const auto model = cevae_fit(d, cfg);
  CHECK(model.loss_history().size() == 15);
  CHECK(model.elbo_history().size() == 15);
  for (double v : model.loss_history()) CHECK(std::isfinite(v));
  CHECK(model.loss_history().back() < model.loss_history().front());
  const auto [y0, y1] = model.potential_outcomes(d, 10, 1);
  CHECK(y0.minCoeff() >= 0.0);
  CHECK(y1.maxCoeff() <= 1.0);
  const auto e = cevae_ate(model, d, 10, 60, 0.9);
  CHECK(e.ci_low <= e.ate);
  CHECK(e.ate <= e.ci_high);
  CHECK(e.method == Method::Cevae);
  CHECK(e.diagnostics.at("loss_history").size() == 15);
  // Deterministic given the seed.
  CHECK(cevae_ate(cevae_fit(d, cfg), d, 10, 60, 0.9).ate == e.ate);
  auto bad = cfg;
  bad.latent_dim = 0;
  CHECK_THROWS_AS(bad.validate(), CausalError);
}

TEST_CASE("causal: presets") {
  const auto paper = CevaeConfig::paper();
  CHECK(paper.latent_dim == 20);
  CHECK(paper.hidden_layers == 3);
  CHECK(paper.hidden_units == 200);
  CHECK(paper.learning_rate == 1e-3);
  CHECK(paper.mc_samples == 100);
  const auto desk = CevaeConfig::desk();
  CHECK(desk.hidden_units < paper.hidden_units);
}
