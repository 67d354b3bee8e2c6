#include "oracles.hpp"

#include <doctest.h>

#include <random>

using ecoprod::EcoGroup;
using ecoprod::Matrix;
using ecoprod::Vector;
using namespace ecoprod::dea;

namespace {

Panel panel(std::vector<std::vector<double>> inputs, std::vector<double> outputs) {
  Panel p;
  const auto n = static_cast<Eigen::Index>(outputs.size());
  p.inputs.resize(static_cast<Eigen::Index>(inputs.size()), n);
  p.outputs.resize(1, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    for (Eigen::Index i = 0; i < p.inputs.rows(); ++i) p.inputs(i, j) = inputs[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
    p.outputs(0, j) = outputs[static_cast<std::size_t>(j)];
  }
  return p;
}

Options with(ReturnsToScale rts) {
  Options o;
  o.rts = rts;
  return o;
}

Panel random_panel(std::mt19937_64& rng, int n, int m) {
  std::uniform_real_distribution<double> u(0.5, 10.0);
  Panel p;
  p.inputs.resize(m, n);
  p.outputs.resize(1, n);
  for (int j = 0; j < n; ++j) {
    for (int i = 0; i < m; ++i) p.inputs(i, j) = u(rng);
    p.outputs(0, j) = u(rng);
  }
  return p;
}

}  // namespace

TEST_CASE("dea: a lone unit is its own frontier") {
  CHECK(scores(panel({{2}}, {2})).theta[0] == 1.0);
}

TEST_CASE("dea: two units under VRS") {
  const auto s = scores(panel({{2, 4}}, {2, 2}));
  CHECK(s.theta[0] == doctest::Approx(1.0));
  CHECK(s.theta[1] == doctest::Approx(0.5));
  CHECK(s.lambda.row(1).sum() == doctest::Approx(1.0));
}

TEST_CASE("dea: CRS against VRS on a hand-solved pair") {
  const auto p = panel({{1, 2}}, {1, 4});
  CHECK(scores(p, with(ReturnsToScale::CRS)).theta[0] == doctest::Approx(0.5));
  CHECK(scores(p, with(ReturnsToScale::VRS)).theta[0] == doctest::Approx(1.0));
}

TEST_CASE("dea: panel validation") {
  CHECK_THROWS_AS(scores(panel({{1, 2}}, {1, 0})), DeaError);
  CHECK_THROWS_AS(scores(panel({{1, -2}}, {1, 1})), DeaError);
  CHECK_THROWS_AS(scores(panel({{0, 2}}, {1, 1})), DeaError);
}

TEST_CASE("dea: median split") {
  using G = EcoGroup;
  CHECK(split_by_median(Vector{{0.2, 0.5, 0.9, 1.0}}) == std::vector<G>{G::Low, G::Low, G::High, G::High});
  CHECK(split_by_median(Vector{{0.2, 0.5, 0.9}}) == std::vector<G>{G::Low, G::Low, G::High});
  CHECK(split_by_median(Vector{{0.5, 0.5, 0.5, 0.9}}) == std::vector<G>{G::Low, G::Low, G::Low, G::High});
  CHECK_THROWS_AS(split_by_median(Vector{{1.0, 1.0, 1.0}}), DeaError);
  CHECK(lower_median(Vector{{4, 1, 3, 2}}) == 2.0);
}

TEST_CASE("dea: oracle equivalence and structural invariants on random panels") {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 60; ++trial) {
    const int n = 1 + static_cast<int>(rng() % 5);
    const int m = 1 + static_cast<int>(rng() % 2);
    const auto p = random_panel(rng, n, m);
    const auto crs = scores(p, with(ReturnsToScale::CRS));
    const auto vrs = scores(p, with(ReturnsToScale::VRS));
    CAPTURE(trial);
    for (int o = 0; o < n; ++o) {
      CHECK(std::abs(crs.theta[o] - oracle::dea_score(p.inputs, p.outputs, o, false)) < 1e-7);
      CHECK(std::abs(vrs.theta[o] - oracle::dea_score(p.inputs, p.outputs, o, true)) < 1e-7);
      CHECK(vrs.theta[o] >= crs.theta[o] - 1e-9);
      CHECK(vrs.theta[o] > 0.0);
      CHECK(vrs.theta[o] <= 1.0);
      CHECK(std::abs(vrs.lambda.row(o).sum() - 1.0) < 1e-8);
    }
    CHECK(std::abs(crs.theta.maxCoeff() - 1.0) < 1e-9);
    CHECK(std::abs(vrs.theta.maxCoeff() - 1.0) < 1e-9);
  }
}

TEST_CASE("dea: scores are invariant to rescaling an input row") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    auto p = random_panel(rng, 12, 3);
    const auto before = scores(p).theta;
    p.inputs.row(static_cast<Eigen::Index>(rng() % 3)) *= 1.0 + static_cast<double>(rng() % 1000);
    CHECK((scores(p).theta - before).cwiseAbs().maxCoeff() < 1e-9);
  }
}

TEST_CASE("dea: adding a dominating unit never raises a score") {
  std::mt19937_64 rng(13);
  for (int trial = 0; trial < 20; ++trial) {
    const auto p = random_panel(rng, 8, 2);
    const auto before = scores(p).theta;
    const Eigen::Index o = static_cast<Eigen::Index>(rng() % 8);
    Panel q;
    q.inputs.resize(2, 9);
    q.outputs.resize(1, 9);
    q.inputs.leftCols(8) = p.inputs;
    q.outputs.leftCols(8) = p.outputs;
    q.inputs.col(8) = p.inputs.col(o) * 0.9;
    q.outputs(0, 8) = p.outputs(0, o) * 1.1;
    const auto after = scores(q).theta;
    for (Eigen::Index j = 0; j < 8; ++j) CHECK(after[j] <= before[j] + 1e-9);
    CHECK(after[o] <= 0.9 + 1e-9);  // the new unit alone covers o at 90% of its inputs
  }
}
