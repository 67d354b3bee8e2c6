#include "oracles.hpp"

#include <doctest.h>

#include <random>
#include <sstream>

using ecoprod::Matrix;
using ecoprod::Vector;
using namespace ecoprod::lp;

namespace {

LinearProgram one_var(double c, std::vector<double> row, std::vector<Relation> rel, std::vector<double> rhs) {
  Matrix a(static_cast<Eigen::Index>(row.size()), 1);
  Vector b(static_cast<Eigen::Index>(rhs.size()));
  for (std::size_t i = 0; i < row.size(); ++i) {
    a(static_cast<Eigen::Index>(i), 0) = row[i];
    b[static_cast<Eigen::Index>(i)] = rhs[i];
  }
  return LinearProgram(Vector::Constant(1, c), a, std::move(rel), b);
}

}  // namespace

TEST_CASE("lp: minimize x subject to x >= 1") {
  const auto sol = solve(one_var(1.0, {1.0}, {Relation::GreaterEqual}, {1.0}));
  REQUIRE(sol.status == Status::Optimal);
  CHECK(sol.x[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(sol.objective_value == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("lp: segment optimum x + y = 1") {
  Matrix a(1, 2);
  a << 1, 1;
  const LinearProgram lp(Vector::Constant(2, -1.0), a, {Relation::LessEqual}, Vector::Constant(1, 1.0));
  const auto sol = solve(lp);
  REQUIRE(sol.status == Status::Optimal);
  CHECK(sol.objective_value == doctest::Approx(-1.0).epsilon(1e-12));
  CHECK(sol.x.sum() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(oracle::enumerate_vertices(lp).value == doctest::Approx(-1.0));
}

TEST_CASE("lp: x <= -1 with x >= 0 is infeasible") {
  CHECK(solve(one_var(1.0, {1.0}, {Relation::LessEqual}, {-1.0})).status == Status::Infeasible);
}

TEST_CASE("lp: unbounded direction is reported") {
  CHECK(solve(one_var(-1.0, {1.0}, {Relation::GreaterEqual}, {1.0})).status == Status::Unbounded);
}

TEST_CASE("lp: equality rows and free variables") {
  // min x0 + 2 x1 with x0 + x1 = 3, x0 - x1 >= -1, x1 free, x0 in [0, 1].
  Matrix a(2, 2);
  a << 1, 1, 1, -1;
  Vector lower(2);
  lower << 0.0, -std::numeric_limits<double>::infinity();
  const LinearProgram lp(Vector{{1.0, 2.0}}, a, {Relation::Equal, Relation::GreaterEqual}, Vector{{3.0, -1.0}},
                         lower, {1.0, std::nullopt});
  const auto sol = solve(lp);
  REQUIRE(sol.status == Status::Optimal);
  CHECK(sol.x[0] == doctest::Approx(1.0));
  CHECK(sol.x[1] == doctest::Approx(2.0));
  CHECK(sol.objective_value == doctest::Approx(5.0));
}

TEST_CASE("lp: construction rejects inconsistent dimensions") {
  CHECK_THROWS_AS(LinearProgram(Vector::Ones(2), Matrix::Ones(1, 3), {Relation::LessEqual}, Vector::Ones(1)),
                  LpError);
  CHECK_THROWS_AS(LinearProgram(Vector::Ones(2), Matrix::Ones(2, 2), {Relation::LessEqual}, Vector::Ones(2)),
                  LpError);
  Matrix bad = Matrix::Ones(1, 2);
  bad(0, 1) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(LinearProgram(Vector::Ones(2), bad, {Relation::LessEqual}, Vector::Ones(1)), LpError);
}

TEST_CASE("lp: Beale's cycling example terminates under Bland's rule") {
  // Classic instance on which the largest-coefficient rule cycles.
  Matrix a(3, 4);
  a << 0.25, -60, -0.04, 9, 0.5, -90, -0.02, 3, 0, 0, 1, 0;
  const LinearProgram lp(Vector{{-0.75, 150, -0.02, 6}}, a,
                         {Relation::LessEqual, Relation::LessEqual, Relation::LessEqual}, Vector{{0, 0, 1}});
  const auto sol = solve(lp);
  REQUIRE(sol.status == Status::Optimal);
  CHECK(sol.objective_value == doctest::Approx(-0.05));
  CHECK(sol.objective_value == doctest::Approx(oracle::enumerate_vertices(lp).value));
  CHECK(sol.iterations < 100);
}

TEST_CASE("lp: trace output lists pivots") {
  std::ostringstream trace;
  SimplexOptions options;
  options.trace = &trace;
  Matrix a(1, 2);
  a << 1, 1;
  solve(LinearProgram(Vector::Constant(2, -1.0), a, {Relation::LessEqual}, Vector::Constant(1, 1.0)), options);
  CHECK_FALSE(trace.str().empty());
}

TEST_CASE("lp: random programs match vertex enumeration") {
  std::mt19937_64 rng(20240601);
  std::uniform_int_distribution<int> dims(1, 6);
  std::uniform_real_distribution<double> coef(-5.0, 5.0);
  std::uniform_int_distribution<int> relation(0, 2);
  int optimal = 0;
  int infeasible = 0;
  for (int trial = 0; trial < 400; ++trial) {
    const int n = dims(rng);
    const int m = dims(rng);
    Matrix a(m, n);
    Vector b(m);
    std::vector<Relation> rel;
    for (int i = 0; i < m; ++i) {
      for (int j = 0; j < n; ++j) a(i, j) = std::round(coef(rng) * 4) / 4;
      b[i] = std::round(coef(rng) * 4) / 4;
      rel.push_back(static_cast<Relation>(relation(rng)));
    }
    // Keep the feasible set bounded so the optimum sits at a vertex.
    a.row(m - 1).setOnes();
    b[m - 1] = 10.0;
    rel[static_cast<std::size_t>(m) - 1] = Relation::LessEqual;
    Vector c(n);
    for (int j = 0; j < n; ++j) c[j] = coef(rng);
    const LinearProgram lp(c, a, rel, b);
    const auto expected = oracle::enumerate_vertices(lp);
    const auto sol = solve(lp);
    CAPTURE(trial);
    if (!expected.feasible) {
      CHECK(sol.status == Status::Infeasible);
      ++infeasible;
      continue;
    }
    REQUIRE(sol.status == Status::Optimal);
    CHECK(std::abs(sol.objective_value - expected.value) < 1e-7);
    CHECK(lp.max_violation(sol.x) <= kFeasibilityTol);
    CHECK(std::abs(sol.objective_value - c.dot(sol.x)) < 1e-9);
    CHECK(sol.iterations < 1000);
    ++optimal;
  }
  CHECK(optimal > 100);
  CHECK(infeasible > 10);
}
