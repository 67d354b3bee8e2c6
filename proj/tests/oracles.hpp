#pragma once

// Independent reference implementations used by the tests. None of them call
// into the library code they check.

#include "ecoprod/autodiff.hpp"
#include "ecoprod/dea.hpp"
#include "ecoprod/gbm.hpp"
#include "ecoprod/lp.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <vector>

namespace oracle {

using ecoprod::Matrix;
using ecoprod::Vector;

// ---------------------------------------------------------------------------
// LP by vertex enumeration: minimise c.x over {A x (rel) b, x >= 0}. Every
// choice of n active constraints (equalities always active) is solved as a
// square system; the best feasible vertex wins. Only meaningful when the
// optimum is attained at a vertex, e.g. on bounded feasible sets.

struct LpResult {
  bool feasible = false;
  double value = 0.0;
  Vector x;
};

inline LpResult enumerate_vertices(const ecoprod::lp::LinearProgram& lp, double tol = 1e-9) {
  using ecoprod::lp::Relation;
  const auto n = lp.num_variables();
  const auto m = lp.num_constraints();
  // Rows 0..m-1 are the program's constraints, m..m+n-1 the bounds x_j >= 0.
  const Eigen::Index total = m + n;
  Matrix rows = Matrix::Zero(total, n);
  Vector rhs = Vector::Zero(total);
  rows.topRows(m) = lp.constraints();
  rhs.head(m) = lp.rhs();
  rows.bottomRows(n).setIdentity();

  std::vector<Eigen::Index> forced;
  std::vector<Eigen::Index> optional_rows;
  for (Eigen::Index i = 0; i < total; ++i) {
    if (i < m && lp.relations()[static_cast<std::size_t>(i)] == Relation::Equal) {
      forced.push_back(i);
    } else {
      optional_rows.push_back(i);
    }
  }
  LpResult best;
  const auto need = n - static_cast<Eigen::Index>(forced.size());
  if (need < 0 || need > static_cast<Eigen::Index>(optional_rows.size())) {
    return best;
  }
  auto feasible = [&](const Vector& x) {
    for (Eigen::Index j = 0; j < n; ++j) {
      if (x[j] < -tol) return false;
    }
    const Vector ax = lp.constraints() * x;
    for (Eigen::Index i = 0; i < m; ++i) {
      const double scale = 1.0 + std::abs(lp.rhs()[i]);
      switch (lp.relations()[static_cast<std::size_t>(i)]) {
        case Relation::LessEqual:
          if (ax[i] > lp.rhs()[i] + tol * scale) return false;
          break;
        case Relation::GreaterEqual:
          if (ax[i] < lp.rhs()[i] - tol * scale) return false;
          break;
        case Relation::Equal:
          if (std::abs(ax[i] - lp.rhs()[i]) > tol * scale) return false;
          break;
      }
    }
    return true;
  };
  std::vector<bool> pick(optional_rows.size(), false);
  std::fill(pick.begin(), pick.begin() + need, true);
  do {
    std::vector<Eigen::Index> active = forced;
    for (std::size_t i = 0; i < pick.size(); ++i) {
      if (pick[i]) active.push_back(optional_rows[i]);
    }
    Matrix a(n, n);
    Vector b(n);
    for (Eigen::Index r = 0; r < n; ++r) {
      a.row(r) = rows.row(active[static_cast<std::size_t>(r)]);
      b[r] = rhs[active[static_cast<std::size_t>(r)]];
    }
    Eigen::FullPivLU<Matrix> lu(a);
    if (lu.rank() < n) continue;
    const Vector x = lu.solve(b);
    if (!feasible(x)) continue;
    const double value = lp.objective().dot(x);
    if (!best.feasible || value < best.value) {
      best = {true, value, x};
    }
  } while (std::prev_permutation(pick.begin(), pick.end()));
  return best;
}

/// Input-oriented DEA score of unit o, built directly as an LP and solved by
/// vertex enumeration.
inline double dea_score(const Matrix& inputs, const Matrix& outputs, Eigen::Index o, bool vrs) {
  using ecoprod::lp::Relation;
  const auto n = inputs.cols();
  const auto m = inputs.rows();
  const auto s = outputs.rows();
  const auto rows = m + s + (vrs ? 1 : 0);
  Matrix a = Matrix::Zero(rows, n + 1);
  Vector b = Vector::Zero(rows);
  std::vector<Relation> rel;
  for (Eigen::Index i = 0; i < m; ++i) {
    a(i, 0) = -inputs(i, o);
    for (Eigen::Index j = 0; j < n; ++j) a(i, j + 1) = inputs(i, j);
    rel.push_back(Relation::LessEqual);
  }
  for (Eigen::Index r = 0; r < s; ++r) {
    for (Eigen::Index j = 0; j < n; ++j) a(m + r, j + 1) = outputs(r, j);
    b[m + r] = outputs(r, o);
    rel.push_back(Relation::GreaterEqual);
  }
  if (vrs) {
    for (Eigen::Index j = 0; j < n; ++j) a(m + s, j + 1) = 1.0;
    b[m + s] = 1.0;
    rel.push_back(Relation::Equal);
  }
  Vector c = Vector::Zero(n + 1);
  c[0] = 1.0;
  const ecoprod::lp::LinearProgram lp(c, a, rel, b);
  return enumerate_vertices(lp).value;
}

// ---------------------------------------------------------------------------
// Exact Shapley values of the path-dependent tree value function by subset
// enumeration: v(S) follows x on features in S and averages both children,
// weighted by cover, on the others.

inline double tree_expectation(const ecoprod::gbm::Tree& tree, int node, const std::vector<double>& x,
                               unsigned mask) {
  const auto& nd = tree.nodes[static_cast<std::size_t>(node)];
  if (nd.is_leaf()) return nd.weight;
  if (mask & (1u << nd.feature)) {
    return tree_expectation(tree, x[static_cast<std::size_t>(nd.feature)] < nd.threshold ? nd.left : nd.right,
                            x, mask);
  }
  const auto& l = tree.nodes[static_cast<std::size_t>(nd.left)];
  const auto& r = tree.nodes[static_cast<std::size_t>(nd.right)];
  return (l.cover * tree_expectation(tree, nd.left, x, mask) +
          r.cover * tree_expectation(tree, nd.right, x, mask)) /
         (l.cover + r.cover);
}

inline double model_value(const ecoprod::gbm::BoostedModel& model, const std::vector<double>& x, unsigned mask) {
  double v = model.base_score;
  for (const auto& t : model.trees) v += model.learning_rate * tree_expectation(t, 0, x, mask);
  return v;
}

inline std::vector<double> brute_shapley(const ecoprod::gbm::BoostedModel& model, const std::vector<double>& x) {
  const int f = static_cast<int>(x.size());
  std::vector<double> fact(static_cast<std::size_t>(f) + 1, 1.0);
  for (int i = 1; i <= f; ++i) fact[static_cast<std::size_t>(i)] = fact[static_cast<std::size_t>(i) - 1] * i;
  std::vector<double> phi(static_cast<std::size_t>(f), 0.0);
  for (int i = 0; i < f; ++i) {
    for (unsigned s = 0; s < (1u << f); ++s) {
      if (s & (1u << i)) continue;
      const int size = __builtin_popcount(s);
      const double w = fact[static_cast<std::size_t>(size)] * fact[static_cast<std::size_t>(f - size - 1)] /
                       fact[static_cast<std::size_t>(f)];
      phi[static_cast<std::size_t>(i)] += w * (model_value(model, x, s | (1u << i)) - model_value(model, x, s));
    }
  }
  return phi;
}

// ---------------------------------------------------------------------------
// Adjusted Rand index.

inline double adjusted_rand(const std::vector<int>& a, const std::vector<int>& b) {
  std::map<std::pair<int, int>, double> joint;
  std::map<int, double> ra;
  std::map<int, double> rb;
  for (std::size_t i = 0; i < a.size(); ++i) {
    joint[{a[i], b[i]}] += 1;
    ra[a[i]] += 1;
    rb[b[i]] += 1;
  }
  auto c2 = [](double v) { return v * (v - 1) / 2; };
  double sj = 0, sa = 0, sb = 0;
  for (const auto& [k, v] : joint) sj += c2(v);
  for (const auto& [k, v] : ra) sa += c2(v);
  for (const auto& [k, v] : rb) sb += c2(v);
  const double expected = sa * sb / c2(static_cast<double>(a.size()));
  const double max_index = 0.5 * (sa + sb);
  return max_index == expected ? 1.0 : (sj - expected) / (max_index - expected);
}

// ---------------------------------------------------------------------------
// Central finite differences against reverse-mode gradients.

/// Relative error with a floor on the denominator so that gradients near zero
/// are compared absolutely.
inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-3});
}

/// `loss` builds a scalar on a fresh tape from the parameters. Returns the
/// largest relative error over every parameter entry.
inline double gradient_check(const std::vector<ecoprod::ad::ParameterPtr>& params,
                             const std::function<ecoprod::ad::Var(ecoprod::ad::Tape&)>& loss,
                             double h = 1e-5) {
  for (const auto& p : params) p->grad.setZero();
  {
    ecoprod::ad::Tape tape;
    tape.backward(loss(tape));
  }
  auto eval = [&] {
    ecoprod::ad::Tape tape;
    return loss(tape).scalar();
  };
  double worst = 0.0;
  for (const auto& p : params) {
    for (Eigen::Index k = 0; k < p->value.size(); ++k) {
      const double keep = p->value.data()[k];
      p->value.data()[k] = keep + h;
      const double up = eval();
      p->value.data()[k] = keep - h;
      const double down = eval();
      p->value.data()[k] = keep;
      worst = std::max(worst, relative_error(p->grad.data()[k], (up - down) / (2 * h)));
    }
  }
  return worst;
}

}  // namespace oracle
