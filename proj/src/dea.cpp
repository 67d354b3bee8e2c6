#include "ecoprod/dea.hpp"

#include <algorithm>
#include <cmath>

namespace ecoprod::dea {

const char* to_string(ReturnsToScale rts) { return rts == ReturnsToScale::CRS ? "crs" : "vrs"; }

void Panel::validate() const {
  const auto n = inputs.cols();
  if (n < 1) {
    throw DeaError("DEA panel needs at least one unit");
  }
  if (inputs.rows() < 1 || outputs.rows() < 1) {
    throw DeaError("DEA panel needs at least one input and one output");
  }
  if (outputs.cols() != n) {
    throw DeaError("input and output matrices disagree on the number of units");
  }
  if (!unit_ids.empty() && static_cast<Eigen::Index>(unit_ids.size()) != n) {
    throw DeaError("unit id list does not match the number of units");
  }
  if (!inputs.allFinite() || !outputs.allFinite()) {
    throw DeaError("DEA panel contains non-finite values");
  }
  for (Eigen::Index j = 0; j < n; ++j) {
    const std::string who =
        unit_ids.empty() ? "unit " + std::to_string(j) : "unit " + std::to_string(unit_ids[static_cast<std::size_t>(j)]);
    if ((inputs.col(j).array() < 0.0).any()) {
      throw DeaError(who + ": negative input");
    }
    if (!(inputs.col(j).array() > 0.0).any()) {
      throw DeaError(who + ": degenerate unit, every input is zero");
    }
    if (!(outputs.col(j).array() > 0.0).all()) {
      throw DeaError(who + ": outputs must be strictly positive");
    }
  }
}

Panel Panel::from_provinces(const std::vector<ProvinceRecord>& provinces) {
  Panel panel;
  if (provinces.empty()) {
    throw DeaError("no provinces to score");
  }
  const auto m = static_cast<Eigen::Index>(provinces.front().env_inputs.size());
  const auto n = static_cast<Eigen::Index>(provinces.size());
  panel.inputs.resize(m, n);
  panel.outputs.resize(1, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    const auto& p = provinces[static_cast<std::size_t>(j)];
    if (static_cast<Eigen::Index>(p.env_inputs.size()) != m) {
      throw DeaError("province " + std::to_string(p.id) + " has a different input count");
    }
    for (Eigen::Index i = 0; i < m; ++i) {
      panel.inputs(i, j) = p.env_inputs[static_cast<std::size_t>(i)];
    }
    panel.outputs(0, j) = p.gdp_output;
    panel.unit_ids.push_back(p.id);
  }
  return panel;
}

Scores scores(const Panel& panel, const Options& options) {
  panel.validate();
  const auto n = panel.units();
  const auto m = panel.inputs.rows();
  const auto s = panel.outputs.rows();
  const bool vrs = options.rts == ReturnsToScale::VRS;
  const auto rows = m + s + (vrs ? 1 : 0);

  Scores result;
  result.theta.resize(n);
  result.lambda = Matrix::Zero(n, n);

  // Variables: [theta, lambda_1 .. lambda_n].
  Vector objective = Vector::Zero(n + 1);
  objective[0] = 1.0;
  std::vector<lp::Relation> relations;
  relations.insert(relations.end(), static_cast<std::size_t>(m), lp::Relation::LessEqual);
  relations.insert(relations.end(), static_cast<std::size_t>(s), lp::Relation::GreaterEqual);
  if (vrs) {
    relations.push_back(lp::Relation::Equal);
  }

  for (Eigen::Index o = 0; o < n; ++o) {
    const std::string who = panel.unit_ids.empty()
                                ? "unit " + std::to_string(o)
                                : "unit " + std::to_string(panel.unit_ids[static_cast<std::size_t>(o)]);
    Matrix a = Matrix::Zero(rows, n + 1);
    Vector b = Vector::Zero(rows);
    a.block(0, 1, m, n) = panel.inputs;
    a.block(0, 0, m, 1) = -panel.inputs.col(o);
    a.block(m, 1, s, n) = panel.outputs;
    b.segment(m, s) = panel.outputs.col(o);
    if (vrs) {
      a.block(m + s, 1, 1, n).setOnes();
      b[m + s] = 1.0;
    }
    const lp::LinearProgram program(objective, std::move(a), relations, std::move(b));
    const auto sol = lp::solve(program, options.simplex);
    if (sol.status != lp::Status::Optimal) {
      throw DeaError(who + ": LP solver returned " + lp::to_string(sol.status));
    }
    double theta = sol.x[0];
    if (!(theta > kFrontierTol)) {
      throw DeaError(who + ": degenerate unit, efficiency score collapsed to zero");
    }
    if (theta > 1.0 + kFrontierTol) {
      throw DeaError(who + ": efficiency score " + std::to_string(theta) + " exceeds 1");
    }
    if (theta > 1.0 - kFrontierTol) {
      theta = 1.0;
    }
    result.theta[o] = theta;
    result.lambda.row(o) = sol.x.tail(n).transpose();
  }
  return result;
}

double lower_median(const Vector& values) {
  if (values.size() == 0) {
    throw DeaError("median of an empty vector");
  }
  std::vector<double> sorted(values.data(), values.data() + values.size());
  std::sort(sorted.begin(), sorted.end());
  return sorted[(sorted.size() - 1) / 2];
}

std::vector<EcoGroup> split_by_median(const Vector& theta) {
  if (theta.size() < 2) {
    throw DeaError("median split needs at least two units");
  }
  const double median = lower_median(theta);
  std::vector<EcoGroup> groups;
  groups.reserve(static_cast<std::size_t>(theta.size()));
  bool any_high = false;
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    const bool high = theta[i] > median;
    any_high = any_high || high;
    groups.push_back(high ? EcoGroup::High : EcoGroup::Low);
  }
  if (!any_high) {
    throw DeaError("no median split exists: no score lies above the median");
  }
  return groups;
}

}  // namespace ecoprod::dea
