#pragma once

#include "ecoprod/common.hpp"

#include <optional>
#include <ostream>
#include <vector>

namespace ecoprod::lp {

/// Absolute tolerance for constraint and bound satisfaction of a returned point.
inline constexpr double kFeasibilityTol = 1e-8;
/// Entries of magnitude below this are never used as pivots.
inline constexpr double kPivotTol = 1e-10;

enum class Relation { LessEqual, GreaterEqual, Equal };

enum class Status { Optimal, Infeasible, Unbounded, SolverFailure };

const char* to_string(Status status);

class LpError : public Error {
 public:
  using Error::Error;
};

/// Dense LP: minimize c.x subject to A x (rel) b, lower <= x <= upper.
/// Lower bounds default to 0 and may be -infinity (free variable); upper
/// bounds are optional. Construction validates dimensions and finiteness.
class LinearProgram {
 public:
  LinearProgram(Vector objective, Matrix constraints, std::vector<Relation> relations,
                Vector rhs);
  LinearProgram(Vector objective, Matrix constraints, std::vector<Relation> relations,
                Vector rhs, Vector lower, std::vector<std::optional<double>> upper);

  const Vector& objective() const { return objective_; }
  const Matrix& constraints() const { return constraints_; }
  const std::vector<Relation>& relations() const { return relations_; }
  const Vector& rhs() const { return rhs_; }
  const Vector& lower() const { return lower_; }
  const std::vector<std::optional<double>>& upper() const { return upper_; }

  Eigen::Index num_variables() const { return objective_.size(); }
  Eigen::Index num_constraints() const { return constraints_.rows(); }

  /// Largest violation of any constraint or bound at x (0 when feasible).
  double max_violation(const Vector& x) const;

 private:
  Vector objective_;
  Matrix constraints_;
  std::vector<Relation> relations_;
  Vector rhs_;
  Vector lower_;
  std::vector<std::optional<double>> upper_;
};

struct Solution {
  Status status = Status::SolverFailure;
  Vector x;
  double objective_value = 0.0;
  int iterations = 0;
};

struct SimplexOptions {
  int max_iterations = 50000;
  /// When set, every pivot is dumped here (CLI verbosity flag).
  std::ostream* trace = nullptr;
};

/// Two-phase dense tableau simplex with Bland's rule.
Solution solve(const LinearProgram& program, const SimplexOptions& options = {});

}  // namespace ecoprod::lp
