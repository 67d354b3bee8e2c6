#include "ecoprod/lp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace ecoprod::lp {

const char* to_string(Status status) {
  switch (status) {
    case Status::Optimal:
      return "optimal";
    case Status::Infeasible:
      return "infeasible";
    case Status::Unbounded:
      return "unbounded";
    case Status::SolverFailure:
      return "solver-failure";
  }
  return "unknown";
}

LinearProgram::LinearProgram(Vector objective, Matrix constraints,
                             std::vector<Relation> relations, Vector rhs)
    : LinearProgram(objective, std::move(constraints), std::move(relations), std::move(rhs),
                    Vector::Zero(objective.size()),
                    std::vector<std::optional<double>>(static_cast<std::size_t>(objective.size()))) {}

LinearProgram::LinearProgram(Vector objective, Matrix constraints,
                             std::vector<Relation> relations, Vector rhs, Vector lower,
                             std::vector<std::optional<double>> upper)
    : objective_(std::move(objective)),
      constraints_(std::move(constraints)),
      relations_(std::move(relations)),
      rhs_(std::move(rhs)),
      lower_(std::move(lower)),
      upper_(std::move(upper)) {
  const auto n = objective_.size();
  const auto m = constraints_.rows();
  if (m > 0 && constraints_.cols() != n) {
    throw LpError("constraint matrix has " + std::to_string(constraints_.cols()) +
                  " columns, objective has " + std::to_string(n));
  }
  if (static_cast<Eigen::Index>(relations_.size()) != m || rhs_.size() != m) {
    throw LpError("constraint rows, relations and right-hand side disagree in length");
  }
  if (lower_.size() != n || static_cast<Eigen::Index>(upper_.size()) != n) {
    throw LpError("bound vectors must have one entry per variable");
  }
  if (!objective_.allFinite() || !constraints_.allFinite() || !rhs_.allFinite()) {
    throw LpError("linear program contains non-finite coefficients");
  }
  for (Eigen::Index j = 0; j < n; ++j) {
    if (std::isnan(lower_[j]) || lower_[j] == std::numeric_limits<double>::infinity()) {
      throw LpError("invalid lower bound for variable " + std::to_string(j));
    }
    const auto& u = upper_[static_cast<std::size_t>(j)];
    if (u && (!std::isfinite(*u))) {
      throw LpError("upper bound for variable " + std::to_string(j) + " must be finite");
    }
  }
}

double LinearProgram::max_violation(const Vector& x) const {
  double worst = 0.0;
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    worst = std::max(worst, lower_[j] - x[j]);
    if (const auto& u = upper_[static_cast<std::size_t>(j)]) {
      worst = std::max(worst, x[j] - *u);
    }
  }
  if (constraints_.rows() == 0) {
    return worst;
  }
  const Vector ax = constraints_ * x;
  for (Eigen::Index i = 0; i < ax.size(); ++i) {
    const double diff = ax[i] - rhs_[i];
    switch (relations_[static_cast<std::size_t>(i)]) {
      case Relation::LessEqual:
        worst = std::max(worst, diff);
        break;
      case Relation::GreaterEqual:
        worst = std::max(worst, -diff);
        break;
      case Relation::Equal:
        worst = std::max(worst, std::abs(diff));
        break;
    }
  }
  return worst;
}

namespace {

enum class ColumnKind { Structural, Slack, Artificial };

// How an original variable maps onto non-negative tableau columns.
struct VariableMap {
  int positive = -1;  // column for x - lower (or x+ when free)
  int negative = -1;  // column for x- when the variable is free
};

class Tableau {
 public:
  Tableau(const LinearProgram& program, const SimplexOptions& options)
      : program_(program), options_(options) {
    build();
  }

  Solution run() {
    Solution result;
    result.x = Vector::Zero(program_.num_variables());

    if (num_artificial_ > 0) {
      load_phase_one_costs();
      const Status phase_one = iterate(1);
      if (phase_one == Status::SolverFailure) {
        result.status = phase_one;
        result.iterations = iterations_;
        return result;
      }
      const double infeasibility = -table_(rows_, rhs_col_);
      const double scale = std::max(1.0, rhs_scale_);
      if (infeasibility > kFeasibilityTol * scale) {
        result.status = Status::Infeasible;
        result.iterations = iterations_;
        return result;
      }
      drive_out_artificials();
    }

    load_phase_two_costs();
    const Status phase_two = iterate(2);
    result.iterations = iterations_;
    if (phase_two != Status::Optimal) {
      result.status = phase_two;
      return result;
    }

    result.x = extract();
    result.objective_value = program_.objective().dot(result.x);
    if (program_.max_violation(result.x) > kFeasibilityTol) {
      result.status = Status::SolverFailure;
      return result;
    }
    result.status = Status::Optimal;
    return result;
  }

 private:
  void build() {
    const auto n = program_.num_variables();
    const auto& lower = program_.lower();

    // Structural columns.
    vars_.resize(static_cast<std::size_t>(n));
    int col = 0;
    for (Eigen::Index j = 0; j < n; ++j) {
      auto& v = vars_[static_cast<std::size_t>(j)];
      v.positive = col++;
      if (std::isinf(lower[j])) {
        v.negative = col++;
      }
    }
    const int structural = col;

    // Rows: original constraints with the lower-bound shift, plus upper bounds.
    struct Row {
      std::vector<double> coef;
      Relation rel;
      double rhs;
    };
    std::vector<Row> rows;
    const auto& a = program_.constraints();
    for (Eigen::Index i = 0; i < program_.num_constraints(); ++i) {
      Row row{std::vector<double>(static_cast<std::size_t>(structural), 0.0),
              program_.relations()[static_cast<std::size_t>(i)], program_.rhs()[i]};
      for (Eigen::Index j = 0; j < n; ++j) {
        const auto& v = vars_[static_cast<std::size_t>(j)];
        row.coef[static_cast<std::size_t>(v.positive)] = a(i, j);
        if (v.negative >= 0) {
          row.coef[static_cast<std::size_t>(v.negative)] = -a(i, j);
        } else {
          row.rhs -= a(i, j) * lower[j];
        }
      }
      rows.push_back(std::move(row));
    }
    for (Eigen::Index j = 0; j < n; ++j) {
      const auto& u = program_.upper()[static_cast<std::size_t>(j)];
      if (!u) {
        continue;
      }
      const auto& v = vars_[static_cast<std::size_t>(j)];
      Row row{std::vector<double>(static_cast<std::size_t>(structural), 0.0),
              Relation::LessEqual, *u};
      row.coef[static_cast<std::size_t>(v.positive)] = 1.0;
      if (v.negative >= 0) {
        row.coef[static_cast<std::size_t>(v.negative)] = -1.0;
      } else {
        row.rhs -= lower[j];
      }
      rows.push_back(std::move(row));
    }

    // Non-negative right-hand sides.
    for (auto& row : rows) {
      if (row.rhs < 0.0) {
        for (auto& c : row.coef) {
          c = -c;
        }
        row.rhs = -row.rhs;
        if (row.rel == Relation::LessEqual) {
          row.rel = Relation::GreaterEqual;
        } else if (row.rel == Relation::GreaterEqual) {
          row.rel = Relation::LessEqual;
        }
      }
      rhs_scale_ = std::max(rhs_scale_, row.rhs);
    }

    rows_ = static_cast<int>(rows.size());
    int slacks = 0;
    for (const auto& row : rows) {
      if (row.rel != Relation::Equal) {
        ++slacks;
      }
      if (row.rel != Relation::LessEqual) {
        ++num_artificial_;
      }
    }
    cols_ = structural + slacks + num_artificial_;
    rhs_col_ = cols_;
    kinds_.assign(static_cast<std::size_t>(cols_), ColumnKind::Structural);
    table_ = Matrix::Zero(rows_ + 1, cols_ + 1);
    basis_.assign(static_cast<std::size_t>(rows_), -1);

    int slack_col = structural;
    int art_col = structural + slacks;
    for (int i = 0; i < rows_; ++i) {
      const auto& row = rows[static_cast<std::size_t>(i)];
      for (int j = 0; j < structural; ++j) {
        table_(i, j) = row.coef[static_cast<std::size_t>(j)];
      }
      table_(i, rhs_col_) = row.rhs;
      if (row.rel == Relation::LessEqual) {
        kinds_[static_cast<std::size_t>(slack_col)] = ColumnKind::Slack;
        table_(i, slack_col) = 1.0;
        basis_[static_cast<std::size_t>(i)] = slack_col++;
      } else {
        if (row.rel == Relation::GreaterEqual) {
          kinds_[static_cast<std::size_t>(slack_col)] = ColumnKind::Slack;
          table_(i, slack_col++) = -1.0;
        }
        kinds_[static_cast<std::size_t>(art_col)] = ColumnKind::Artificial;
        table_(i, art_col) = 1.0;
        basis_[static_cast<std::size_t>(i)] = art_col++;
      }
    }
  }

  // Cost row holds reduced costs; the rhs cell holds -objective.
  void load_costs(const std::vector<double>& cost) {
    table_.row(rows_).setZero();
    for (int j = 0; j < cols_; ++j) {
      table_(rows_, j) = cost[static_cast<std::size_t>(j)];
    }
    for (int i = 0; i < rows_; ++i) {
      const double cb = cost[static_cast<std::size_t>(basis_[static_cast<std::size_t>(i)])];
      if (cb != 0.0) {
        table_.row(rows_) -= cb * table_.row(i);
      }
    }
  }

  void load_phase_one_costs() {
    std::vector<double> cost(static_cast<std::size_t>(cols_), 0.0);
    for (int j = 0; j < cols_; ++j) {
      if (kinds_[static_cast<std::size_t>(j)] == ColumnKind::Artificial) {
        cost[static_cast<std::size_t>(j)] = 1.0;
      }
    }
    load_costs(cost);
  }

  void load_phase_two_costs() {
    std::vector<double> cost(static_cast<std::size_t>(cols_), 0.0);
    const auto& c = program_.objective();
    for (std::size_t j = 0; j < vars_.size(); ++j) {
      cost[static_cast<std::size_t>(vars_[j].positive)] = c[static_cast<Eigen::Index>(j)];
      if (vars_[j].negative >= 0) {
        cost[static_cast<std::size_t>(vars_[j].negative)] = -c[static_cast<Eigen::Index>(j)];
      }
    }
    load_costs(cost);
    allow_artificial_ = false;
  }

  bool eligible(int j) const {
    return allow_artificial_ || kinds_[static_cast<std::size_t>(j)] != ColumnKind::Artificial;
  }

  Status iterate(int phase) {
    while (true) {
      // Bland: lowest-index column with negative reduced cost.
      int entering = -1;
      for (int j = 0; j < cols_; ++j) {
        if (eligible(j) && table_(rows_, j) < -kPivotTol) {
          entering = j;
          break;
        }
      }
      if (entering < 0) {
        return Status::Optimal;
      }
      // Ratio test; ties go to the lowest basic index.
      int leaving = -1;
      double best = std::numeric_limits<double>::infinity();
      for (int i = 0; i < rows_; ++i) {
        const double a = table_(i, entering);
        if (a <= kPivotTol) {
          continue;
        }
        const double ratio = std::max(0.0, table_(i, rhs_col_)) / a;
        if (leaving < 0) {
          best = ratio;
          leaving = i;
          continue;
        }
        const double slack = 1e-12 * std::max(1.0, std::abs(best));
        if (ratio < best - slack) {
          best = ratio;
          leaving = i;
        } else if (ratio <= best + slack &&
                   basis_[static_cast<std::size_t>(i)] < basis_[static_cast<std::size_t>(leaving)]) {
          best = std::min(best, ratio);
          leaving = i;
        }
      }
      if (leaving < 0) {
        return Status::Unbounded;
      }
      if (++iterations_ > options_.max_iterations) {
        return Status::SolverFailure;
      }
      if (options_.trace) {
        *options_.trace << "phase " << phase << " iter " << iterations_ << ": enter " << entering
                        << " leave " << basis_[static_cast<std::size_t>(leaving)] << " objective "
                        << -table_(rows_, rhs_col_) << '\n';
      }
      pivot(leaving, entering);
      if (!table_.allFinite()) {
        return Status::SolverFailure;
      }
    }
  }

  void pivot(int row, int col) {
    table_.row(row) /= table_(row, col);
    for (int i = 0; i <= rows_; ++i) {
      if (i == row) {
        continue;
      }
      const double factor = table_(i, col);
      if (factor != 0.0) {
        table_.row(i) -= factor * table_.row(row);
        table_(i, col) = 0.0;
      }
    }
    basis_[static_cast<std::size_t>(row)] = col;
  }

  // Artificials still basic after phase one sit at zero; pivot them out, or
  // drop the row when it is a linear combination of the others.
  void drive_out_artificials() {
    for (int i = 0; i < rows_; ++i) {
      const int b = basis_[static_cast<std::size_t>(i)];
      if (kinds_[static_cast<std::size_t>(b)] != ColumnKind::Artificial) {
        continue;
      }
      int replacement = -1;
      for (int j = 0; j < cols_; ++j) {
        if (kinds_[static_cast<std::size_t>(j)] != ColumnKind::Artificial &&
            std::abs(table_(i, j)) > kPivotTol) {
          replacement = j;
          break;
        }
      }
      if (replacement >= 0) {
        if (options_.trace) {
          *options_.trace << "drive out artificial " << b << " via column " << replacement << '\n';
        }
        pivot(i, replacement);
      } else {
        remove_row(i);
        --i;
      }
    }
  }

  void remove_row(int row) {
    Matrix reduced(rows_, cols_ + 1);
    int r = 0;
    for (int i = 0; i <= rows_; ++i) {
      if (i != row) {
        reduced.row(r++) = table_.row(i);
      }
    }
    table_ = std::move(reduced);
    basis_.erase(basis_.begin() + row);
    --rows_;
  }

  Vector extract() const {
    Vector values = Vector::Zero(cols_);
    for (int i = 0; i < rows_; ++i) {
      values[basis_[static_cast<std::size_t>(i)]] = std::max(0.0, table_(i, rhs_col_));
    }
    const auto& lower = program_.lower();
    Vector x(program_.num_variables());
    for (std::size_t j = 0; j < vars_.size(); ++j) {
      const auto idx = static_cast<Eigen::Index>(j);
      const auto& v = vars_[j];
      if (v.negative >= 0) {
        x[idx] = values[v.positive] - values[v.negative];
      } else {
        x[idx] = lower[idx] + values[v.positive];
      }
    }
    return x;
  }

  const LinearProgram& program_;
  const SimplexOptions& options_;
  std::vector<VariableMap> vars_;
  std::vector<ColumnKind> kinds_;
  std::vector<int> basis_;
  Matrix table_;
  int rows_ = 0;
  int cols_ = 0;
  int rhs_col_ = 0;
  int num_artificial_ = 0;
  double rhs_scale_ = 0.0;
  int iterations_ = 0;
  bool allow_artificial_ = true;
};

}  // namespace

Solution solve(const LinearProgram& program, const SimplexOptions& options) {
  Tableau tableau(program, options);
  return tableau.run();
}

}  // namespace ecoprod::lp
