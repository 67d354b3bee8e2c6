#pragma once

#include "ecoprod/common.hpp"
#include "ecoprod/dataset.hpp"
#include "ecoprod/lp.hpp"

#include <vector>

namespace ecoprod::dea {

enum class ReturnsToScale { CRS, VRS };

const char* to_string(ReturnsToScale rts);

class DeaError : public Error {
 public:
  using Error::Error;
};

/// Inputs are m x n (row i = input i, column j = unit j); outputs are s x n.
struct Panel {
  Matrix inputs;
  Matrix outputs;
  std::vector<std::int64_t> unit_ids;

  Eigen::Index units() const { return inputs.cols(); }

  /// Throws DeaError when a panel invariant is violated.
  void validate() const;

  /// Environmental inputs against GDP, one unit per province.
  static Panel from_provinces(const std::vector<ProvinceRecord>& provinces);
};

/// Orientation is always input-oriented.
struct Options {
  ReturnsToScale rts = ReturnsToScale::VRS;
  lp::SimplexOptions simplex;
};

struct Scores {
  Vector theta;   // one radial input contraction factor per unit, in (0, 1]
  Matrix lambda;  // row o = intensity weights of the reference set for unit o
};

/// Scores that differ from 1 by less than this are snapped to 1.
inline constexpr double kFrontierTol = 1e-9;

/// For each unit o solves
///   min theta  s.t.  sum_j lambda_j x_ij <= theta x_io   (every input i)
///                    sum_j lambda_j y_rj >= y_ro         (every output r)
///                    sum_j lambda_j = 1                  (VRS only)
///                    lambda >= 0
Scores scores(const Panel& panel, const Options& options = {});

/// Lower-of-the-two-middles median of the sorted values.
double lower_median(const Vector& values);

/// theta > median -> High, theta <= median -> Low. Throws DeaError when the
/// rule puts every unit in the same group.
std::vector<EcoGroup> split_by_median(const Vector& theta);
inline std::vector<EcoGroup> split_by_median(const Scores& s) { return split_by_median(s.theta); }

}  // namespace ecoprod::dea
