#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>

namespace ecoprod {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Rng = std::mt19937_64;

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// SplitMix64 finaliser; used to derive independent seeds from a parent seed.
std::uint64_t splitmix64(std::uint64_t x);

/// Sub-seed for a numbered stream (pipeline stage, bootstrap replicate, ...).
/// derive_seed(s, i) = splitmix64(s + 0x9E3779B97F4A7C15 * (i + 1)).
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

/// Parallelism cap read from ECOPROD_THREADS (default: hardware concurrency).
int thread_count();

/// Runs fn(i) for i in [0, n) over up to thread_count() threads. Each index is
/// executed exactly once; callers write results into per-index slots so the
/// outcome does not depend on scheduling.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

void log_warning(const std::string& message);

/// While alive, log_warning is a no-op on the constructing thread. Used inside
/// bootstrap replicates, whose warnings repeat the full-sample ones.
class QuietWarnings {
 public:
  QuietWarnings();
  ~QuietWarnings();
  QuietWarnings(const QuietWarnings&) = delete;
  QuietWarnings& operator=(const QuietWarnings&) = delete;
};

inline double logistic(double v) {
  if (v >= 0.0) {
    return 1.0 / (1.0 + std::exp(-v));
  }
  const double e = std::exp(v);
  return e / (1.0 + e);
}

}  // namespace ecoprod
