#include "ecoprod/spectral.hpp"

#include <lapacke.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace ecoprod::spectral {

namespace {

Matrix squared_distances(const Matrix& points) {
  const Vector norms = points.rowwise().squaredNorm();
  Matrix d2 = -2.0 * points * points.transpose();
  d2.colwise() += norms;
  d2.rowwise() += norms.transpose();
  d2 = d2.cwiseMax(0.0);
  d2.diagonal().setZero();
  return d2;
}

// Eigenvector signs are arbitrary; fix them so the largest-magnitude entry is
// positive, which keeps downstream clustering reproducible.
void canonical_signs(Matrix& vectors) {
  for (Eigen::Index c = 0; c < vectors.cols(); ++c) {
    Eigen::Index arg = 0;
    vectors.col(c).cwiseAbs().maxCoeff(&arg);
    if (vectors(arg, c) < 0.0) {
      vectors.col(c) *= -1.0;
    }
  }
}

std::vector<int> assign(const Matrix& points, const Matrix& centroids, double& wcss) {
  const auto n = points.rows();
  std::vector<int> labels(static_cast<std::size_t>(n));
  wcss = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    double best = std::numeric_limits<double>::infinity();
    int arg = 0;
    for (Eigen::Index c = 0; c < centroids.rows(); ++c) {
      const double d = (points.row(i) - centroids.row(c)).squaredNorm();
      if (d < best) {
        best = d;
        arg = static_cast<int>(c);
      }
    }
    labels[static_cast<std::size_t>(i)] = arg;
    wcss += best;
  }
  return labels;
}

Matrix plus_plus_seeds(const Matrix& points, int k, Rng& rng) {
  const auto n = points.rows();
  Matrix centroids(k, points.cols());
  std::uniform_int_distribution<Eigen::Index> first(0, n - 1);
  std::vector<bool> chosen(static_cast<std::size_t>(n), false);
  Eigen::Index pick = first(rng);
  chosen[static_cast<std::size_t>(pick)] = true;
  centroids.row(0) = points.row(pick);
  Vector nearest = (points.rowwise() - centroids.row(0)).rowwise().squaredNorm();
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int c = 1; c < k; ++c) {
    const double total = nearest.sum();
    if (total > 0.0) {
      const double target = unit(rng) * total;
      double acc = 0.0;
      pick = n - 1;
      for (Eigen::Index i = 0; i < n; ++i) {
        acc += nearest[i];
        if (acc > target && nearest[i] > 0.0) {
          pick = i;
          break;
        }
      }
    } else {
      pick = 0;
      while (pick < n - 1 && chosen[static_cast<std::size_t>(pick)]) {
        ++pick;
      }
    }
    chosen[static_cast<std::size_t>(pick)] = true;
    centroids.row(c) = points.row(pick);
    nearest = nearest.cwiseMin((points.rowwise() - centroids.row(c)).rowwise().squaredNorm());
  }
  return centroids;
}

Matrix cluster_means(const Matrix& points, const std::vector<int>& labels, const Matrix& previous,
                     std::vector<int>& counts) {
  const auto k = previous.rows();
  Matrix sums = Matrix::Zero(k, points.cols());
  counts.assign(static_cast<std::size_t>(k), 0);
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    const int c = labels[static_cast<std::size_t>(i)];
    sums.row(c) += points.row(i);
    ++counts[static_cast<std::size_t>(c)];
  }
  for (Eigen::Index c = 0; c < k; ++c) {
    if (counts[static_cast<std::size_t>(c)] > 0) {
      sums.row(c) /= counts[static_cast<std::size_t>(c)];
    } else {
      sums.row(c) = previous.row(c);
    }
  }
  return sums;
}

ClusterAssignment lloyd(const Matrix& points, int k, Rng& rng) {
  ClusterAssignment out;
  out.centroids = plus_plus_seeds(points, k, rng);
  double wcss = 0.0;
  out.labels = assign(points, out.centroids, wcss);
  out.wcss_trace.push_back(wcss);
  std::vector<int> counts;
  for (int it = 1; it <= kMaxLloydIterations; ++it) {
    out.iterations = it;
    out.centroids = cluster_means(points, out.labels, out.centroids, counts);
    for (int c = 0; c < k; ++c) {
      if (counts[static_cast<std::size_t>(c)] > 0) {
        continue;
      }
      // Re-seed an empty cluster at the point farthest from its own centroid.
      Eigen::Index far = 0;
      double far_d = -1.0;
      for (Eigen::Index i = 0; i < points.rows(); ++i) {
        const double d =
            (points.row(i) - out.centroids.row(out.labels[static_cast<std::size_t>(i)])).squaredNorm();
        if (d > far_d) {
          far_d = d;
          far = i;
        }
      }
      out.centroids.row(c) = points.row(far);
    }
    auto labels = assign(points, out.centroids, wcss);
    out.wcss_trace.push_back(wcss);
    const bool converged = labels == out.labels;
    out.labels = std::move(labels);
    if (converged) {
      break;
    }
  }
  out.centroids = cluster_means(points, out.labels, out.centroids, counts);
  out.wcss = 0.0;
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    out.wcss += (points.row(i) - out.centroids.row(out.labels[static_cast<std::size_t>(i)])).squaredNorm();
  }
  return out;
}

}  // namespace

SimilarityMatrix similarity(const Matrix& embeddings) {
  const auto n = embeddings.rows();
  if (n < 2) {
    throw SpectralError("similarity needs at least two points");
  }
  if (!embeddings.allFinite()) {
    throw SpectralError("embeddings contain non-finite values");
  }
  const Matrix d2 = squared_distances(embeddings);
  std::vector<double> dist;
  dist.reserve(static_cast<std::size_t>(n * (n - 1) / 2));
  for (Eigen::Index j = 1; j < n; ++j) {
    for (Eigen::Index i = 0; i < j; ++i) {
      dist.push_back(std::sqrt(d2(i, j)));
    }
  }
  const std::size_t mid = dist.size() / 2;
  std::nth_element(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(mid), dist.end());
  double sigma = dist[mid];
  if (dist.size() % 2 == 0) {
    const double lower = *std::max_element(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(mid));
    sigma = 0.5 * (sigma + lower);
  }
  if (!(sigma > 0.0)) {
    throw SpectralError("degenerate similarity: median pairwise distance is zero");
  }
  SimilarityMatrix out;
  out.bandwidth = sigma;
  out.weights = (-d2 / (2.0 * sigma * sigma)).array().exp().matrix();
  out.weights.diagonal().setOnes();
  // Exact symmetry.
  out.weights = (0.5 * (out.weights + out.weights.transpose())).eval();
  return out;
}

NormalizedLaplacian normalized_laplacian(const Matrix& weights) {
  const auto n = weights.rows();
  if (n != weights.cols() || n == 0) {
    throw SpectralError("similarity matrix must be square and non-empty");
  }
  NormalizedLaplacian out;
  out.degrees = weights.rowwise().sum();
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!(out.degrees[i] > 0.0)) {
      throw SpectralError("isolated vertex " + std::to_string(i) + " has zero degree");
    }
  }
  const Vector inv_sqrt = out.degrees.array().rsqrt();
  out.laplacian = -(inv_sqrt.asDiagonal() * weights * inv_sqrt.asDiagonal());
  out.laplacian.diagonal().array() += 1.0;
  out.laplacian = (0.5 * (out.laplacian + out.laplacian.transpose())).eval();
  return out;
}

SpectralEmbedding spectral_embed(const NormalizedLaplacian& lap, int k, bool row_normalize) {
  const auto n = static_cast<lapack_int>(lap.laplacian.rows());
  if (k < 1 || k > n) {
    throw SpectralError("spectral embedding needs 1 <= k <= n");
  }
  Matrix work = lap.laplacian;
  Vector values(n);
  Matrix vectors(n, k);
  std::vector<lapack_int> support(static_cast<std::size_t>(2 * k));
  lapack_int found = 0;
  const lapack_int info =
      LAPACKE_dsyevr(LAPACK_COL_MAJOR, 'V', 'I', 'L', n, work.data(), n, 0.0, 0.0, 1, k, 0.0,
                     &found, values.data(), vectors.data(), n, support.data());
  if (info != 0 || found != k) {
    throw SpectralError("symmetric eigensolver failed (info " + std::to_string(info) + ")");
  }
  // Some optimized BLAS builds return garbage vectors with correct values; refuse them.
  const double residual =
      (lap.laplacian * vectors - vectors * values.head(k).asDiagonal()).cwiseAbs().maxCoeff();
  if (!(residual < 1e-8)) {
    throw SpectralError("eigenvector residual " + std::to_string(residual) + " exceeds 1e-8");
  }
  canonical_signs(vectors);
  SpectralEmbedding out;
  out.eigenvalues = values.head(k);
  out.vectors = std::move(vectors);
  if (row_normalize) {
    for (Eigen::Index i = 0; i < out.vectors.rows(); ++i) {
      const double norm = out.vectors.row(i).norm();
      if (norm > 0.0) {
        out.vectors.row(i) /= norm;
      }
    }
  }
  return out;
}

Vector laplacian_spectrum(const NormalizedLaplacian& lap) {
  const auto n = static_cast<lapack_int>(lap.laplacian.rows());
  Matrix work = lap.laplacian;
  Vector values(n);
  const lapack_int info = LAPACKE_dsyev(LAPACK_COL_MAJOR, 'N', 'L', n, work.data(), n, values.data());
  if (info != 0) {
    throw SpectralError("symmetric eigensolver failed (info " + std::to_string(info) + ")");
  }
  return values;
}

ClusterAssignment kmeans(const Matrix& points, int k, std::uint64_t seed, int restarts) {
  if (k < 1 || k > points.rows()) {
    throw SpectralError("k-means needs 1 <= k <= n");
  }
  ClusterAssignment best;
  bool have = false;
  for (int r = 0; r < std::max(1, restarts); ++r) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(r)));
    auto run = lloyd(points, k, rng);
    if (!have || run.wcss < best.wcss) {
      best = std::move(run);
      have = true;
    }
  }
  return best;
}

ElbowResult elbow_k(const Matrix& points, int k_max, std::uint64_t seed, int restarts) {
  if (k_max < 3) {
    throw SpectralError("elbow method needs k_max >= 3");
  }
  k_max = std::min<int>(k_max, static_cast<int>(points.rows()));
  if (k_max < 3) {
    throw SpectralError("elbow method needs at least three points");
  }
  ElbowResult out;
  for (int k = 1; k <= k_max; ++k) {
    out.wcss.push_back(kmeans(points, k, derive_seed(seed, static_cast<std::uint64_t>(k)), restarts).wcss);
  }
  double best = -std::numeric_limits<double>::infinity();
  for (int k = 2; k <= k_max - 1; ++k) {
    const auto i = static_cast<std::size_t>(k - 1);
    const double curvature = out.wcss[i - 1] - 2.0 * out.wcss[i] + out.wcss[i + 1];
    if (curvature > best) {
      best = curvature;
      out.k = k;
    }
  }
  return out;
}

double silhouette(const Matrix& points, const std::vector<int>& labels) {
  const auto n = points.rows();
  if (static_cast<Eigen::Index>(labels.size()) != n) {
    throw SpectralError("silhouette: label count does not match point count");
  }
  if (n < 2) {
    return 0.0;
  }
  const int k = *std::max_element(labels.begin(), labels.end()) + 1;
  std::vector<int> size(static_cast<std::size_t>(k), 0);
  for (int l : labels) {
    ++size[static_cast<std::size_t>(l)];
  }
  const Matrix dist = squared_distances(points).cwiseSqrt();
  double total = 0.0;
  std::vector<double> sums(static_cast<std::size_t>(k));
  for (Eigen::Index i = 0; i < n; ++i) {
    const int own = labels[static_cast<std::size_t>(i)];
    if (size[static_cast<std::size_t>(own)] <= 1) {
      continue;
    }
    std::fill(sums.begin(), sums.end(), 0.0);
    for (Eigen::Index j = 0; j < n; ++j) {
      sums[static_cast<std::size_t>(labels[static_cast<std::size_t>(j)])] += dist(i, j);
    }
    const double a = sums[static_cast<std::size_t>(own)] / (size[static_cast<std::size_t>(own)] - 1);
    double b = std::numeric_limits<double>::infinity();
    for (int c = 0; c < k; ++c) {
      if (c != own && size[static_cast<std::size_t>(c)] > 0) {
        b = std::min(b, sums[static_cast<std::size_t>(c)] / size[static_cast<std::size_t>(c)]);
      }
    }
    if (!std::isfinite(b)) {
      continue;
    }
    const double denom = std::max(a, b);
    total += denom > 0.0 ? (b - a) / denom : 0.0;
  }
  return total / static_cast<double>(n);
}

SpectralResult spectral_cluster(const Matrix& embeddings, int k, std::uint64_t seed,
                                const SpectralOptions& options) {
  const auto sim = similarity(embeddings);
  const auto lap = normalized_laplacian(sim.weights);
  auto embed = spectral_embed(lap, k, options.row_normalize);
  SpectralResult out;
  out.bandwidth = sim.bandwidth;
  out.eigenvalues = std::move(embed.eigenvalues);
  out.embedding = std::move(embed.vectors);
  out.assignment = kmeans(out.embedding, k, seed, options.kmeans_restarts);
  out.labels = out.assignment.labels;
  out.silhouette = silhouette(out.embedding, out.labels);
  return out;
}

double permutation_p_value(double s_obs, const std::vector<double>& s_perm, bool smoothed) {
  if (s_perm.empty()) {
    throw SpectralError("permutation test needs at least one replicate");
  }
  const auto count = std::count_if(s_perm.begin(), s_perm.end(), [&](double s) { return s >= s_obs; });
  if (smoothed) {
    return (1.0 + static_cast<double>(count)) / (1.0 + static_cast<double>(s_perm.size()));
  }
  return static_cast<double>(count) / static_cast<double>(s_perm.size());
}

PermutationTestResult permutation_test(const Matrix& embeddings, int k, int permutations,
                                       std::uint64_t seed, bool smoothed,
                                       const SpectralOptions& options) {
  if (permutations < 1) {
    throw SpectralError("permutation test needs N >= 1");
  }
  PermutationTestResult out;
  out.s_obs = spectral_cluster(embeddings, k, seed, options).silhouette;
  out.s_perm.assign(static_cast<std::size_t>(permutations), 0.0);
  parallel_for(static_cast<std::size_t>(permutations), [&](std::size_t i) {
    const auto replicate_seed = derive_seed(seed, i + 1);
    Rng rng(replicate_seed);
    Matrix shuffled = embeddings;
    std::vector<Eigen::Index> order(static_cast<std::size_t>(embeddings.rows()));
    for (Eigen::Index c = 0; c < embeddings.cols(); ++c) {
      std::iota(order.begin(), order.end(), 0);
      std::shuffle(order.begin(), order.end(), rng);
      for (Eigen::Index r = 0; r < embeddings.rows(); ++r) {
        shuffled(r, c) = embeddings(order[static_cast<std::size_t>(r)], c);
      }
    }
    out.s_perm[i] = spectral_cluster(shuffled, k, replicate_seed, options).silhouette;
  });
  out.p = permutation_p_value(out.s_obs, out.s_perm, smoothed);
  return out;
}

std::vector<CentroidShift> centroid_shift(const Matrix& embeddings, const std::vector<int>& labels,
                                          const std::vector<EcoGroup>& groups, int k) {
  const auto n = embeddings.rows();
  if (static_cast<Eigen::Index>(labels.size()) != n || static_cast<Eigen::Index>(groups.size()) != n) {
    throw SpectralError("centroid_shift: every complaint needs a cluster and a group");
  }
  const auto d = embeddings.cols();
  Matrix high = Matrix::Zero(k, d);
  Matrix low = Matrix::Zero(k, d);
  std::vector<int> nh(static_cast<std::size_t>(k), 0);
  std::vector<int> nl(static_cast<std::size_t>(k), 0);
  for (Eigen::Index i = 0; i < n; ++i) {
    const int c = labels[static_cast<std::size_t>(i)];
    if (c < 0 || c >= k) {
      throw SpectralError("centroid_shift: cluster id out of range");
    }
    if (groups[static_cast<std::size_t>(i)] == EcoGroup::High) {
      high.row(c) += embeddings.row(i);
      ++nh[static_cast<std::size_t>(c)];
    } else {
      low.row(c) += embeddings.row(i);
      ++nl[static_cast<std::size_t>(c)];
    }
  }
  std::vector<CentroidShift> out;
  for (int c = 0; c < k; ++c) {
    CentroidShift s;
    s.cluster = c;
    const auto cc = static_cast<std::size_t>(c);
    if (nh[cc] > 0) {
      s.high_centroid = Vector(high.row(c).transpose() / nh[cc]);
    }
    if (nl[cc] > 0) {
      s.low_centroid = Vector(low.row(c).transpose() / nl[cc]);
    }
    if (s.high_centroid && s.low_centroid) {
      s.distance = (*s.high_centroid - *s.low_centroid).norm();
    }
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<std::optional<double>> coproduction_rate_by_cluster(const std::vector<int>& labels,
                                                                const std::vector<int>& outcomes,
                                                                int k) {
  if (labels.size() != outcomes.size()) {
    throw SpectralError("coproduction_rate_by_cluster: size mismatch");
  }
  std::vector<int> hits(static_cast<std::size_t>(k), 0);
  std::vector<int> total(static_cast<std::size_t>(k), 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int c = labels[i];
    if (c < 0 || c >= k) {
      throw SpectralError("coproduction_rate_by_cluster: cluster id out of range");
    }
    ++total[static_cast<std::size_t>(c)];
    hits[static_cast<std::size_t>(c)] += outcomes[i] != 0 ? 1 : 0;
  }
  std::vector<std::optional<double>> rates(static_cast<std::size_t>(k));
  for (std::size_t c = 0; c < rates.size(); ++c) {
    if (total[c] > 0) {
      rates[c] = static_cast<double>(hits[c]) / total[c];
    }
  }
  return rates;
}

Matrix pca_2d(const Matrix& points) {
  const Matrix centered = points.rowwise() - points.colwise().mean();
  if (points.cols() == 1) {
    Matrix out = Matrix::Zero(points.rows(), 2);
    out.col(0) = centered.col(0);
    return out;
  }
  const Matrix cov = centered.transpose() * centered;
  Eigen::SelfAdjointEigenSolver<Matrix> solver(cov);
  Matrix axes(points.cols(), 2);
  axes.col(0) = solver.eigenvectors().col(points.cols() - 1);
  axes.col(1) = solver.eigenvectors().col(points.cols() - 2);
  canonical_signs(axes);
  return centered * axes;
}

}  // namespace ecoprod::spectral
