#pragma once

#include "ecoprod/common.hpp"
#include "ecoprod/dataset.hpp"

#include <optional>
#include <vector>

namespace ecoprod::spectral {

class SpectralError : public Error {
 public:
  using Error::Error;
};

/// Gaussian RBF affinities, W_ij = exp(-|e_i - e_j|^2 / (2 sigma^2)), with
/// sigma the median pairwise distance. Symmetric, unit diagonal.
struct SimilarityMatrix {
  Matrix weights;
  double bandwidth = 0.0;
};

SimilarityMatrix similarity(const Matrix& embeddings);

/// L_norm = D^-1/2 (D - W) D^-1/2.
struct NormalizedLaplacian {
  Matrix laplacian;
  Vector degrees;
};

NormalizedLaplacian normalized_laplacian(const Matrix& weights);

/// Eigenvectors for the k smallest eigenvalues of L_norm, as columns of an
/// n x k matrix (ascending eigenvalue order). With `row_normalize` each row is
/// scaled to unit length afterwards; all-zero rows are left as they are.
struct SpectralEmbedding {
  Matrix vectors;
  Vector eigenvalues;
};

SpectralEmbedding spectral_embed(const NormalizedLaplacian& lap, int k, bool row_normalize = true);

/// All eigenvalues of L_norm, ascending.
Vector laplacian_spectrum(const NormalizedLaplacian& lap);

struct ClusterAssignment {
  std::vector<int> labels;
  Matrix centroids;
  double wcss = 0.0;
  int iterations = 0;
  std::vector<double> wcss_trace;  // after every assignment step
};

inline constexpr int kMaxLloydIterations = 300;

/// Lloyd's algorithm from k-means++ seeding; the lowest-wcss run of
/// `restarts` seeded runs is returned. An empty cluster is re-seeded at the
/// point farthest from its current centroid.
ClusterAssignment kmeans(const Matrix& points, int k, std::uint64_t seed, int restarts = 1);

struct ElbowResult {
  int k = 0;
  std::vector<double> wcss;  // wcss[k - 1] for k = 1 .. k_max
};

/// argmax over k in [2, k_max - 1] of wcss(k-1) - 2 wcss(k) + wcss(k+1);
/// ties resolve to the smallest k.
ElbowResult elbow_k(const Matrix& points, int k_max, std::uint64_t seed, int restarts = 10);

/// Mean silhouette; points in singleton clusters contribute 0.
double silhouette(const Matrix& points, const std::vector<int>& labels);

struct SpectralOptions {
  bool row_normalize = true;
  int kmeans_restarts = 10;
};

struct SpectralResult {
  std::vector<int> labels;
  Matrix embedding;
  Vector eigenvalues;
  double bandwidth = 0.0;
  double silhouette = 0.0;  // on the spectral embedding
  ClusterAssignment assignment;
};

SpectralResult spectral_cluster(const Matrix& embeddings, int k, std::uint64_t seed,
                                const SpectralOptions& options = {});

struct PermutationTestResult {
  double s_obs = 0.0;
  std::vector<double> s_perm;
  double p = 1.0;
};

/// p = #{s_i >= s_obs} / N, or (1 + #) / (1 + N) when `smoothed`.
double permutation_p_value(double s_obs, const std::vector<double>& s_perm, bool smoothed = false);

/// Score = mean silhouette of spectral clustering on the spectral embedding.
/// Null replicates shuffle every embedding column independently across rows.
/// Replicate i uses seed derive_seed(seed, i + 1), so results do not depend on
/// the thread count.
PermutationTestResult permutation_test(const Matrix& embeddings, int k, int permutations,
                                       std::uint64_t seed, bool smoothed = false,
                                       const SpectralOptions& options = {});

struct CentroidShift {
  int cluster = 0;
  std::optional<Vector> high_centroid;
  std::optional<Vector> low_centroid;
  std::optional<double> distance;  // absent unless both groups have members
};

std::vector<CentroidShift> centroid_shift(const Matrix& embeddings, const std::vector<int>& labels,
                                          const std::vector<EcoGroup>& groups, int k);

/// Fraction of co-production responses per cluster; absent for empty clusters.
std::vector<std::optional<double>> coproduction_rate_by_cluster(const std::vector<int>& labels,
                                                                const std::vector<int>& outcomes,
                                                                int k);

/// First two principal-component scores (for the scatter plot).
Matrix pca_2d(const Matrix& points);

}  // namespace ecoprod::spectral
