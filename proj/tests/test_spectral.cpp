#include "ecoprod/spectral.hpp"

#include "ecoprod/dataset.hpp"
#include "oracles.hpp"

#include <doctest.h>

#include <algorithm>
#include <cstdlib>
#include <random>

using ecoprod::EcoGroup;
using ecoprod::Matrix;
using ecoprod::Vector;
using namespace ecoprod::spectral;

TEST_CASE("spectral: similarity kernel") {
  Matrix pts(3, 2);
  pts << 0, 0, 1, 0, 1, 1;  // distances 1, 1, sqrt 2; median 1
  const auto s = similarity(pts);
  CHECK(s.bandwidth == doctest::Approx(1.0));
  CHECK(s.weights(0, 2) == doctest::Approx(std::exp(-1.0)));
  CHECK(s.weights(0, 1) == doctest::Approx(std::exp(-0.5)));
  CHECK(s.weights.isApprox(s.weights.transpose(), 0.0));
  CHECK(s.weights.diagonal().isOnes());
  CHECK_THROWS_AS(similarity(Matrix::Ones(2, 3)), SpectralError);
}

TEST_CASE("spectral: two-node laplacian") {
  Matrix w(2, 2);
  w << 0, 1, 1, 0;
  const auto lap = normalized_laplacian(w);
  Matrix expected(2, 2);
  expected << 1, -1, -1, 1;
  CHECK(lap.laplacian.isApprox(expected));
  const Vector ev = laplacian_spectrum(lap);
  CHECK(ev[0] == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(ev[1] == doctest::Approx(2.0));
  const auto emb = spectral_embed(lap, 1);
  CHECK(std::abs(emb.vectors(0, 0)) == doctest::Approx(1.0));
  CHECK(std::abs(emb.vectors(1, 0)) == doctest::Approx(1.0));
  CHECK_THROWS_AS(normalized_laplacian(Matrix::Zero(2, 2)), SpectralError);
}

TEST_CASE("spectral: block-diagonal graph") {
  Matrix w = Matrix::Zero(5, 5);
  w.topLeftCorner(2, 2).setOnes();
  w.bottomRightCorner(3, 3).setConstant(0.5);
  const auto lap = normalized_laplacian(w);
  const Vector ev = laplacian_spectrum(lap);
  CHECK(std::abs(ev[0]) < 1e-9);
  CHECK(std::abs(ev[1]) < 1e-9);
  CHECK(ev[2] > 0.1);
  const auto emb = spectral_embed(lap, 2);
  CHECK((emb.vectors.row(0) - emb.vectors.row(1)).norm() < 1e-8);
  CHECK((emb.vectors.row(2) - emb.vectors.row(4)).norm() < 1e-8);
  CHECK((emb.vectors.row(0) - emb.vectors.row(2)).norm() > 0.5);
}

TEST_CASE("spectral: laplacian invariants on random data") {
  const auto blobs = ecoprod::generate_blobs(120, 6, 3, 4.0, 3);
  const auto sim = similarity(blobs.points);
  const auto lap = normalized_laplacian(sim.weights);
  CHECK(lap.laplacian.isApprox(lap.laplacian.transpose(), 0.0));
  const Vector ev = laplacian_spectrum(lap);
  CHECK(ev.minCoeff() >= -1e-9);
  CHECK(ev.maxCoeff() <= 2.0 + 1e-9);
  // Eigenvalue 0 with eigenvector D^1/2 1.
  const Vector v = lap.degrees.array().sqrt();
  CHECK((lap.laplacian * v).norm() < 1e-9 * v.norm());
  const auto raw = spectral_embed(lap, 4, false);
  const Matrix gram = raw.vectors.transpose() * raw.vectors;
  CHECK((gram - Matrix::Identity(4, 4)).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("spectral: kmeans basics") {
  Matrix pts(4, 2);
  pts << 0, 0, 0, 1, 10, 0, 10, 1;
  const auto a = kmeans(pts, 2, 1, 3);
  CHECK(a.labels[0] == a.labels[1]);
  CHECK(a.labels[2] == a.labels[3]);
  CHECK(a.labels[0] != a.labels[2]);
  const auto c = a.centroids.row(a.labels[0]);
  CHECK(c(0) == doctest::Approx(0.0));
  CHECK(c(1) == doctest::Approx(0.5));
  CHECK(kmeans(pts, 4, 1).wcss == doctest::Approx(0.0));
  CHECK_THROWS_AS(kmeans(pts, 5, 1), SpectralError);
}

TEST_CASE("spectral: kmeans wcss never increases across Lloyd iterations") {
  const auto blobs = ecoprod::generate_blobs(300, 5, 6, 2.0, 17);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto a = kmeans(blobs.points, 6, seed);
    for (std::size_t i = 1; i < a.wcss_trace.size(); ++i) CHECK(a.wcss_trace[i] <= a.wcss_trace[i - 1] + 1e-9);
  }
}

TEST_CASE("spectral: kmeans recovers a well separated mixture") {
  const auto blobs = ecoprod::generate_blobs(300, 4, 3, 10.0, 5);
  CHECK(oracle::adjusted_rand(kmeans(blobs.points, 3, 2, 5).labels, blobs.labels) == doctest::Approx(1.0));
}

TEST_CASE("spectral: elbow selection") {
  const auto three = ecoprod::generate_blobs(300, 8, 3, 10.0, 21);
  CHECK(elbow_k(three.points, 8, 1).k == 3);
  const auto one = ecoprod::generate_blobs(200, 4, 1, 0.0, 22);
  const auto e = elbow_k(one.points, 6, 1);
  CHECK(e.k >= 2);
  CHECK(e.k <= 5);
  CHECK(e.wcss.size() == 6);
}

TEST_CASE("spectral: silhouette range") {
  std::mt19937_64 rng(3);
  const auto blobs = ecoprod::generate_blobs(80, 3, 4, 1.0, 9);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<int> labels(80);
    for (auto& l : labels) l = static_cast<int>(rng() % 4);
    const double s = silhouette(blobs.points, labels);
    CHECK(s >= -1.0);
    CHECK(s <= 1.0);
  }
}

TEST_CASE("spectral: permutation p-value arithmetic") {
  CHECK(permutation_p_value(0.9, {0.1, 0.2, 0.95, 0.3}) == doctest::Approx(0.25));
  CHECK(permutation_p_value(0.9, {0.9, 0.9}) == doctest::Approx(1.0));
  CHECK(permutation_p_value(0.9, {0.1, 0.2, 0.95, 0.3}, true) == doctest::Approx(2.0 / 5.0));
  std::vector<double> perm = {0.4, 0.8, 0.1, 0.95, 0.6, 0.99};
  const double p = permutation_p_value(0.7, perm);
  std::reverse(perm.begin(), perm.end());
  CHECK(permutation_p_value(0.7, perm) == p);
  CHECK(p == doctest::Approx(3.0 / 6.0));
}

TEST_CASE("spectral: full recovery of planted clusters") {
  const auto blobs = ecoprod::generate_blobs(400, 16, 5, 8.0, 31);
  const auto r = spectral_cluster(blobs.points, 5, 4);
  CHECK(oracle::adjusted_rand(r.labels, blobs.labels) >= 0.95);
  CHECK(r.silhouette > 0.5);
}

TEST_CASE("spectral: permutation test is independent of the thread count") {
  const auto blobs = ecoprod::generate_blobs(60, 6, 3, 6.0, 41);
  setenv("ECOPROD_THREADS", "1", 1);
  const auto a = permutation_test(blobs.points, 3, 9, 5);
  setenv("ECOPROD_THREADS", "3", 1);
  const auto b = permutation_test(blobs.points, 3, 9, 5);
  unsetenv("ECOPROD_THREADS");
  CHECK(a.s_perm == b.s_perm);
  CHECK(a.s_obs == b.s_obs);
  CHECK(a.p == b.p);
}

TEST_CASE("spectral: centroid shifts") {
  Matrix pts(4, 2);
  pts << 0, 0, 0, 0, 3, 4, 3, 4;
  const std::vector<int> labels = {0, 0, 0, 0};
  const auto shift = centroid_shift(pts, labels, {EcoGroup::High, EcoGroup::High, EcoGroup::Low, EcoGroup::Low}, 1);
  REQUIRE(shift[0].distance);
  CHECK(*shift[0].distance == doctest::Approx(5.0));
  const auto same = centroid_shift(pts, {0, 1, 0, 1}, {EcoGroup::High, EcoGroup::High, EcoGroup::Low, EcoGroup::Low}, 2);
  CHECK(same[0].distance);
  const auto lone = centroid_shift(pts, {0, 0, 1, 1}, {EcoGroup::High, EcoGroup::High, EcoGroup::Low, EcoGroup::Low}, 2);
  CHECK_FALSE(lone[0].distance);
  CHECK_FALSE(lone[1].distance);
}

TEST_CASE("spectral: group-independent clusters have small centroid shifts") {
  const auto blobs = ecoprod::generate_blobs(400, 8, 4, 10.0, 51);
  std::vector<EcoGroup> groups;
  for (int i = 0; i < 400; ++i) groups.push_back(i % 2 == 0 ? EcoGroup::High : EcoGroup::Low);
  const auto shifts = centroid_shift(blobs.points, blobs.labels, groups, 4);
  for (const auto& s : shifts) {
    REQUIRE(s.distance);
    CHECK(*s.distance < 3.0);  // centres sit 10 apart
  }
}

TEST_CASE("spectral: co-production rates") {
  auto rates = coproduction_rate_by_cluster({0, 0, 0, 0}, {1, 1, 0, 0}, 2);
  CHECK(*rates[0] == doctest::Approx(0.5));
  CHECK_FALSE(rates[1]);
  CHECK(*coproduction_rate_by_cluster({0, 0}, {1, 1}, 1)[0] == 1.0);

  // Binomial Monte Carlo: planted rates 0.2 and 0.8 with 1000 draws each.
  std::mt19937_64 rng(77);
  std::vector<int> labels;
  std::vector<int> outcomes;
  for (int c = 0; c < 2; ++c) {
    std::bernoulli_distribution draw(c == 0 ? 0.2 : 0.8);
    for (int i = 0; i < 1000; ++i) {
      labels.push_back(c);
      outcomes.push_back(draw(rng) ? 1 : 0);
    }
  }
  rates = coproduction_rate_by_cluster(labels, outcomes, 2);
  CHECK(std::abs(*rates[0] - 0.2) < 0.05);
  CHECK(std::abs(*rates[1] - 0.8) < 0.05);
}
