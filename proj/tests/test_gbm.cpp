#include "oracles.hpp"

#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <random>

using ecoprod::FeatureMatrix;
using ecoprod::Matrix;
using ecoprod::Vector;
using namespace ecoprod::gbm;

namespace {

struct Data {
  Matrix x;
  Vector y;
};

// Labels follow a noisy interaction of the first two features; the rest is noise.
Data make_data(int n, int f, std::uint64_t seed, double noise = 0.5) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z(0.0, 1.0);
  Data d{Matrix(n, f), Vector(n)};
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < f; ++j) d.x(i, j) = std::round(z(rng) * 4) / 4;  // ties exercise the split search
    const double m = d.x(i, 0) + (f > 1 ? d.x(i, 0) * d.x(i, 1) : 0.0) + noise * z(rng);
    d.y[i] = m > 0 ? 1.0 : 0.0;
  }
  return d;
}

FeatureMatrix as_features(const Data& d) {
  FeatureMatrix fm;
  fm.rows = d.x;
  for (Eigen::Index j = 0; j < d.x.cols(); ++j) fm.columns.push_back("f" + std::to_string(j));
  for (Eigen::Index i = 0; i < d.x.rows(); ++i) {
    fm.target.push_back(static_cast<int>(d.y[i]));
    fm.complaint_ids.push_back(i + 1);
    fm.province_ids.push_back(1 + i % 5);
  }
  return fm;
}

std::vector<double> row(const Matrix& x, Eigen::Index i) {
  std::vector<double> v(static_cast<std::size_t>(x.cols()));
  for (Eigen::Index j = 0; j < x.cols(); ++j) v[static_cast<std::size_t>(j)] = x(i, j);
  return v;
}

}  // namespace

TEST_CASE("gbm: first Newton step by hand") {
  Matrix x(4, 1);
  x << 0, 1, 2, 3;
  const Vector y{{0, 0, 1, 1}};
  TrainConfig cfg;
  cfg.rounds = 1;
  cfg.max_depth = 1;
  cfg.eta = 1.0;
  const auto m = train(x, y, cfg);
  REQUIRE(m.trees.size() == 1);
  CHECK(m.base_score == doctest::Approx(0.0));
  const auto& root = m.trees[0].nodes[0];
  REQUIRE_FALSE(root.is_leaf());
  CHECK(root.cover == 4.0);
  const auto& right = m.trees[0].nodes[static_cast<std::size_t>(root.right)];
  CHECK(right.weight == doctest::Approx(2.0 / 3.0));
  CHECK(right.cover == 2.0);
}

TEST_CASE("gbm: prediction edge cases") {
  BoostedModel empty;
  empty.feature_names = {"a"};
  const std::vector<double> x = {0.0};
  CHECK(empty.predict(x) == doctest::Approx(0.5));

  BoostedModel stump;
  stump.learning_rate = 1.0;
  stump.feature_names = {"a"};
  Tree t;
  t.nodes = {{0, 1.0, 1, 2, 0.0, 2.0}, {-1, 0, -1, -1, 2.0, 1.0}, {-1, 0, -1, -1, -1.0, 1.0}};
  stump.trees.push_back(t);
  CHECK(stump.predict(x) == doctest::Approx(0.8808).epsilon(1e-4));
  stump.base_score = 1e6;
  CHECK(stump.predict(x) == doctest::Approx(1.0 - kProbabilityFloor));
  CHECK_THROWS_AS(stump.margin(std::vector<double>{1.0, 2.0}), GbmError);
}

TEST_CASE("gbm: invalid inputs") {
  TrainConfig cfg;
  cfg.rounds = 0;
  CHECK_THROWS_AS(cfg.validate(), GbmError);
  const auto d = make_data(20, 2, 1);
  CHECK_THROWS_AS(train_classifier(as_features({d.x, Vector::Ones(20)}), TrainConfig{}), GbmError);
  Matrix bad = d.x;
  bad(3, 1) = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(train(bad, d.y, TrainConfig{}), GbmError);
  CHECK_THROWS_AS(train(d.x, d.y.head(10), TrainConfig{}), GbmError);
}

TEST_CASE("gbm: training loss never increases") {
  const auto d = make_data(300, 4, 2);
  TrainConfig cfg;
  cfg.rounds = 60;
  const auto m = train(d.x, d.y, cfg);
  REQUIRE(m.train_loss.size() == 61);
  for (std::size_t r = 1; r < m.train_loss.size(); ++r) CHECK(m.train_loss[r] <= m.train_loss[r - 1] + 1e-12);
}

TEST_CASE("gbm: cover counts training samples") {
  const auto d = make_data(200, 3, 3);
  TrainConfig cfg;
  cfg.rounds = 5;
  const auto m = train(d.x, d.y, cfg);
  for (const auto& t : m.trees) {
    CHECK(t.nodes[0].cover == 200.0);
    CHECK(t.depth() <= cfg.max_depth);
    for (const auto& n : t.nodes) {
      if (!n.is_leaf()) {
        CHECK(t.nodes[static_cast<std::size_t>(n.left)].cover + t.nodes[static_cast<std::size_t>(n.right)].cover ==
              n.cover);
      }
    }
  }
}

TEST_CASE("gbm: sample weights") {
  const auto d = make_data(120, 3, 4);
  TrainConfig cfg;
  cfg.rounds = 10;
  cfg.min_child_cover = 0.0;
  cfg.objective = Objective::Squared;
  // Zero-weight rows behave as if absent.
  Vector w = Vector::Ones(120);
  w.tail(20).setZero();
  const auto weighted = train(d.x, d.y, cfg, {}, w);
  const auto trimmed = train(d.x.topRows(100), d.y.head(100), cfg);
  const Vector a = weighted.predict(d.x);
  const Vector b = trimmed.predict(d.x);
  CHECK((a - b).cwiseAbs().maxCoeff() < 1e-9);
  // Integer weights behave as duplication.
  Vector w2 = Vector::Ones(120);
  w2.head(30).setConstant(2.0);
  Matrix xd(150, 3);
  Vector yd(150);
  xd << d.x, d.x.topRows(30);
  yd << d.y, d.y.head(30);
  const Vector c = train(d.x, d.y, cfg, {}, w2).predict(d.x);
  const Vector e = train(xd, yd, cfg).predict(d.x);
  CHECK((c - e).cwiseAbs().maxCoeff() < 1e-9);
  CHECK_THROWS_AS(train(d.x, d.y, cfg, {}, Vector::Constant(120, -1.0)), GbmError);
}

TEST_CASE("gbm: deterministic model bytes") {
  const auto d = make_data(150, 3, 5);
  TrainConfig cfg;
  cfg.rounds = 15;
  CHECK(to_json(train(d.x, d.y, cfg)).dump() == to_json(train(d.x, d.y, cfg)).dump());
}

TEST_CASE("gbm: JSON round trip") {
  const auto d = make_data(150, 3, 6);
  TrainConfig cfg;
  cfg.rounds = 20;
  const auto m = train(d.x, d.y, cfg, {"a", "b", "c"});
  const auto back = model_from_json(nlohmann::json::parse(to_json(m).dump()));
  CHECK(back.feature_names == m.feature_names);
  CHECK((back.predict(d.x) - m.predict(d.x)).cwiseAbs().maxCoeff() == 0.0);
  const auto j = to_json(m);
  CHECK(j.contains("trees"));
  CHECK_THROWS(model_from_json(nlohmann::json::parse(R"({"trees": 3})")));
}

TEST_CASE("gbm: stratified folds") {
  std::vector<int> target(103);
  for (std::size_t i = 0; i < target.size(); ++i) target[i] = i % 3 == 0 ? 1 : 0;
  const auto f = stratified_folds(target, 5, 9);
  CHECK(f == stratified_folds(target, 5, 9));
  std::vector<int> size(5, 0);
  std::vector<int> pos(5, 0);
  for (std::size_t i = 0; i < f.size(); ++i) {
    ++size[static_cast<std::size_t>(f[i])];
    pos[static_cast<std::size_t>(f[i])] += target[i];
  }
  for (int k = 0; k < 5; ++k) {
    CHECK(size[static_cast<std::size_t>(k)] >= 20);
    CHECK(size[static_cast<std::size_t>(k)] <= 21);
    CHECK(pos[static_cast<std::size_t>(k)] >= 6);
  }
}

TEST_CASE("gbm: classifier on separable and on shuffled labels") {
  auto d = make_data(600, 5, 8, 0.0);
  TrainConfig cfg;
  cfg.seed = 3;
  CHECK(cross_validate(as_features(d), cfg).mean_accuracy >= 0.95);
  // Shuffled: enough rows that fold noise stays well inside the tolerance.
  d = make_data(3000, 5, 8, 0.0);
  std::mt19937_64 rng(8);
  std::vector<double> labels(d.y.data(), d.y.data() + d.y.size());
  std::shuffle(labels.begin(), labels.end(), rng);
  d.y = Eigen::Map<Vector>(labels.data(), 3000);
  const double share = d.y.mean();
  const double acc = cross_validate(as_features(d), cfg).mean_accuracy;
  CHECK(std::abs(acc - std::max(share, 1 - share)) <= 0.05);
}

TEST_CASE("treeshap: local accuracy and brute-force equivalence") {
  for (int f = 1; f <= 4; ++f) {
    const auto d = make_data(200, f, 10 + f);
    TrainConfig cfg;
    cfg.rounds = 8;
    cfg.max_depth = 3;
    const auto m = train(d.x, d.y, cfg);
    const auto shap = tree_shap(m, d.x);
    double base = m.base_score;
    for (const auto& t : m.trees) base += m.learning_rate * t.expected_value();
    CHECK(shap.base == doctest::Approx(base).epsilon(1e-12));
    for (Eigen::Index i = 0; i < d.x.rows(); ++i) {
      const auto x = row(d.x, i);
      CHECK(std::abs(shap.base + shap.phi.row(i).sum() - m.margin(x)) < 1e-9);
      if (i < 40) {
        const auto brute = oracle::brute_shapley(m, x);
        for (int j = 0; j < f; ++j) CHECK(std::abs(shap.phi(i, j) - brute[static_cast<std::size_t>(j)]) < 1e-9);
      }
    }
  }
}

TEST_CASE("treeshap: single feature, constants and dummies") {
  Data d = make_data(200, 3, 20);
  d.x.col(2).setConstant(1.0);  // never splittable
  TrainConfig cfg;
  cfg.rounds = 1;
  cfg.max_depth = 1;
  const auto stump = train(d.x, d.y, cfg);
  const auto shap = tree_shap(stump, d.x);
  const int used = stump.trees[0].nodes[0].feature;
  for (Eigen::Index i = 0; i < d.x.rows(); ++i) {
    CHECK(shap.phi(i, used) == doctest::Approx(stump.margin(row(d.x, i)) - shap.base).epsilon(1e-12));
    for (int j = 0; j < 3; ++j) {
      if (j != used) CHECK(shap.phi(i, j) == 0.0);
    }
  }
  BoostedModel constant;
  constant.feature_names = {"a", "b", "c"};
  constant.base_score = 0.7;
  const auto c = tree_shap(constant, d.x);
  CHECK(c.phi.cwiseAbs().maxCoeff() == 0.0);
  CHECK(c.base == 0.7);
  const auto summary = shap_summary(stump, d.x);
  CHECK(summary.ranking.front() == used);
}

TEST_CASE("treeshap: ranking ignores row order and finds the driver") {
  const auto d = make_data(300, 5, 30, 0.1);
  TrainConfig cfg;
  cfg.rounds = 30;
  const auto m = train(d.x, d.y, cfg);
  const auto a = shap_summary(m, d.x);
  CHECK(a.ranking.front() == 0);
  const Matrix reversed = d.x.colwise().reverse();
  CHECK(shap_summary(m, reversed).ranking == a.ranking);
}

TEST_CASE("gbm: archetypes") {
  const auto a = archetype_clusters(std::vector<double>{0.1, 0.15, 0.8, 0.85});
  CHECK(a.labels[0] == a.labels[1]);
  CHECK(a.labels[2] == a.labels[3]);
  CHECK(a.labels[2] == a.coproductive);
  CHECK(a.centroid_means[1] > a.centroid_means[0]);
  CHECK_THROWS_AS(archetype_clusters(std::vector<double>{0.5, 0.5}), GbmError);

  std::mt19937_64 rng(4);
  std::normal_distribution<double> noise(0.0, 0.03);
  std::vector<double> probs;
  std::vector<int> planted;
  for (int i = 0; i < 30; ++i) {
    planted.push_back(i % 2);
    probs.push_back((i % 2 ? 0.75 : 0.3) + noise(rng));
  }
  CHECK(oracle::adjusted_rand(archetype_clusters(probs).labels, planted) == doctest::Approx(1.0));
}
