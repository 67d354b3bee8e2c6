#include "ecoprod/gbm.hpp"

#include "ecoprod/spectral.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace ecoprod::gbm {

namespace {

constexpr double kMinSplitGain = 1e-10;

double softplus(double v) { return v > 0.0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v)); }

double sample_loss(Objective objective, double margin, double y) {
  if (objective == Objective::Logistic) {
    return softplus(margin) - y * margin;
  }
  const double r = margin - y;
  return 0.5 * r * r;
}

struct NodeStats {
  double grad = 0.0;
  double hess = 0.0;
  int count = 0;
};

struct SplitCandidate {
  double gain = kMinSplitGain;
  int feature = -1;
  double threshold = 0.0;
};

// Scan state for one open node while walking a presorted feature column.
struct ScanState {
  double grad_left = 0.0;
  double hess_left = 0.0;
  int count_left = 0;
  double last_value = 0.0;
};

class TreeBuilder {
 public:
  TreeBuilder(const Matrix& x, const std::vector<std::vector<int>>& sorted, const TrainConfig& config)
      : x_(x), sorted_(sorted), config_(config) {}

  // Grows one tree on (grad, hess); writes each sample's leaf value to `leaf_value`.
  Tree build(const std::vector<double>& grad, const std::vector<double>& hess,
             std::vector<double>& leaf_value) {
    const auto n = static_cast<int>(x_.rows());
    Tree tree;
    tree.nodes.emplace_back();
    std::vector<NodeStats> stats(1);
    std::vector<int> position(static_cast<std::size_t>(n), 0);
    for (int i = 0; i < n; ++i) {
      stats[0].grad += grad[static_cast<std::size_t>(i)];
      stats[0].hess += hess[static_cast<std::size_t>(i)];
      ++stats[0].count;
    }

    std::vector<int> open = {0};
    for (int depth = 0; depth < config_.max_depth && !open.empty(); ++depth) {
      std::vector<int> slot(tree.nodes.size(), -1);
      for (std::size_t s = 0; s < open.size(); ++s) {
        slot[static_cast<std::size_t>(open[s])] = static_cast<int>(s);
      }
      std::vector<SplitCandidate> best(open.size());
      std::vector<ScanState> scan(open.size());
      for (int f = 0; f < static_cast<int>(x_.cols()); ++f) {
        std::fill(scan.begin(), scan.end(), ScanState{});
        for (int i : sorted_[static_cast<std::size_t>(f)]) {
          const int s = slot[static_cast<std::size_t>(position[static_cast<std::size_t>(i)])];
          if (s < 0) {
            continue;
          }
          auto& st = scan[static_cast<std::size_t>(s)];
          const double v = x_(i, f);
          if (st.count_left > 0 && v > st.last_value) {
            evaluate(stats[static_cast<std::size_t>(open[static_cast<std::size_t>(s)])], st, f, v,
                     best[static_cast<std::size_t>(s)]);
          }
          st.grad_left += grad[static_cast<std::size_t>(i)];
          st.hess_left += hess[static_cast<std::size_t>(i)];
          ++st.count_left;
          st.last_value = v;
        }
      }

      std::vector<int> next;
      for (std::size_t s = 0; s < open.size(); ++s) {
        if (best[s].feature < 0) {
          continue;
        }
        const int id = open[s];
        const int left = static_cast<int>(tree.nodes.size());
        tree.nodes.emplace_back();
        tree.nodes.emplace_back();
        auto& node = tree.nodes[static_cast<std::size_t>(id)];
        node.feature = best[s].feature;
        node.threshold = best[s].threshold;
        node.left = left;
        node.right = left + 1;
        stats.resize(tree.nodes.size());
        next.push_back(left);
        next.push_back(left + 1);
      }
      // Route samples of split nodes and recompute child statistics exactly.
      for (int i = 0; i < n; ++i) {
        auto& pos = position[static_cast<std::size_t>(i)];
        const auto& node = tree.nodes[static_cast<std::size_t>(pos)];
        if (node.is_leaf() || slot.size() <= static_cast<std::size_t>(pos) ||
            slot[static_cast<std::size_t>(pos)] < 0) {
          continue;
        }
        pos = x_(i, node.feature) < node.threshold ? node.left : node.right;
        auto& st = stats[static_cast<std::size_t>(pos)];
        st.grad += grad[static_cast<std::size_t>(i)];
        st.hess += hess[static_cast<std::size_t>(i)];
        ++st.count;
      }
      open = std::move(next);
    }

    for (std::size_t id = 0; id < tree.nodes.size(); ++id) {
      auto& node = tree.nodes[id];
      node.cover = stats[id].count;
      if (node.is_leaf()) {
        const double denom = stats[id].hess + config_.lambda;
        node.weight = denom > 1e-300 ? -stats[id].grad / denom : 0.0;
      }
    }
    leaf_value.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      leaf_value[static_cast<std::size_t>(i)] =
          tree.nodes[static_cast<std::size_t>(position[static_cast<std::size_t>(i)])].weight;
    }
    return tree;
  }

 private:
  void evaluate(const NodeStats& total, const ScanState& st, int feature, double threshold,
                SplitCandidate& best) const {
    const int count_right = total.count - st.count_left;
    if (st.count_left < config_.min_child_cover || count_right < config_.min_child_cover) {
      return;
    }
    const double gr = total.grad - st.grad_left;
    const double hr = total.hess - st.hess_left;
    const double lambda = config_.lambda;
    const double gain = 0.5 * (st.grad_left * st.grad_left / (st.hess_left + lambda) +
                               gr * gr / (hr + lambda) -
                               total.grad * total.grad / (total.hess + lambda));
    if (gain > best.gain) {
      best.gain = gain;
      best.feature = feature;
      best.threshold = threshold;
    }
  }

  const Matrix& x_;
  const std::vector<std::vector<int>>& sorted_;
  const TrainConfig& config_;
};

}  // namespace

double Tree::predict(std::span<const double> x) const {
  return nodes[static_cast<std::size_t>(leaf_index(x))].weight;
}

int Tree::leaf_index(std::span<const double> x) const {
  int id = 0;
  while (!nodes[static_cast<std::size_t>(id)].is_leaf()) {
    const auto& node = nodes[static_cast<std::size_t>(id)];
    id = x[static_cast<std::size_t>(node.feature)] < node.threshold ? node.left : node.right;
  }
  return id;
}

double Tree::expected_value() const {
  double total = 0.0;
  for (const auto& node : nodes) {
    if (node.is_leaf()) {
      total += node.weight * node.cover;
    }
  }
  return nodes.front().cover > 0.0 ? total / nodes.front().cover : 0.0;
}

int Tree::depth() const {
  std::vector<int> level(nodes.size(), 0);
  int deepest = 0;
  for (std::size_t id = 0; id < nodes.size(); ++id) {
    const auto& node = nodes[id];
    if (!node.is_leaf()) {
      level[static_cast<std::size_t>(node.left)] = level[id] + 1;
      level[static_cast<std::size_t>(node.right)] = level[id] + 1;
      deepest = std::max(deepest, level[id] + 1);
    }
  }
  return deepest;
}

double BoostedModel::margin(std::span<const double> x) const {
  if (!feature_names.empty() && x.size() != feature_names.size()) {
    throw GbmError("expected " + std::to_string(feature_names.size()) + " features, got " +
                   std::to_string(x.size()));
  }
  double sum = 0.0;
  for (const auto& tree : trees) {
    sum += tree.predict(x);
  }
  return base_score + learning_rate * sum;
}

double BoostedModel::predict(std::span<const double> x) const {
  const double m = margin(x);
  if (objective == Objective::Squared) {
    return m;
  }
  return std::clamp(logistic(m), kProbabilityFloor, 1.0 - kProbabilityFloor);
}

Vector BoostedModel::predict(const Matrix& x) const {
  Vector out(x.rows());
  std::vector<double> row(static_cast<std::size_t>(x.cols()));
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      row[static_cast<std::size_t>(j)] = x(i, j);
    }
    out[i] = predict(row);
  }
  return out;
}

void TrainConfig::validate() const {
  if (rounds < 1) {
    throw GbmError("rounds must be >= 1");
  }
  if (max_depth < 1) {
    throw GbmError("max_depth must be >= 1");
  }
  if (!(eta > 0.0 && eta <= 1.0)) {
    throw GbmError("eta must lie in (0, 1]");
  }
  if (!(lambda >= 0.0)) {
    throw GbmError("lambda must be >= 0");
  }
  if (!(min_child_cover >= 0.0)) {
    throw GbmError("min_child_cover must be >= 0");
  }
  if (folds < 2) {
    throw GbmError("folds must be >= 2");
  }
}

BoostedModel train(const Matrix& x, const Vector& y, const TrainConfig& config,
                   std::vector<std::string> feature_names, const Vector& weights) {
  config.validate();
  const auto n = x.rows();
  const auto d = x.cols();
  if (n == 0 || y.size() != n) {
    throw GbmError("training data and target disagree in length");
  }
  if (!x.allFinite() || !y.allFinite()) {
    throw GbmError("non-finite feature or target value");
  }
  const bool weighted = weights.size() > 0;
  if (weighted && (weights.size() != n || !weights.allFinite() || (weights.array() < 0.0).any() ||
                   weights.sum() <= 0.0)) {
    throw GbmError("sample weights must be finite, non-negative, non-zero in total and one per row");
  }
  // Zero-weight rows would still offer split thresholds; drop them.
  if (weighted && (weights.array() == 0.0).any()) {
    std::vector<Eigen::Index> keep;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (weights[i] > 0.0) {
        keep.push_back(i);
      }
    }
    return train(x(keep, Eigen::all), y(keep), config, std::move(feature_names), weights(keep));
  }
  if (feature_names.empty()) {
    for (Eigen::Index j = 0; j < d; ++j) {
      feature_names.push_back("f" + std::to_string(j));
    }
  }
  if (static_cast<Eigen::Index>(feature_names.size()) != d) {
    throw GbmError("feature name count does not match the matrix width");
  }

  BoostedModel model;
  model.learning_rate = config.eta;
  model.objective = config.objective;
  model.feature_names = std::move(feature_names);
  if (config.base_score) {
    model.base_score = *config.base_score;
  } else if (config.objective == Objective::Logistic) {
    const double mean = weighted ? weights.dot(y) / weights.sum() : y.mean();
    const double rate = std::clamp(mean, 1e-6, 1.0 - 1e-6);
    model.base_score = std::log(rate / (1.0 - rate));
  } else {
    model.base_score = weighted ? weights.dot(y) / weights.sum() : y.mean();
  }

  std::vector<std::vector<int>> sorted(static_cast<std::size_t>(d));
  for (Eigen::Index j = 0; j < d; ++j) {
    auto& order = sorted[static_cast<std::size_t>(j)];
    order.resize(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return x(a, j) < x(b, j); });
  }

  std::vector<double> margin(static_cast<std::size_t>(n), model.base_score);
  auto mean_loss = [&] {
    double total = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      total += sample_loss(config.objective, margin[static_cast<std::size_t>(i)], y[i]);
    }
    return total / static_cast<double>(n);
  };
  model.train_loss.push_back(mean_loss());

  TreeBuilder builder(x, sorted, config);
  std::vector<double> grad(static_cast<std::size_t>(n));
  std::vector<double> hess(static_cast<std::size_t>(n));
  std::vector<double> leaf_value;
  for (int round = 0; round < config.rounds; ++round) {
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto ii = static_cast<std::size_t>(i);
      if (config.objective == Objective::Logistic) {
        const double p = logistic(margin[ii]);
        grad[ii] = p - y[i];
        hess[ii] = p * (1.0 - p);
      } else {
        grad[ii] = margin[ii] - y[i];
        hess[ii] = 1.0;
      }
      if (weighted) {
        grad[ii] *= weights[i];
        hess[ii] *= weights[i];
      }
    }
    model.trees.push_back(builder.build(grad, hess, leaf_value));
    for (std::size_t i = 0; i < margin.size(); ++i) {
      margin[i] += config.eta * leaf_value[i];
    }
    model.train_loss.push_back(mean_loss());
  }
  return model;
}

BoostedModel train_classifier(const FeatureMatrix& features, const TrainConfig& config) {
  const auto n = features.rows.rows();
  if (static_cast<Eigen::Index>(features.target.size()) != n) {
    throw GbmError("target length does not match the feature matrix");
  }
  int positives = 0;
  Vector y(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const int t = features.target[static_cast<std::size_t>(i)];
    if (t != 0 && t != 1) {
      throw GbmError("classifier targets must be binary");
    }
    positives += t;
    y[i] = t;
  }
  if (positives == 0 || positives == n) {
    throw GbmError("single-class target: the classifier needs both labels");
  }
  TrainConfig cfg = config;
  cfg.objective = Objective::Logistic;
  return train(features.rows, y, cfg, features.columns);
}

double predict_proba(const BoostedModel& model, std::span<const double> x) {
  return std::clamp(logistic(model.margin(x)), kProbabilityFloor, 1.0 - kProbabilityFloor);
}

double mean_log_loss(const BoostedModel& model, const Matrix& x, const Vector& y) {
  double total = 0.0;
  std::vector<double> row(static_cast<std::size_t>(x.cols()));
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      row[static_cast<std::size_t>(j)] = x(i, j);
    }
    total += sample_loss(Objective::Logistic, model.margin(row), y[i]);
  }
  return total / static_cast<double>(x.rows());
}

std::vector<int> stratified_folds(const std::vector<int>& target, int folds, std::uint64_t seed) {
  if (folds < 2) {
    throw GbmError("folds must be >= 2");
  }
  if (target.size() < static_cast<std::size_t>(folds)) {
    throw GbmError("need at least as many rows as folds");
  }
  Rng rng(seed);
  std::vector<int> assignment(target.size(), 0);
  std::vector<std::size_t> pos;
  std::vector<std::size_t> neg;
  for (std::size_t i = 0; i < target.size(); ++i) {
    (target[i] != 0 ? pos : neg).push_back(i);
  }
  std::shuffle(pos.begin(), pos.end(), rng);
  std::shuffle(neg.begin(), neg.end(), rng);
  std::size_t counter = 0;
  for (const auto* group : {&pos, &neg}) {
    for (std::size_t i : *group) {
      assignment[i] = static_cast<int>(counter++ % static_cast<std::size_t>(folds));
    }
  }
  return assignment;
}

double accuracy(const BoostedModel& model, const Matrix& x, const std::vector<int>& target) {
  const Vector p = model.predict(x);
  int hits = 0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    const int predicted = p[i] >= 0.5 ? 1 : 0;
    hits += predicted == target[static_cast<std::size_t>(i)] ? 1 : 0;
  }
  return p.size() > 0 ? static_cast<double>(hits) / static_cast<double>(p.size()) : 0.0;
}

CvReport cross_validate(const FeatureMatrix& features, const TrainConfig& config) {
  config.validate();
  const auto n = features.rows.rows();
  if (n < config.folds) {
    throw GbmError("cross-validation needs at least as many rows as folds");
  }
  const int positives = std::accumulate(features.target.begin(), features.target.end(), 0);
  if (positives < config.folds || n - positives < config.folds) {
    throw GbmError("each class needs at least one member per fold for stratification");
  }
  CvReport report;
  report.fold_of_row = stratified_folds(features.target, config.folds, config.seed);
  report.fold_accuracy.assign(static_cast<std::size_t>(config.folds), 0.0);
  parallel_for(static_cast<std::size_t>(config.folds), [&](std::size_t fold) {
    FeatureMatrix train_part;
    train_part.columns = features.columns;
    std::vector<Eigen::Index> train_rows;
    std::vector<Eigen::Index> test_rows;
    for (Eigen::Index i = 0; i < n; ++i) {
      (report.fold_of_row[static_cast<std::size_t>(i)] == static_cast<int>(fold) ? test_rows : train_rows)
          .push_back(i);
    }
    train_part.rows = features.rows(train_rows, Eigen::all);
    for (auto i : train_rows) {
      train_part.target.push_back(features.target[static_cast<std::size_t>(i)]);
    }
    TrainConfig cfg = config;
    cfg.seed = derive_seed(config.seed, fold);
    const auto model = train_classifier(train_part, cfg);
    std::vector<int> test_target;
    for (auto i : test_rows) {
      test_target.push_back(features.target[static_cast<std::size_t>(i)]);
    }
    report.fold_accuracy[fold] =
        accuracy(model, features.rows(test_rows, Eigen::all), test_target);
  });
  report.mean_accuracy = std::accumulate(report.fold_accuracy.begin(), report.fold_accuracy.end(), 0.0) /
                         static_cast<double>(config.folds);
  return report;
}

ShapSummary shap_summary(const BoostedModel& model, const Matrix& x) {
  ShapSummary out;
  out.values = tree_shap(model, x);
  const auto d = out.values.phi.cols();
  out.mean_abs_phi.resize(static_cast<std::size_t>(d));
  for (Eigen::Index j = 0; j < d; ++j) {
    out.mean_abs_phi[static_cast<std::size_t>(j)] =
        x.rows() > 0 ? out.values.phi.col(j).cwiseAbs().mean() : 0.0;
  }
  out.ranking.resize(static_cast<std::size_t>(d));
  std::iota(out.ranking.begin(), out.ranking.end(), 0);
  std::stable_sort(out.ranking.begin(), out.ranking.end(), [&](int a, int b) {
    return out.mean_abs_phi[static_cast<std::size_t>(a)] > out.mean_abs_phi[static_cast<std::size_t>(b)];
  });
  return out;
}

ArchetypeResult archetype_clusters(const Matrix& province_vectors, std::uint64_t seed) {
  const auto n = province_vectors.rows();
  if (n < 2) {
    throw GbmError("archetype clustering needs at least two provinces");
  }
  bool distinct = false;
  for (Eigen::Index i = 1; i < n && !distinct; ++i) {
    distinct = province_vectors.row(i) != province_vectors.row(0);
  }
  if (!distinct) {
    throw GbmError("degenerate archetype split: all provinces are identical");
  }
  const auto fit = spectral::kmeans(province_vectors, 2, seed, 10);
  const double m0 = fit.centroids.row(0).mean();
  const double m1 = fit.centroids.row(1).mean();
  const bool swap = m0 > m1;
  ArchetypeResult out;
  out.labels = fit.labels;
  if (swap) {
    for (auto& l : out.labels) {
      l = 1 - l;
    }
  }
  out.centroid_means = {std::min(m0, m1), std::max(m0, m1)};
  return out;
}

ArchetypeResult archetype_clusters(const std::vector<double>& province_probs, std::uint64_t seed) {
  Matrix m(static_cast<Eigen::Index>(province_probs.size()), 1);
  for (std::size_t i = 0; i < province_probs.size(); ++i) {
    m(static_cast<Eigen::Index>(i), 0) = province_probs[i];
  }
  return archetype_clusters(m, seed);
}

namespace {

nlohmann::ordered_json node_to_json(const Tree& tree, int id) {
  const auto& node = tree.nodes[static_cast<std::size_t>(id)];
  nlohmann::ordered_json j;
  if (node.is_leaf()) {
    j["weight"] = node.weight;
    j["cover"] = node.cover;
    return j;
  }
  j["feature"] = node.feature;
  j["threshold"] = node.threshold;
  j["cover"] = node.cover;
  j["left"] = node_to_json(tree, node.left);
  j["right"] = node_to_json(tree, node.right);
  return j;
}

int node_from_json(const nlohmann::json& j, Tree& tree) {
  const int id = static_cast<int>(tree.nodes.size());
  tree.nodes.emplace_back();
  if (j.contains("weight")) {
    tree.nodes[static_cast<std::size_t>(id)].weight = j.at("weight").get<double>();
    tree.nodes[static_cast<std::size_t>(id)].cover = j.at("cover").get<double>();
    return id;
  }
  TreeNode node;
  node.feature = j.at("feature").get<int>();
  node.threshold = j.at("threshold").get<double>();
  node.cover = j.at("cover").get<double>();
  node.left = node_from_json(j.at("left"), tree);
  node.right = node_from_json(j.at("right"), tree);
  tree.nodes[static_cast<std::size_t>(id)] = node;
  return id;
}

}  // namespace

nlohmann::ordered_json to_json(const BoostedModel& model) {
  nlohmann::ordered_json j;
  j["objective"] = model.objective == Objective::Logistic ? "logistic" : "squared";
  j["base_score"] = model.base_score;
  j["learning_rate"] = model.learning_rate;
  j["feature_names"] = model.feature_names;
  auto trees = nlohmann::ordered_json::array();
  for (const auto& tree : model.trees) {
    trees.push_back(node_to_json(tree, 0));
  }
  j["trees"] = trees;
  j["train_loss"] = model.train_loss;
  return j;
}

BoostedModel model_from_json(const nlohmann::json& j) {
  try {
    BoostedModel model;
    model.objective = j.at("objective").get<std::string>() == "squared" ? Objective::Squared
                                                                        : Objective::Logistic;
    model.base_score = j.at("base_score").get<double>();
    model.learning_rate = j.at("learning_rate").get<double>();
    model.feature_names = j.at("feature_names").get<std::vector<std::string>>();
    for (const auto& t : j.at("trees")) {
      Tree tree;
      node_from_json(t, tree);
      for (const auto& node : tree.nodes) {
        if (!node.is_leaf() &&
            (node.feature < 0 || node.feature >= static_cast<int>(model.feature_names.size()))) {
          throw GbmError("model tree references an unknown feature");
        }
      }
      model.trees.push_back(std::move(tree));
    }
    if (j.contains("train_loss")) {
      model.train_loss = j.at("train_loss").get<std::vector<double>>();
    }
    return model;
  } catch (const nlohmann::json::exception& e) {
    throw GbmError(std::string("malformed model document: ") + e.what());
  }
}

}  // namespace ecoprod::gbm
