#pragma once

#include "ecoprod/common.hpp"
#include "ecoprod/dataset.hpp"

#include <json.hpp>

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace ecoprod::gbm {

class GbmError : public Error {
 public:
  using Error::Error;
};

enum class Objective { Logistic, Squared };

/// Flat tree node. Internal nodes send x[feature] < threshold to `left`.
/// `cover` is the number of training samples that reached the node.
struct TreeNode {
  int feature = -1;
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  double weight = 0.0;
  double cover = 0.0;

  bool is_leaf() const { return left < 0; }
};

struct Tree {
  std::vector<TreeNode> nodes;  // nodes[0] is the root

  double predict(std::span<const double> x) const;
  int leaf_index(std::span<const double> x) const;
  /// Cover-weighted mean leaf value.
  double expected_value() const;
  int depth() const;
};

/// margin(x) = base_score + learning_rate * sum of tree outputs.
struct BoostedModel {
  std::vector<Tree> trees;
  double learning_rate = 0.3;
  double base_score = 0.0;
  Objective objective = Objective::Logistic;
  std::vector<std::string> feature_names;
  std::vector<double> train_loss;  // mean training loss after each round (entry 0: base only)

  std::size_t num_features() const { return feature_names.size(); }
  double margin(std::span<const double> x) const;
  /// Probability for logistic models (clamped to [1e-15, 1 - 1e-15]); the raw
  /// margin for squared-error models.
  double predict(std::span<const double> x) const;
  Vector predict(const Matrix& x) const;
};

inline constexpr double kProbabilityFloor = 1e-15;

struct TrainConfig {
  int rounds = 100;
  int max_depth = 4;
  double lambda = 1.0;
  double eta = 0.3;
  double min_child_cover = 1.0;
  int folds = 5;
  std::uint64_t seed = 0;
  Objective objective = Objective::Logistic;
  /// Initial margin. Defaults to the log-odds of the positive rate (logistic)
  /// or the target mean (squared).
  std::optional<double> base_score;

  void validate() const;
};

/// Exact greedy second-order boosting. Rows of `x` are samples. Optional
/// per-row weights scale each sample's gradient and hessian.
BoostedModel train(const Matrix& x, const Vector& y, const TrainConfig& config,
                   std::vector<std::string> feature_names = {}, const Vector& weights = Vector());

/// Binary classifier on a feature matrix; rejects single-class targets.
BoostedModel train_classifier(const FeatureMatrix& features, const TrainConfig& config);

double predict_proba(const BoostedModel& model, std::span<const double> x);

double mean_log_loss(const BoostedModel& model, const Matrix& x, const Vector& y);

/// Stratified fold ids in [0, folds): each class is shuffled with the seed and
/// dealt round-robin, so every fold sees both classes when each class has at
/// least `folds` members.
std::vector<int> stratified_folds(const std::vector<int>& target, int folds, std::uint64_t seed);

struct CvReport {
  std::vector<double> fold_accuracy;
  double mean_accuracy = 0.0;
  std::vector<int> fold_of_row;
};

CvReport cross_validate(const FeatureMatrix& features, const TrainConfig& config);

double accuracy(const BoostedModel& model, const Matrix& x, const std::vector<int>& target);

/// Path-dependent TreeSHAP in margin space. base + phi.row(i).sum() = margin(x_i).
struct ShapValues {
  Matrix phi;
  double base = 0.0;
};

ShapValues tree_shap(const BoostedModel& model, const Matrix& x);

struct ShapSummary {
  std::vector<int> ranking;          // feature indices, most important first
  std::vector<double> mean_abs_phi;  // by feature index
  ShapValues values;
};

ShapSummary shap_summary(const BoostedModel& model, const Matrix& x);

/// Two-archetype k-means over province-level vectors (1-D probabilities by
/// default). Cluster 1 is the one whose centroid has the higher mean
/// ("co-productive archetype").
struct ArchetypeResult {
  std::vector<int> labels;
  std::vector<double> centroid_means;  // [reactive, co-productive]
  int coproductive = 1;
};

ArchetypeResult archetype_clusters(const std::vector<double>& province_probs, std::uint64_t seed = 0);
ArchetypeResult archetype_clusters(const Matrix& province_vectors, std::uint64_t seed = 0);

nlohmann::ordered_json to_json(const BoostedModel& model);
BoostedModel model_from_json(const nlohmann::json& j);

}  // namespace ecoprod::gbm
