#pragma once

#include "ecoprod/causal.hpp"
#include "ecoprod/dataset.hpp"
#include "ecoprod/dea.hpp"
#include "ecoprod/gbm.hpp"

#include <json.hpp>

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace ecoprod::pipeline {

/// Bad configuration or unreadable input; maps to exit status 2.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A stage failed while computing; maps to exit status 1.
class StageError : public Error {
 public:
  StageError(std::string stage, const std::string& what)
      : Error(stage + ": " + what), stage_(std::move(stage)) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

inline constexpr int kExitOk = 0;
inline constexpr int kExitStageFailure = 1;
inline constexpr int kExitConfigError = 2;

/// Stage order; a stage's sub-seed is derive_seed(global_seed, index).
enum class Stage { Dea = 0, Cluster = 1, Train = 2, Explain = 3, Causal = 4 };
const char* to_string(Stage stage);
std::uint64_t stage_seed(std::uint64_t global_seed, Stage stage);

// --- stage configurations ----------------------------------------------------

struct ClusterConfig {
  std::optional<int> k = 8;  // empty: choose by the elbow rule
  int k_max = 12;
  int permutations = 99;
  bool smoothed_p = false;
  int restarts = 10;
};

struct TrainStageConfig {
  gbm::TrainConfig gbm;
  double test_fraction = 0.2;
};

struct ExplainConfig {
  /// "probabilities": province mean predicted probability; "shap": province
  /// mean attribution vectors.
  std::string archetype_input = "probabilities";
};

struct CausalStageConfig {
  std::vector<causal::Method> methods = {causal::Method::Cevae, causal::Method::S, causal::Method::T,
                                         causal::Method::X, causal::Method::R};
  std::vector<std::string> covariates;  // empty: default selection
  int bootstrap = 200;
  double level = 0.95;
  std::string preset = "desk";
  std::optional<int> cevae_epochs;
  int mc_samples = 100;
  bool group_level = false;
  causal::LearnerConfig learner;

  causal::CevaeConfig cevae_config(std::uint64_t seed) const;
};

struct PipelineConfig {
  std::filesystem::path provinces;
  std::filesystem::path complaints;
  std::filesystem::path output_dir;
  std::uint64_t seed = 1;
  dea::ReturnsToScale rts = dea::ReturnsToScale::VRS;
  ClusterConfig cluster;
  TrainStageConfig train;
  ExplainConfig explain;
  CausalStageConfig causal;

  /// Relative paths resolve against `base_dir`.
  static PipelineConfig from_json(const nlohmann::json& j, const std::filesystem::path& base_dir);
  /// Input files must exist; numeric options must be in range.
  void validate() const;
};

/// Applies `key.sub=value` to a JSON document. The value is parsed as JSON
/// when possible and kept as a string otherwise.
void apply_override(nlohmann::json& doc, const std::string& assignment);

/// Loads a config file and applies the overrides in order.
PipelineConfig load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides);

// --- stage data ----------------------------------------------------------

struct DeaTable {
  std::vector<std::int64_t> ids;
  Vector theta_crs;
  Vector theta_vrs;
  std::vector<EcoGroup> groups;  // median split of the configured model's scores
};

DeaTable run_dea(const std::vector<ProvinceRecord>& provinces, const ProvinceSchema& schema,
                 dea::ReturnsToScale rts, std::ostream* trace = nullptr);
void write_dea_scores(const std::filesystem::path& path, const DeaTable& table);
DeaTable read_dea_scores(const std::filesystem::path& path);

struct ClusterOutput {
  std::vector<std::int64_t> complaint_ids;
  std::vector<int> labels;
  int k = 0;
  nlohmann::ordered_json report;
  Matrix projection;  // 2-D PCA of the embeddings
};

/// `groups` (optional) maps province id to eco group for centroid shifts.
ClusterOutput run_cluster(const std::vector<ComplaintRecord>& complaints, const ClusterConfig& config,
                          std::uint64_t seed, const std::optional<DeaTable>& dea_table);
/// clusters.csv, cluster_report.json, clusters.svg
void write_cluster_outputs(const std::filesystem::path& dir, const ClusterOutput& out);
/// complaint id -> cluster
std::vector<std::pair<std::int64_t, int>> read_clusters(const std::filesystem::path& path);

/// Feature matrix plus the binary treatment (1 = high eco-efficiency province).
struct FeatureTable {
  FeatureMatrix features;
  std::vector<int> treatment;
};

FeatureTable build_features(std::vector<ProvinceRecord> provinces, const ProvinceSchema& schema,
                            std::vector<ComplaintRecord> complaints, const DeaTable& dea_table,
                            const std::vector<std::pair<std::int64_t, int>>& clusters, int n_clusters);
void write_features(const std::filesystem::path& path, const FeatureTable& table);
FeatureTable read_features(const std::filesystem::path& path);

struct TrainOutput {
  gbm::BoostedModel model;
  nlohmann::ordered_json cv_report;
};

/// Stratified holdout test split, k-fold CV on the rest, final model on the rest.
TrainOutput run_train(const FeatureTable& table, const TrainStageConfig& config, std::uint64_t seed);
void write_train_outputs(const std::filesystem::path& dir, const TrainOutput& out);
gbm::BoostedModel read_model(const std::filesystem::path& path);

struct ExplainOutput {
  gbm::ShapSummary summary;
  nlohmann::ordered_json archetypes;
};

ExplainOutput run_explain(const gbm::BoostedModel& model, const FeatureTable& table,
                          const ExplainConfig& config, std::uint64_t seed);
/// shap.csv, shap_summary.svg, archetypes.json, archetypes.svg
void write_explain_outputs(const std::filesystem::path& dir, const ExplainOutput& out,
                           const gbm::BoostedModel& model, const FeatureTable& table);

/// Default covariates: first five fiscal columns, attention, sentiment.
std::vector<std::string> default_covariates(const FeatureMatrix& features);
causal::CausalDataset causal_dataset(const FeatureTable& table, const std::vector<std::string>& covariates);

nlohmann::ordered_json run_causal(const FeatureTable& table, const CausalStageConfig& config,
                                  std::uint64_t seed);

// --- orchestration -------------------------------------------------------

/// Runs every stage, writing artifacts into config.output_dir. Returns the
/// process exit status; on a stage failure a FAILED marker names the stage.
int run_pipeline(const PipelineConfig& config, std::ostream& log);

void write_json(const std::filesystem::path& path, const nlohmann::ordered_json& j);
nlohmann::json read_json(const std::filesystem::path& path);

}  // namespace ecoprod::pipeline
