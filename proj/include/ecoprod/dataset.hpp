#pragma once

#include "ecoprod/common.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace ecoprod {

enum class EcoGroup { Low, High };
enum class ResponseLabel { OneWay = 0, CoProduction = 1 };

const char* to_string(EcoGroup group);
EcoGroup parse_eco_group(const std::string& text);

/// Raised for malformed or invariant-violating input files. The message names
/// the offending row (1-based, data rows only) and column when known.
class IngestError : public Error {
 public:
  using Error::Error;
};

/// One decision-making unit (province).
struct ProvinceRecord {
  std::int64_t id = 0;
  std::string name;
  std::vector<double> env_inputs;
  double gdp_output = 0.0;
  std::map<std::string, double> fiscal_features;
  std::optional<double> eco_score;
  std::optional<EcoGroup> eco_group;
};

/// One citizen message with its precomputed sentence embedding.
struct ComplaintRecord {
  std::int64_t id = 0;
  std::int64_t province_id = 0;
  std::vector<double> embedding;
  double sentiment = 0.0;
  bool attention = false;
  ResponseLabel response_label = ResponseLabel::OneWay;
  std::optional<int> cluster_id;
};

/// Column layout of provinces.csv:
///   id, name, <input_columns...>, gdp_output, <fiscal_columns...>
/// An empty fiscal list means "every column after gdp_output is fiscal".
struct ProvinceSchema {
  std::vector<std::string> input_columns;
  std::vector<std::string> fiscal_columns;
};

inline constexpr std::size_t kDefaultEmbeddingDim = 768;

/// Reads the header of provinces.csv: input columns sit between `name` and
/// `gdp_output`, everything after `gdp_output` is fiscal.
ProvinceSchema read_province_schema(const std::filesystem::path& path);

std::vector<ProvinceRecord> load_provinces(const std::filesystem::path& path,
                                           const ProvinceSchema& schema);
void write_provinces(const std::filesystem::path& path, const std::vector<ProvinceRecord>& records,
                     const ProvinceSchema& schema);

/// JSON-lines reader. When `dimension` is empty the first record declares it.
std::vector<ComplaintRecord> load_complaints(const std::filesystem::path& path,
                                             std::optional<std::size_t> dimension = std::nullopt);
void write_complaints(const std::filesystem::path& path,
                      const std::vector<ComplaintRecord>& records);

/// Checks ProvinceRecord invariants; throws IngestError naming the record.
void validate_province(const ProvinceRecord& record);

enum class ClusterEncoding { OneHot, Id, None };

/// Which columns go into the feature matrix. Column order is fixed:
///   eco_efficiency, fiscal:<name>..., env:<name>..., cluster_<c>... | cluster_id,
///   attention, sentiment
struct FeaturePlan {
  bool eco_efficiency = true;
  std::vector<std::string> fiscal;
  std::vector<std::string> env_inputs;  // names from ProvinceSchema::input_columns
  ClusterEncoding cluster = ClusterEncoding::OneHot;
  int n_clusters = 8;
  bool attention = true;
  bool sentiment = true;

  std::size_t feature_count() const;
};

struct FeatureMatrix {
  std::vector<std::string> columns;
  Matrix rows;
  std::vector<int> target;                  // 1 = co-production
  std::vector<std::int64_t> complaint_ids;  // row provenance
  std::vector<std::int64_t> province_ids;

  Eigen::Index column_index(const std::string& name) const;
};

FeatureMatrix build_feature_matrix(const std::vector<ProvinceRecord>& provinces,
                                   const std::vector<ComplaintRecord>& complaints,
                                   const FeaturePlan& plan, const ProvinceSchema& schema);

// ---------------------------------------------------------------------------
// Synthetic fixtures with planted ground truth.

struct SyntheticSpec {
  int n_provinces = 27;
  int n_complaints = 4221;
  int n_clusters = 8;
  int embedding_dim = static_cast<int>(kDefaultEmbeddingDim);
  int n_inputs = 3;
  int n_fiscal = 13;
  double true_ate = 0.24;
  double confounding_strength = 1.0;
  double cluster_separation = 8.0;  // centre distance in noise standard deviations
  std::uint64_t seed = 0;

  void validate() const;
};

struct GroundTruth {
  std::vector<bool> frontier;             // per province
  std::vector<double> planted_efficiency; // per province; 1 on the frontier
  std::vector<EcoGroup> planted_group;    // strict-greater-than-median split
  std::vector<int> clusters;              // per complaint
  std::vector<double> cluster_rates;      // expected co-production rate per cluster
  double true_ate = 0.0;                  // population ATE of the label model
  double sample_ate = 0.0;                // ATE over the realised complaints
  double treatment_logit_shift = 0.0;
  std::vector<std::string> input_columns;
  std::vector<std::string> fiscal_columns;
};

struct SyntheticData {
  std::vector<ProvinceRecord> provinces;
  std::vector<ComplaintRecord> complaints;
  GroundTruth truth;

  ProvinceSchema schema() const { return {truth.input_columns, truth.fiscal_columns}; }
};

SyntheticData generate_synthetic(const SyntheticSpec& spec);

void write_ground_truth(const std::filesystem::path& path, const SyntheticSpec& spec,
                        const GroundTruth& truth);

/// Gaussian mixture with `k` centres at pairwise distance `separation`
/// (unit-variance isotropic noise). Returns points and planted labels.
struct BlobData {
  Matrix points;
  std::vector<int> labels;
};
BlobData generate_blobs(int n, int dim, int k, double separation, std::uint64_t seed);

}  // namespace ecoprod
