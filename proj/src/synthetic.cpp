#include "ecoprod/dataset.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

namespace ecoprod {

namespace {

const std::vector<std::string> kInputNames = {"co2_emissions", "so2_emissions", "energy_use",
                                              "water_use",     "wastewater",    "solid_waste"};

const std::vector<std::string> kFiscalNames = {
    "general_public_services", "public_security", "education",
    "science_technology",      "culture_sports",  "social_security",
    "health",                  "environmental_protection", "urban_rural_community",
    "agriculture_forestry",    "transportation",  "housing",
    "total_budget"};

constexpr double kLabelIntercept = -0.3;
constexpr double kAttentionEffect = 0.8;
constexpr double kSentimentEffect = 0.3;
constexpr double kConfounderEffect = 0.8;
constexpr double kAttentionRate = 0.3;

std::string column_name(const std::vector<std::string>& names, int i, const char* prefix) {
  if (i < static_cast<int>(names.size())) {
    return names[static_cast<std::size_t>(i)];
  }
  return std::string(prefix) + std::to_string(i);
}

// Centres at pairwise distance `separation`: scaled basis vectors when k <= dim,
// otherwise random directions on a sphere of the same radius.
Matrix cluster_centers(int k, int dim, double separation, Rng& rng) {
  Matrix centers = Matrix::Zero(k, dim);
  const double radius = separation / std::sqrt(2.0);
  if (k <= dim) {
    for (int c = 0; c < k; ++c) {
      centers(c, c) = radius;
    }
    return centers;
  }
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int c = 0; c < k; ++c) {
    for (int d = 0; d < dim; ++d) {
      centers(c, d) = normal(rng);
    }
    centers.row(c) *= radius / centers.row(c).norm();
  }
  return centers;
}

std::vector<double> cluster_effects(int k) {
  std::vector<double> beta(static_cast<std::size_t>(k), 0.0);
  if (k > 1) {
    for (int c = 0; c < k; ++c) {
      beta[static_cast<std::size_t>(c)] = -1.0 + 2.0 * c / (k - 1);
    }
  }
  return beta;
}

// Population ATE of the label model for a given logit shift, integrating the
// continuous part (sentiment + confounder, jointly Gaussian) on a fine grid.
double population_ate(double shift, const std::vector<double>& beta, double confounding) {
  const double sd = std::sqrt(kSentimentEffect * kSentimentEffect +
                              std::pow(kConfounderEffect * confounding, 2));
  constexpr int kGrid = 4001;
  const double span = 10.0;
  const double step = 2.0 * span / (kGrid - 1);
  double total = 0.0;
  double mass = 0.0;
  for (int g = 0; g < kGrid; ++g) {
    const double z = -span + g * step;
    const double w = std::exp(-0.5 * z * z);
    mass += w;
    double inner = 0.0;
    for (double b : beta) {
      for (int a = 0; a <= 1; ++a) {
        const double pa = a == 1 ? kAttentionRate : 1.0 - kAttentionRate;
        const double eta = kLabelIntercept + b + kAttentionEffect * a + sd * z;
        inner += pa * (logistic(eta + shift) - logistic(eta));
      }
    }
    total += w * inner / static_cast<double>(beta.size());
  }
  return total / mass;
}

double solve_logit_shift(double target, const std::vector<double>& beta, double confounding) {
  if (target == 0.0) {
    return 0.0;
  }
  double lo = -40.0;
  double hi = 40.0;
  if (target <= population_ate(lo, beta, confounding) ||
      target >= population_ate(hi, beta, confounding)) {
    throw Error("true_ate " + std::to_string(target) +
                " is not attainable under the synthetic label model");
  }
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (population_ate(mid, beta, confounding) < target) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

}  // namespace

void SyntheticSpec::validate() const {
  if (n_provinces < 1 || n_complaints < 1 || n_clusters < 1 || embedding_dim < 1) {
    throw Error("synthetic spec: all counts must be >= 1");
  }
  if (n_inputs < 1 || n_fiscal < 0) {
    throw Error("synthetic spec: need at least one input column");
  }
  if (!(true_ate >= -1.0 && true_ate <= 1.0)) {
    throw Error("synthetic spec: true_ate must lie in [-1, 1]");
  }
  if (!(confounding_strength >= 0.0) || !std::isfinite(confounding_strength)) {
    throw Error("synthetic spec: confounding_strength must be >= 0");
  }
  if (!(cluster_separation > 0.0)) {
    throw Error("synthetic spec: cluster_separation must be positive");
  }
}

SyntheticData generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  SyntheticData data;
  GroundTruth& truth = data.truth;
  truth.true_ate = spec.true_ate;
  for (int i = 0; i < spec.n_inputs; ++i) {
    truth.input_columns.push_back(column_name(kInputNames, i, "env_input_"));
  }
  for (int i = 0; i < spec.n_fiscal; ++i) {
    truth.fiscal_columns.push_back(column_name(kFiscalNames, i, "fiscal_"));
  }

  const auto np = static_cast<std::size_t>(spec.n_provinces);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);

  // --- provinces -----------------------------------------------------------
  Rng prov_rng(derive_seed(spec.seed, 1));
  std::vector<double> latent(np);
  std::vector<double> score(np);
  for (std::size_t j = 0; j < np; ++j) {
    latent[j] = normal(prov_rng);
    score[j] = spec.confounding_strength * latent[j] + normal(prov_rng);
  }
  std::vector<std::size_t> order(np);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return score[a] > score[b]; });
  const std::size_t n_frontier = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(np / 4.0)));
  const std::size_t n_inefficient = np - n_frontier;
  truth.frontier.assign(np, false);
  truth.planted_efficiency.assign(np, 1.0);
  for (std::size_t r = 0; r < np; ++r) {
    const std::size_t j = order[r];
    if (r < n_frontier) {
      truth.frontier[j] = true;
    } else {
      // Rank among the inefficient units, best first, mapped onto [0.30, 0.75).
      const double pos = static_cast<double>(np - 1 - r) / static_cast<double>(n_inefficient);
      truth.planted_efficiency[j] = 0.30 + 0.45 * pos;
    }
  }

  std::vector<double> input_scale(static_cast<std::size_t>(spec.n_inputs));
  for (auto& c : input_scale) {
    c = std::exp(std::log(5.0) + uniform(prov_rng) * std::log(100.0));
  }
  auto direction = [&](std::vector<double> w) {
    const double mean = std::accumulate(w.begin(), w.end(), 0.0) / static_cast<double>(w.size());
    for (auto& v : w) {
      v /= mean;
    }
    return w;
  };

  std::vector<double> output(np, 0.0);
  std::vector<std::vector<double>> mix(np);
  std::vector<std::size_t> frontier_units;
  for (std::size_t r = 0; r < n_frontier; ++r) {
    frontier_units.push_back(order[r]);
  }
  std::sort(frontier_units.begin(), frontier_units.end());
  for (std::size_t f = 0; f < frontier_units.size(); ++f) {
    const std::size_t j = frontier_units[f];
    output[j] = 1.0 + 9.0 * (static_cast<double>(f) + 0.2 + 0.6 * uniform(prov_rng)) /
                          static_cast<double>(frontier_units.size());
    std::vector<double> w(static_cast<std::size_t>(spec.n_inputs));
    for (auto& v : w) {
      v = 1.0 + 0.1 * (uniform(prov_rng) - 0.5);
    }
    mix[j] = direction(w);
  }
  for (std::size_t j = 0; j < np; ++j) {
    if (truth.frontier[j]) {
      continue;
    }
    // Shadow a frontier unit: slightly less output, similar input mix, inputs
    // inflated by 1 / efficiency, so that unit strictly dominates this one.
    const std::size_t ref = frontier_units[static_cast<std::size_t>(
        uniform(prov_rng) * static_cast<double>(frontier_units.size())) % frontier_units.size()];
    output[j] = output[ref] * (0.95 + 0.05 * uniform(prov_rng));
    std::vector<double> w = mix[ref];
    for (auto& v : w) {
      v *= 1.0 + 0.04 * (uniform(prov_rng) - 0.5);
    }
    mix[j] = direction(w);
  }

  for (std::size_t j = 0; j < np; ++j) {
    ProvinceRecord p;
    p.id = static_cast<std::int64_t>(j + 1);
    p.name = "Province-" + std::string(j + 1 < 10 ? "0" : "") + std::to_string(j + 1);
    for (int i = 0; i < spec.n_inputs; ++i) {
      const auto ii = static_cast<std::size_t>(i);
      p.env_inputs.push_back(input_scale[ii] * mix[j][ii] * std::pow(output[j], 1.5) /
                             truth.planted_efficiency[j]);
    }
    p.gdp_output = 1000.0 * output[j];
    for (const auto& name : truth.fiscal_columns) {
      p.fiscal_features[name] = std::exp(3.0 + 0.4 * latent[j] + 0.3 * normal(prov_rng));
    }
    data.provinces.push_back(std::move(p));
  }

  // Planted treatment: strict-greater-than-lower-median of planted efficiency.
  {
    std::vector<double> sorted = truth.planted_efficiency;
    std::sort(sorted.begin(), sorted.end());
    const double median = sorted[(sorted.size() - 1) / 2];
    for (double e : truth.planted_efficiency) {
      truth.planted_group.push_back(e > median ? EcoGroup::High : EcoGroup::Low);
    }
  }

  // --- complaints ----------------------------------------------------------
  Rng text_rng(derive_seed(spec.seed, 2));
  const Matrix centers = cluster_centers(spec.n_clusters, spec.embedding_dim,
                                         spec.cluster_separation, text_rng);
  const auto beta = cluster_effects(spec.n_clusters);
  truth.treatment_logit_shift = solve_logit_shift(spec.true_ate, beta, spec.confounding_strength);

  Rng label_rng(derive_seed(spec.seed, 3));
  std::uniform_int_distribution<int> pick_province(0, spec.n_provinces - 1);
  std::uniform_int_distribution<int> pick_cluster(0, spec.n_clusters - 1);
  std::bernoulli_distribution attention(kAttentionRate);
  std::vector<double> rate_sum(static_cast<std::size_t>(spec.n_clusters), 0.0);
  std::vector<int> rate_count(static_cast<std::size_t>(spec.n_clusters), 0);
  double effect_sum = 0.0;
  for (int i = 0; i < spec.n_complaints; ++i) {
    ComplaintRecord c;
    c.id = i + 1;
    const auto prov = static_cast<std::size_t>(pick_province(text_rng));
    c.province_id = static_cast<std::int64_t>(prov + 1);
    const int cluster = pick_cluster(text_rng);
    truth.clusters.push_back(cluster);
    c.embedding.resize(static_cast<std::size_t>(spec.embedding_dim));
    for (int d = 0; d < spec.embedding_dim; ++d) {
      c.embedding[static_cast<std::size_t>(d)] = centers(cluster, d) + normal(text_rng);
    }
    c.attention = attention(label_rng);
    c.sentiment = normal(label_rng);

    const double eta0 = kLabelIntercept + beta[static_cast<std::size_t>(cluster)] +
                        kAttentionEffect * (c.attention ? 1.0 : 0.0) +
                        kSentimentEffect * c.sentiment +
                        kConfounderEffect * spec.confounding_strength * latent[prov];
    const bool treated = truth.planted_group[prov] == EcoGroup::High;
    const double p1 = logistic(eta0 + truth.treatment_logit_shift);
    const double p0 = logistic(eta0);
    const double p = treated ? p1 : p0;
    effect_sum += p1 - p0;
    rate_sum[static_cast<std::size_t>(cluster)] += p;
    rate_count[static_cast<std::size_t>(cluster)] += 1;
    c.response_label = uniform(label_rng) < p ? ResponseLabel::CoProduction : ResponseLabel::OneWay;
    data.complaints.push_back(std::move(c));
  }
  truth.sample_ate = effect_sum / spec.n_complaints;
  for (std::size_t c = 0; c < rate_sum.size(); ++c) {
    truth.cluster_rates.push_back(rate_count[c] > 0 ? rate_sum[c] / rate_count[c] : 0.0);
  }
  return data;
}

void write_ground_truth(const std::filesystem::path& path, const SyntheticSpec& spec,
                        const GroundTruth& truth) {
  nlohmann::ordered_json j;
  j["spec"] = {{"n_provinces", spec.n_provinces},
               {"n_complaints", spec.n_complaints},
               {"n_clusters", spec.n_clusters},
               {"embedding_dim", spec.embedding_dim},
               {"n_inputs", spec.n_inputs},
               {"n_fiscal", spec.n_fiscal},
               {"true_ate", spec.true_ate},
               {"confounding_strength", spec.confounding_strength},
               {"cluster_separation", spec.cluster_separation},
               {"seed", spec.seed}};
  j["true_ate"] = truth.true_ate;
  j["sample_ate"] = truth.sample_ate;
  j["treatment_logit_shift"] = truth.treatment_logit_shift;
  j["input_columns"] = truth.input_columns;
  j["fiscal_columns"] = truth.fiscal_columns;
  auto provinces = nlohmann::ordered_json::array();
  for (std::size_t p = 0; p < truth.frontier.size(); ++p) {
    provinces.push_back({{"id", p + 1},
                         {"frontier", static_cast<bool>(truth.frontier[p])},
                         {"planted_efficiency", truth.planted_efficiency[p]},
                         {"group", to_string(truth.planted_group[p])}});
  }
  j["provinces"] = provinces;
  j["complaint_clusters"] = truth.clusters;
  j["cluster_rates"] = truth.cluster_rates;
  std::ofstream out(path);
  if (!out) {
    throw Error("cannot write " + path.string());
  }
  out << j.dump(2) << '\n';
}

BlobData generate_blobs(int n, int dim, int k, double separation, std::uint64_t seed) {
  if (n < 1 || dim < 1 || k < 1) {
    throw Error("generate_blobs: counts must be >= 1");
  }
  Rng rng(derive_seed(seed, 0));
  const Matrix centers = cluster_centers(k, dim, separation, rng);
  BlobData blobs;
  blobs.labels.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    blobs.labels[static_cast<std::size_t>(i)] = i % k;
  }
  std::shuffle(blobs.labels.begin(), blobs.labels.end(), rng);
  std::normal_distribution<double> normal(0.0, 1.0);
  blobs.points.resize(n, dim);
  for (int i = 0; i < n; ++i) {
    const int c = blobs.labels[static_cast<std::size_t>(i)];
    for (int d = 0; d < dim; ++d) {
      blobs.points(i, d) = centers(c, d) + normal(rng);
    }
  }
  return blobs;
}

}  // namespace ecoprod
