#include "ecoprod/pipeline.hpp"

#include "ecoprod/plot.hpp"
#include "ecoprod/spectral.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <map>
#include <numeric>
#include <ostream>
#include <set>
#include <sstream>

namespace ecoprod::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

const char* to_string(Stage stage) {
  switch (stage) {
    case Stage::Dea: return "dea";
    case Stage::Cluster: return "cluster";
    case Stage::Train: return "train";
    case Stage::Explain: return "explain";
    case Stage::Causal: return "causal";
  }
  return "?";
}

std::uint64_t stage_seed(std::uint64_t global_seed, Stage stage) {
  return derive_seed(global_seed, static_cast<std::uint64_t>(stage));
}

namespace {

std::string format_real(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::vector<std::string> split_commas(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) {
    if (!cell.empty() && cell.back() == '\r') {
      cell.pop_back();
    }
    out.push_back(cell);
  }
  if (!line.empty() && line.back() == ',') {
    out.emplace_back();
  }
  return out;
}

// Minimal reader for the numeric CSV artifacts this module writes.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  static CsvTable read(const fs::path& path) {
    std::ifstream in(path);
    if (!in) {
      throw ConfigError("cannot open " + path.string());
    }
    CsvTable t;
    std::string line;
    if (!std::getline(in, line)) {
      throw ConfigError(path.string() + ": missing header row");
    }
    t.header = split_commas(line);
    std::size_t row = 0;
    while (std::getline(in, line)) {
      if (line.empty() || line == "\r") {
        continue;
      }
      ++row;
      auto cells = split_commas(line);
      if (cells.size() != t.header.size()) {
        throw ConfigError(path.string() + ": row " + std::to_string(row) + " has " +
                          std::to_string(cells.size()) + " cells, expected " +
                          std::to_string(t.header.size()));
      }
      t.rows.push_back(std::move(cells));
    }
    return t;
  }

  std::size_t column(const std::string& name, const fs::path& path) const {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) {
      throw ConfigError(path.string() + ": missing column '" + name + "'");
    }
    return static_cast<std::size_t>(it - header.begin());
  }
};

double parse_double(const std::string& text, std::size_t row, const std::string& column) {
  double v = 0.0;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size() || !std::isfinite(v)) {
    throw ConfigError("row " + std::to_string(row) + ", column '" + column + "': not a number: '" +
                      text + "'");
  }
  return v;
}

std::int64_t parse_int(const std::string& text, std::size_t row, const std::string& column) {
  std::int64_t v = 0;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size()) {
    throw ConfigError("row " + std::to_string(row) + ", column '" + column + "': not an integer: '" +
                      text + "'");
  }
  return v;
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw Error("cannot write " + path.string());
  }
  return out;
}

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
  return j.contains(key) && !j.at(key).is_null() ? j.at(key).get<T>() : fallback;
}

}  // namespace

void write_json(const fs::path& path, const ordered_json& j) {
  auto out = open_out(path);
  out << j.dump(2) << '\n';
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw ConfigError("cannot open " + path.string());
  }
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": invalid JSON: " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Configuration

causal::CevaeConfig CausalStageConfig::cevae_config(std::uint64_t seed) const {
  causal::CevaeConfig c = preset == "paper" ? causal::CevaeConfig::paper() : causal::CevaeConfig::desk();
  if (cevae_epochs) {
    c.epochs = *cevae_epochs;
  }
  c.mc_samples = mc_samples;
  c.seed = seed;
  return c;
}

PipelineConfig PipelineConfig::from_json(const json& j, const fs::path& base_dir) {
  PipelineConfig c;
  try {
    auto resolve = [&](const std::string& p) {
      const fs::path path(p);
      return path.is_absolute() ? path : base_dir / path;
    };
    const json inputs = j.value("inputs", json::object());
    if (!inputs.contains("provinces") || !inputs.contains("complaints")) {
      throw ConfigError("config needs inputs.provinces and inputs.complaints");
    }
    c.provinces = resolve(inputs.at("provinces").get<std::string>());
    c.complaints = resolve(inputs.at("complaints").get<std::string>());
    c.output_dir = resolve(j.value("output_dir", std::string("out")));
    c.seed = j.value("seed", std::uint64_t{1});

    const json d = j.value("dea", json::object());
    const std::string rts = d.value("returns_to_scale", std::string("vrs"));
    if (rts == "vrs") {
      c.rts = dea::ReturnsToScale::VRS;
    } else if (rts == "crs") {
      c.rts = dea::ReturnsToScale::CRS;
    } else {
      throw ConfigError("dea.returns_to_scale must be 'crs' or 'vrs'");
    }

    const json cl = j.value("cluster", json::object());
    if (cl.contains("k")) {
      const auto& k = cl.at("k");
      if (k.is_string() && k.get<std::string>() == "auto") {
        c.cluster.k.reset();
      } else {
        c.cluster.k = k.get<int>();
      }
    }
    c.cluster.k_max = get_or(cl, "k_max", c.cluster.k_max);
    c.cluster.permutations = get_or(cl, "permutations", c.cluster.permutations);
    c.cluster.smoothed_p = get_or(cl, "smoothed_p", c.cluster.smoothed_p);
    c.cluster.restarts = get_or(cl, "restarts", c.cluster.restarts);

    const json tr = j.value("train", json::object());
    auto& g = c.train.gbm;
    g.rounds = get_or(tr, "rounds", g.rounds);
    g.max_depth = get_or(tr, "max_depth", g.max_depth);
    g.eta = get_or(tr, "eta", g.eta);
    g.lambda = get_or(tr, "lambda", g.lambda);
    g.min_child_cover = get_or(tr, "min_child_cover", g.min_child_cover);
    g.folds = get_or(tr, "folds", g.folds);
    c.train.test_fraction = get_or(tr, "test_fraction", c.train.test_fraction);

    const json ex = j.value("explain", json::object());
    c.explain.archetype_input = get_or(ex, "archetype_input", c.explain.archetype_input);

    const json ca = j.value("causal", json::object());
    if (ca.contains("methods")) {
      c.causal.methods.clear();
      for (const auto& m : ca.at("methods")) {
        c.causal.methods.push_back(causal::parse_method(m.get<std::string>()));
      }
    }
    c.causal.covariates = get_or(ca, "covariates", c.causal.covariates);
    c.causal.bootstrap = get_or(ca, "bootstrap", c.causal.bootstrap);
    c.causal.level = get_or(ca, "level", c.causal.level);
    c.causal.preset = get_or(ca, "preset", c.causal.preset);
    if (ca.contains("epochs") && !ca.at("epochs").is_null()) {
      c.causal.cevae_epochs = ca.at("epochs").get<int>();
    }
    c.causal.mc_samples = get_or(ca, "mc_samples", c.causal.mc_samples);
    c.causal.group_level = get_or(ca, "group_level", c.causal.group_level);
    c.causal.learner.group_level = c.causal.group_level;
    c.causal.learner.heterogeneous_r = get_or(ca, "heterogeneous_r", c.causal.learner.heterogeneous_r);
    if (ca.contains("learner")) {
      const json& l = ca.at("learner");
      auto& b = c.causal.learner.base;
      b.rounds = get_or(l, "rounds", b.rounds);
      b.max_depth = get_or(l, "max_depth", b.max_depth);
      b.eta = get_or(l, "eta", b.eta);
      b.lambda = get_or(l, "lambda", b.lambda);
      b.min_child_cover = get_or(l, "min_child_cover", b.min_child_cover);
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  } catch (const causal::CausalError& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return c;
}

void PipelineConfig::validate() const {
  for (const auto& p : {provinces, complaints}) {
    if (!fs::is_regular_file(p)) {
      throw ConfigError("input file not found: " + p.string());
    }
  }
  if (cluster.k && *cluster.k < 2) {
    throw ConfigError("cluster.k must be >= 2");
  }
  if (cluster.k_max < 3 || cluster.permutations < 0 || cluster.restarts < 1) {
    throw ConfigError("cluster options out of range (k_max >= 3, permutations >= 0, restarts >= 1)");
  }
  try {
    train.gbm.validate();
    causal.learner.validate();
    causal.cevae_config(seed).validate();
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  if (!(train.test_fraction > 0.0 && train.test_fraction < 0.5)) {
    throw ConfigError("train.test_fraction must lie in (0, 0.5)");
  }
  if (explain.archetype_input != "probabilities" && explain.archetype_input != "shap") {
    throw ConfigError("explain.archetype_input must be 'probabilities' or 'shap'");
  }
  if (causal.methods.empty()) {
    throw ConfigError("causal.methods is empty");
  }
  if (causal.bootstrap < 50) {
    throw ConfigError("causal.bootstrap must be >= 50");
  }
  if (!(causal.level > 0.0 && causal.level < 1.0)) {
    throw ConfigError("causal.level must lie in (0, 1)");
  }
  if (causal.preset != "desk" && causal.preset != "paper") {
    throw ConfigError("causal.preset must be 'desk' or 'paper'");
  }
}

void apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("override must look like key.path=value: '" + assignment + "'");
  }
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(text);
  } catch (const json::exception&) {
    value = text;
  }
  json* node = &doc;
  std::istringstream parts(key);
  std::string part;
  std::vector<std::string> path;
  while (std::getline(parts, part, '.')) {
    if (part.empty()) {
      throw ConfigError("empty component in override key '" + key + "'");
    }
    path.push_back(part);
  }
  for (std::size_t i = 0; i + 1 < path.size(); ++i) {
    if (!node->is_object()) {
      throw ConfigError("override key '" + key + "' descends into a non-object");
    }
    node = &(*node)[path[i]];
    if (node->is_null()) {
      *node = json::object();
    }
  }
  if (!node->is_object()) {
    throw ConfigError("override key '" + key + "' descends into a non-object");
  }
  (*node)[path.back()] = value;
}

PipelineConfig load_config(const fs::path& path, const std::vector<std::string>& overrides) {
  json doc = read_json(path);
  for (const auto& o : overrides) {
    apply_override(doc, o);
  }
  return PipelineConfig::from_json(doc, path.parent_path());
}

// ---------------------------------------------------------------------------
// DEA

DeaTable run_dea(const std::vector<ProvinceRecord>& provinces, const ProvinceSchema& schema,
                 dea::ReturnsToScale rts, std::ostream* trace) {
  (void)schema;
  const auto panel = dea::Panel::from_provinces(provinces);
  dea::Options crs;
  crs.rts = dea::ReturnsToScale::CRS;
  crs.simplex.trace = trace;
  dea::Options vrs = crs;
  vrs.rts = dea::ReturnsToScale::VRS;
  DeaTable t;
  t.ids = panel.unit_ids;
  t.theta_crs = dea::scores(panel, crs).theta;
  t.theta_vrs = dea::scores(panel, vrs).theta;
  t.groups = dea::split_by_median(rts == dea::ReturnsToScale::VRS ? t.theta_vrs : t.theta_crs);
  return t;
}

void write_dea_scores(const fs::path& path, const DeaTable& table) {
  auto out = open_out(path);
  out << "id,theta_crs,theta_vrs,group\n";
  for (std::size_t i = 0; i < table.ids.size(); ++i) {
    const auto k = static_cast<Eigen::Index>(i);
    out << table.ids[i] << ',' << format_real(table.theta_crs[k]) << ','
        << format_real(table.theta_vrs[k]) << ',' << to_string(table.groups[i]) << '\n';
  }
}

DeaTable read_dea_scores(const fs::path& path) {
  const auto csv = CsvTable::read(path);
  const auto c_id = csv.column("id", path);
  const auto c_crs = csv.column("theta_crs", path);
  const auto c_vrs = csv.column("theta_vrs", path);
  const auto c_group = csv.column("group", path);
  DeaTable t;
  const auto n = static_cast<Eigen::Index>(csv.rows.size());
  t.theta_crs.resize(n);
  t.theta_vrs.resize(n);
  for (std::size_t r = 0; r < csv.rows.size(); ++r) {
    const auto& row = csv.rows[r];
    t.ids.push_back(parse_int(row[c_id], r + 1, "id"));
    t.theta_crs[static_cast<Eigen::Index>(r)] = parse_double(row[c_crs], r + 1, "theta_crs");
    t.theta_vrs[static_cast<Eigen::Index>(r)] = parse_double(row[c_vrs], r + 1, "theta_vrs");
    try {
      t.groups.push_back(parse_eco_group(row[c_group]));
    } catch (const Error& e) {
      throw ConfigError(path.string() + ": row " + std::to_string(r + 1) + ": " + e.what());
    }
  }
  return t;
}

namespace {

// The score the groups were split on: VRS unless only the CRS split matches.
const Vector& split_scores(const DeaTable& t) {
  try {
    if (dea::split_by_median(t.theta_vrs) == t.groups) {
      return t.theta_vrs;
    }
    if (dea::split_by_median(t.theta_crs) == t.groups) {
      return t.theta_crs;
    }
  } catch (const Error&) {
  }
  return t.theta_vrs;
}

}  // namespace

// ---------------------------------------------------------------------------
// Clustering

ClusterOutput run_cluster(const std::vector<ComplaintRecord>& complaints, const ClusterConfig& config,
                          std::uint64_t seed, const std::optional<DeaTable>& dea_table) {
  if (complaints.size() < 3) {
    throw Error("clustering needs at least three complaints");
  }
  const auto n = static_cast<Eigen::Index>(complaints.size());
  const auto dim = static_cast<Eigen::Index>(complaints.front().embedding.size());
  Matrix emb(n, dim);
  std::vector<int> outcomes;
  ClusterOutput out;
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& c = complaints[static_cast<std::size_t>(i)];
    for (Eigen::Index d = 0; d < dim; ++d) {
      emb(i, d) = c.embedding[static_cast<std::size_t>(d)];
    }
    outcomes.push_back(static_cast<int>(c.response_label));
    out.complaint_ids.push_back(c.id);
  }

  const std::uint64_t cluster_seed = derive_seed(seed, 0);
  const int k_max = std::min<int>(config.k_max, static_cast<int>(n) - 1);
  const auto elbow = spectral::elbow_k(emb, std::max(3, k_max), derive_seed(seed, 2), config.restarts);
  out.k = config.k ? *config.k : elbow.k;
  if (out.k >= n) {
    throw Error("k = " + std::to_string(out.k) + " is not below the number of complaints");
  }
  spectral::SpectralOptions options;
  options.kmeans_restarts = config.restarts;
  const auto result = spectral::spectral_cluster(emb, out.k, cluster_seed, options);
  out.labels = result.labels;

  auto& rep = out.report;
  rep["k"] = out.k;
  rep["k_selection"] = config.k ? "fixed" : "elbow";
  rep["elbow_k"] = elbow.k;
  rep["wcss_curve"] = elbow.wcss;
  rep["bandwidth"] = result.bandwidth;
  rep["eigenvalues"] = std::vector<double>(result.eigenvalues.data(),
                                           result.eigenvalues.data() + result.eigenvalues.size());
  rep["silhouette"] = result.silhouette;
  if (config.permutations > 0) {
    const auto perm = spectral::permutation_test(emb, out.k, config.permutations, cluster_seed,
                                                 config.smoothed_p, options);
    rep["permutation"] = {{"permutations", config.permutations},
                          {"smoothed", config.smoothed_p},
                          {"s_obs", perm.s_obs},
                          {"p_value", perm.p}};
  } else {
    rep["permutation"] = nullptr;
  }
  std::vector<int> sizes(static_cast<std::size_t>(out.k), 0);
  for (int l : out.labels) {
    ++sizes[static_cast<std::size_t>(l)];
  }
  rep["cluster_sizes"] = sizes;
  ordered_json rates = ordered_json::array();
  for (const auto& r : spectral::coproduction_rate_by_cluster(out.labels, outcomes, out.k)) {
    rates.push_back(r ? ordered_json(*r) : ordered_json(nullptr));
  }
  rep["coproduction_rate"] = rates;

  if (dea_table) {
    std::map<std::int64_t, EcoGroup> group_of;
    for (std::size_t i = 0; i < dea_table->ids.size(); ++i) {
      group_of[dea_table->ids[i]] = dea_table->groups[i];
    }
    std::vector<EcoGroup> groups;
    for (const auto& c : complaints) {
      const auto it = group_of.find(c.province_id);
      if (it == group_of.end()) {
        throw Error("complaint " + std::to_string(c.id) + " refers to province " +
                    std::to_string(c.province_id) + " absent from the DEA scores");
      }
      groups.push_back(it->second);
    }
    ordered_json shifts = ordered_json::array();
    for (const auto& s : spectral::centroid_shift(emb, out.labels, groups, out.k)) {
      shifts.push_back({{"cluster", s.cluster},
                        {"distance", s.distance ? ordered_json(*s.distance) : ordered_json(nullptr)}});
    }
    rep["centroid_shift"] = shifts;
  }
  out.projection = spectral::pca_2d(emb);
  return out;
}

void write_cluster_outputs(const fs::path& dir, const ClusterOutput& out) {
  {
    auto csv = open_out(dir / "clusters.csv");
    csv << "complaint_id,cluster\n";
    for (std::size_t i = 0; i < out.labels.size(); ++i) {
      csv << out.complaint_ids[i] << ',' << out.labels[i] << '\n';
    }
  }
  write_json(dir / "cluster_report.json", out.report);
  plot::write_text(dir / "clusters.svg",
                   plot::scatter_svg(out.projection, out.labels, "Complaint clusters (PCA projection)"));
}

std::vector<std::pair<std::int64_t, int>> read_clusters(const fs::path& path) {
  const auto csv = CsvTable::read(path);
  const auto c_id = csv.column("complaint_id", path);
  const auto c_cl = csv.column("cluster", path);
  std::vector<std::pair<std::int64_t, int>> out;
  for (std::size_t r = 0; r < csv.rows.size(); ++r) {
    out.emplace_back(parse_int(csv.rows[r][c_id], r + 1, "complaint_id"),
                     static_cast<int>(parse_int(csv.rows[r][c_cl], r + 1, "cluster")));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Features

FeatureTable build_features(std::vector<ProvinceRecord> provinces, const ProvinceSchema& schema,
                            std::vector<ComplaintRecord> complaints, const DeaTable& dea_table,
                            const std::vector<std::pair<std::int64_t, int>>& clusters, int n_clusters) {
  std::map<std::int64_t, std::size_t> dea_index;
  for (std::size_t i = 0; i < dea_table.ids.size(); ++i) {
    dea_index[dea_table.ids[i]] = i;
  }
  const Vector& theta = split_scores(dea_table);
  std::map<std::int64_t, EcoGroup> group_of;
  for (auto& p : provinces) {
    const auto it = dea_index.find(p.id);
    if (it == dea_index.end()) {
      throw Error("province " + std::to_string(p.id) + " has no DEA score");
    }
    p.eco_score = theta[static_cast<Eigen::Index>(it->second)];
    p.eco_group = dea_table.groups[it->second];
    group_of[p.id] = *p.eco_group;
  }
  std::map<std::int64_t, int> cluster_of(clusters.begin(), clusters.end());
  for (auto& c : complaints) {
    const auto it = cluster_of.find(c.id);
    if (it == cluster_of.end()) {
      throw Error("complaint " + std::to_string(c.id) + " has no cluster assignment");
    }
    c.cluster_id = it->second;
  }
  FeaturePlan plan;
  plan.fiscal = schema.fiscal_columns;
  plan.env_inputs = schema.input_columns;
  plan.n_clusters = n_clusters;
  FeatureTable table;
  table.features = build_feature_matrix(provinces, complaints, plan, schema);
  for (const auto& c : complaints) {
    const auto it = group_of.find(c.province_id);
    if (it == group_of.end()) {
      throw Error("complaint " + std::to_string(c.id) + " refers to unknown province " +
                  std::to_string(c.province_id));
    }
    table.treatment.push_back(it->second == EcoGroup::High ? 1 : 0);
  }
  return table;
}

void write_features(const fs::path& path, const FeatureTable& table) {
  auto out = open_out(path);
  const auto& fm = table.features;
  out << "complaint_id,province_id";
  for (const auto& c : fm.columns) {
    out << ',' << c;
  }
  out << ",treatment,target\n";
  for (Eigen::Index i = 0; i < fm.rows.rows(); ++i) {
    const auto k = static_cast<std::size_t>(i);
    out << fm.complaint_ids[k] << ',' << fm.province_ids[k];
    for (Eigen::Index j = 0; j < fm.rows.cols(); ++j) {
      out << ',' << format_real(fm.rows(i, j));
    }
    out << ',' << table.treatment[k] << ',' << fm.target[k] << '\n';
  }
}

FeatureTable read_features(const fs::path& path) {
  const auto csv = CsvTable::read(path);
  if (csv.header.size() < 5 || csv.header[0] != "complaint_id" || csv.header[1] != "province_id" ||
      csv.header[csv.header.size() - 2] != "treatment" || csv.header.back() != "target") {
    throw ConfigError(path.string() +
                      ": expected columns complaint_id,province_id,<features...>,treatment,target");
  }
  FeatureTable t;
  auto& fm = t.features;
  fm.columns.assign(csv.header.begin() + 2, csv.header.end() - 2);
  const auto n = static_cast<Eigen::Index>(csv.rows.size());
  const auto d = static_cast<Eigen::Index>(fm.columns.size());
  fm.rows.resize(n, d);
  for (std::size_t r = 0; r < csv.rows.size(); ++r) {
    const auto& row = csv.rows[r];
    fm.complaint_ids.push_back(parse_int(row[0], r + 1, "complaint_id"));
    fm.province_ids.push_back(parse_int(row[1], r + 1, "province_id"));
    for (Eigen::Index j = 0; j < d; ++j) {
      fm.rows(static_cast<Eigen::Index>(r), j) =
          parse_double(row[static_cast<std::size_t>(j) + 2], r + 1, fm.columns[static_cast<std::size_t>(j)]);
    }
    const auto treat = parse_int(row[row.size() - 2], r + 1, "treatment");
    const auto target = parse_int(row.back(), r + 1, "target");
    if ((treat != 0 && treat != 1) || (target != 0 && target != 1)) {
      throw ConfigError(path.string() + ": row " + std::to_string(r + 1) +
                        ": treatment and target must be 0 or 1");
    }
    t.treatment.push_back(static_cast<int>(treat));
    fm.target.push_back(static_cast<int>(target));
  }
  return t;
}

// ---------------------------------------------------------------------------
// Training

namespace {

FeatureMatrix select_rows(const FeatureMatrix& fm, const std::vector<Eigen::Index>& rows) {
  FeatureMatrix out;
  out.columns = fm.columns;
  out.rows = fm.rows(rows, Eigen::all);
  for (auto r : rows) {
    const auto k = static_cast<std::size_t>(r);
    out.target.push_back(fm.target[k]);
    out.complaint_ids.push_back(fm.complaint_ids[k]);
    out.province_ids.push_back(fm.province_ids[k]);
  }
  return out;
}

}  // namespace

TrainOutput run_train(const FeatureTable& table, const TrainStageConfig& config, std::uint64_t seed) {
  const auto& fm = table.features;
  // Stratified holdout: the classes are dealt over round(1 / test_fraction)
  // parts and part 0 is held out.
  const int parts = std::max(2, static_cast<int>(std::lround(1.0 / config.test_fraction)));
  const auto part = gbm::stratified_folds(fm.target, parts, derive_seed(seed, 0));
  std::vector<Eigen::Index> train_rows;
  std::vector<Eigen::Index> test_rows;
  for (std::size_t i = 0; i < part.size(); ++i) {
    (part[i] == 0 ? test_rows : train_rows).push_back(static_cast<Eigen::Index>(i));
  }
  const auto train_part = select_rows(fm, train_rows);
  const auto test_part = select_rows(fm, test_rows);

  gbm::TrainConfig cfg = config.gbm;
  cfg.seed = derive_seed(seed, 1);
  const auto cv = gbm::cross_validate(train_part, cfg);
  TrainOutput out;
  out.model = gbm::train_classifier(train_part, cfg);
  const double test_acc = gbm::accuracy(out.model, test_part.rows, test_part.target);

  const double positives = std::accumulate(fm.target.begin(), fm.target.end(), 0.0);
  const double share = positives / static_cast<double>(fm.target.size());
  auto& rep = out.cv_report;
  rep["rows"] = fm.rows.rows();
  rep["features"] = fm.columns.size();
  rep["train_rows"] = train_rows.size();
  rep["test_rows"] = test_rows.size();
  rep["test_fraction"] = config.test_fraction;
  rep["folds"] = cfg.folds;
  rep["fold_accuracy"] = cv.fold_accuracy;
  rep["validation_accuracy"] = cv.mean_accuracy;
  rep["test_accuracy"] = test_acc;
  rep["majority_share"] = std::max(share, 1.0 - share);
  rep["config"] = {{"rounds", cfg.rounds},       {"max_depth", cfg.max_depth},
                   {"eta", cfg.eta},             {"lambda", cfg.lambda},
                   {"min_child_cover", cfg.min_child_cover}};
  rep["train_loss"] = out.model.train_loss;
  return out;
}

void write_train_outputs(const fs::path& dir, const TrainOutput& out) {
  write_json(dir / "model.json", gbm::to_json(out.model));
  write_json(dir / "cv_report.json", out.cv_report);
}

gbm::BoostedModel read_model(const fs::path& path) {
  try {
    return gbm::model_from_json(read_json(path));
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": malformed model: " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Explanation

namespace {

ordered_json top_features(const std::vector<std::string>& names, const Vector& mean_abs, int count) {
  std::vector<int> order(static_cast<std::size_t>(mean_abs.size()));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return mean_abs[a] > mean_abs[b]; });
  ordered_json out = ordered_json::array();
  for (int r = 0; r < std::min<int>(count, static_cast<int>(order.size())); ++r) {
    const int f = order[static_cast<std::size_t>(r)];
    out.push_back({{"feature", names[static_cast<std::size_t>(f)]}, {"mean_abs_shap", mean_abs[f]}});
  }
  return out;
}

}  // namespace

ExplainOutput run_explain(const gbm::BoostedModel& model, const FeatureTable& table,
                          const ExplainConfig& config, std::uint64_t seed) {
  const auto& fm = table.features;
  if (model.feature_names != fm.columns) {
    throw Error("model features do not match the feature table columns");
  }
  ExplainOutput out;
  out.summary = gbm::shap_summary(model, fm.rows);
  const Vector prob = model.predict(fm.rows);

  // Province-level inputs, in ascending province id order.
  std::map<std::int64_t, std::vector<Eigen::Index>> rows_of;
  for (std::size_t i = 0; i < fm.province_ids.size(); ++i) {
    rows_of[fm.province_ids[i]].push_back(static_cast<Eigen::Index>(i));
  }
  const auto np = static_cast<Eigen::Index>(rows_of.size());
  std::vector<double> mean_prob;
  Matrix mean_phi(np, fm.rows.cols());
  Eigen::Index r = 0;
  for (const auto& [id, rows] : rows_of) {
    mean_prob.push_back(prob(rows).mean());
    mean_phi.row(r++) = out.summary.values.phi(rows, Eigen::all).colwise().mean();
  }
  const auto arch = config.archetype_input == "shap" ? gbm::archetype_clusters(mean_phi, seed)
                                                      : gbm::archetype_clusters(mean_prob, seed);
  auto& rep = out.archetypes;
  rep["input"] = config.archetype_input;
  rep["centroid_means"] = arch.centroid_means;
  ordered_json provinces = ordered_json::array();
  std::map<int, std::vector<Eigen::Index>> rows_by_archetype;
  r = 0;
  for (const auto& [id, rows] : rows_of) {
    const int label = arch.labels[static_cast<std::size_t>(r)];
    provinces.push_back({{"province_id", id},
                         {"mean_probability", mean_prob[static_cast<std::size_t>(r)]},
                         {"archetype", label == arch.coproductive ? "co-productive" : "reactive"}});
    auto& bucket = rows_by_archetype[label];
    bucket.insert(bucket.end(), rows.begin(), rows.end());
    ++r;
  }
  rep["provinces"] = provinces;
  ordered_json per = ordered_json::object();
  for (const auto& [label, rows] : rows_by_archetype) {
    const Vector mean_abs = out.summary.values.phi(rows, Eigen::all).cwiseAbs().colwise().mean().transpose();
    per[label == arch.coproductive ? "co-productive" : "reactive"] = {
        {"complaints", rows.size()}, {"top_features", top_features(fm.columns, mean_abs, 10)}};
  }
  rep["archetype_shap"] = per;
  return out;
}

void write_explain_outputs(const fs::path& dir, const ExplainOutput& out, const gbm::BoostedModel& model,
                           const FeatureTable& table) {
  const auto& fm = table.features;
  const auto& phi = out.summary.values.phi;
  {
    auto csv = open_out(dir / "shap.csv");
    csv << "complaint_id,base";
    for (const auto& c : model.feature_names) {
      csv << ',' << c;
    }
    csv << '\n';
    for (Eigen::Index i = 0; i < phi.rows(); ++i) {
      csv << fm.complaint_ids[static_cast<std::size_t>(i)] << ',' << format_real(out.summary.values.base);
      for (Eigen::Index j = 0; j < phi.cols(); ++j) {
        csv << ',' << format_real(phi(i, j));
      }
      csv << '\n';
    }
  }
  plot::write_text(dir / "shap_summary.svg",
                   plot::beeswarm_svg(phi, fm.rows, model.feature_names, out.summary.ranking,
                                      "SHAP summary (margin scale)"));
  write_json(dir / "archetypes.json", out.archetypes);
  std::vector<std::string> labels;
  std::vector<double> values;
  for (const auto& p : out.archetypes.at("provinces")) {
    labels.push_back("province " + std::to_string(p.at("province_id").get<std::int64_t>()) + " (" +
                     p.at("archetype").get<std::string>() + ")");
    values.push_back(p.at("mean_probability").get<double>());
  }
  plot::write_text(dir / "archetypes.svg",
                   plot::bar_svg(labels, values, "Mean predicted co-production probability"));
}

// ---------------------------------------------------------------------------
// Causal estimation

std::vector<std::string> default_covariates(const FeatureMatrix& features) {
  std::vector<std::string> out;
  for (const auto& c : features.columns) {
    if (c.rfind("fiscal:", 0) == 0 && out.size() < 5) {
      out.push_back(c);
    }
  }
  for (const char* extra : {"attention", "sentiment"}) {
    if (std::find(features.columns.begin(), features.columns.end(), extra) != features.columns.end()) {
      out.emplace_back(extra);
    }
  }
  return out;
}

causal::CausalDataset causal_dataset(const FeatureTable& table, const std::vector<std::string>& covariates) {
  const auto& fm = table.features;
  if (covariates.empty()) {
    throw ConfigError("no causal covariates selected");
  }
  std::vector<Eigen::Index> cols;
  for (const auto& c : covariates) {
    const auto it = std::find(fm.columns.begin(), fm.columns.end(), c);
    if (it == fm.columns.end()) {
      throw ConfigError("causal covariate '" + c + "' is not a feature column");
    }
    cols.push_back(static_cast<Eigen::Index>(it - fm.columns.begin()));
  }
  causal::CausalDataset d;
  d.x = fm.rows(Eigen::all, cols);
  d.t = table.treatment;
  d.y = fm.target;
  d.covariate_names = covariates;
  for (auto id : fm.province_ids) {
    d.groups.push_back(std::to_string(id));
  }
  return d;
}

ordered_json run_causal(const FeatureTable& table, const CausalStageConfig& config, std::uint64_t seed) {
  const auto covariates =
      config.covariates.empty() ? default_covariates(table.features) : config.covariates;
  const auto data = causal_dataset(table, covariates);
  data.validate();

  ordered_json rep;
  rep["n"] = data.size();
  rep["treated"] = data.treated_count();
  rep["covariates"] = covariates;
  rep["bootstrap"] = config.bootstrap;
  rep["level"] = config.level;
  rep["group_level"] = config.group_level;
  rep["preset"] = config.preset;

  causal::LearnerConfig learner = config.learner;
  learner.group_level = config.group_level;
  learner.base.seed = derive_seed(seed, 100);
  const Vector e = causal::propensity(data, learner);
  double sum1 = 0.0;
  double sum0 = 0.0;
  for (Eigen::Index i = 0; i < e.size(); ++i) {
    (data.t[static_cast<std::size_t>(i)] == 1 ? sum1 : sum0) += e[i];
  }
  const double n1 = data.treated_count();
  rep["overlap"] = {{"propensity_min", e.minCoeff()},
                    {"propensity_max", e.maxCoeff()},
                    {"mean_treated", sum1 / n1},
                    {"mean_control", sum0 / (static_cast<double>(data.size()) - n1)}};
  rep["naive_difference_in_means"] = causal::difference_in_means(data);

  ordered_json methods = ordered_json::array();
  for (auto m : config.methods) {
    const std::uint64_t ms = derive_seed(seed, static_cast<std::uint64_t>(m) + 1);
    if (m == causal::Method::Cevae) {
      const auto model = causal::cevae_fit(data, config.cevae_config(ms));
      methods.push_back(causal::to_json(causal::cevae_ate(model, data, config.mc_samples, config.bootstrap,
                                                          config.level, config.group_level)));
    } else {
      causal::LearnerConfig lc = learner;
      lc.base.seed = ms;
      methods.push_back(causal::to_json(
          causal::estimate_ate(m, data, lc, config.bootstrap, config.level, derive_seed(ms, 1))));
    }
  }
  rep["methods"] = methods;
  return rep;
}

// ---------------------------------------------------------------------------
// Orchestration

int run_pipeline(const PipelineConfig& config, std::ostream& log) {
  ProvinceSchema schema;
  std::vector<ProvinceRecord> provinces;
  std::vector<ComplaintRecord> complaints;
  try {
    config.validate();
    schema = read_province_schema(config.provinces);
    provinces = load_provinces(config.provinces, schema);
    complaints = load_complaints(config.complaints);
  } catch (const Error& e) {
    log << "error: " << e.what() << '\n';
    return kExitConfigError;
  }

  const fs::path dir = config.output_dir;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) {
    log << "error: cannot create output directory " << dir.string() << ": " << ec.message() << '\n';
    return kExitConfigError;
  }
  fs::remove(dir / "FAILED", ec);

  ordered_json summary;
  summary["seed"] = config.seed;
  ordered_json seeds;
  for (auto s : {Stage::Dea, Stage::Cluster, Stage::Train, Stage::Explain, Stage::Causal}) {
    seeds[to_string(s)] = stage_seed(config.seed, s);
  }
  summary["stage_seeds"] = seeds;
  summary["inputs"] = {{"provinces", provinces.size()}, {"complaints", complaints.size()}};
  ordered_json artifacts;

  Stage current = Stage::Dea;
  try {
    log << "[dea] scoring " << provinces.size() << " provinces\n";
    const auto dea_table = run_dea(provinces, schema, config.rts);
    write_dea_scores(dir / "dea_scores.csv", dea_table);
    artifacts["dea"] = {"dea_scores.csv"};
    const auto high = std::count(dea_table.groups.begin(), dea_table.groups.end(), EcoGroup::High);
    const auto& theta = config.rts == dea::ReturnsToScale::VRS ? dea_table.theta_vrs : dea_table.theta_crs;
    summary["dea"] = {{"returns_to_scale", dea::to_string(config.rts)},
                      {"units", dea_table.ids.size()},
                      {"high", high},
                      {"low", static_cast<long>(dea_table.ids.size()) - high},
                      {"frontier_units", (theta.array() == 1.0).count()},
                      {"median_theta", dea::lower_median(theta)}};

    current = Stage::Cluster;
    log << "[cluster] spectral clustering of " << complaints.size() << " complaints\n";
    const auto clusters = run_cluster(complaints, config.cluster, stage_seed(config.seed, Stage::Cluster),
                                      dea_table);
    write_cluster_outputs(dir, clusters);
    artifacts["cluster"] = {"clusters.csv", "cluster_report.json", "clusters.svg"};
    summary["cluster"] = {{"k", clusters.k},
                          {"silhouette", clusters.report.at("silhouette")},
                          {"p_value", clusters.report.at("permutation").is_null()
                                          ? ordered_json(nullptr)
                                          : clusters.report.at("permutation").at("p_value")}};

    current = Stage::Train;
    std::vector<std::pair<std::int64_t, int>> assignment;
    for (std::size_t i = 0; i < clusters.labels.size(); ++i) {
      assignment.emplace_back(clusters.complaint_ids[i], clusters.labels[i]);
    }
    const auto table = build_features(provinces, schema, complaints, dea_table, assignment, clusters.k);
    write_features(dir / "features.csv", table);
    log << "[train] boosting on " << table.features.rows.rows() << " x " << table.features.rows.cols()
        << " features\n";
    const auto trained = run_train(table, config.train, stage_seed(config.seed, Stage::Train));
    write_train_outputs(dir, trained);
    artifacts["train"] = {"features.csv", "model.json", "cv_report.json"};
    summary["train"] = {{"features", table.features.columns.size()},
                        {"validation_accuracy", trained.cv_report.at("validation_accuracy")},
                        {"test_accuracy", trained.cv_report.at("test_accuracy")}};

    current = Stage::Explain;
    log << "[explain] TreeSHAP attributions\n";
    const auto explained = run_explain(trained.model, table, config.explain,
                                       stage_seed(config.seed, Stage::Explain));
    write_explain_outputs(dir, explained, trained.model, table);
    artifacts["explain"] = {"shap.csv", "shap_summary.svg", "archetypes.json", "archetypes.svg"};
    std::vector<std::string> top;
    for (std::size_t r = 0; r < std::min<std::size_t>(5, explained.summary.ranking.size()); ++r) {
      top.push_back(trained.model.feature_names[static_cast<std::size_t>(explained.summary.ranking[r])]);
    }
    summary["explain"] = {{"top_features", top}};

    current = Stage::Causal;
    log << "[causal] treatment effect estimation\n";
    const auto ate = run_causal(table, config.causal, stage_seed(config.seed, Stage::Causal));
    write_json(dir / "ate_report.json", ate);
    artifacts["causal"] = {"ate_report.json"};
    ordered_json effects;
    for (const auto& m : ate.at("methods")) {
      effects[m.at("method").get<std::string>()] = {{"ate", m.at("ate")}, {"ci", m.at("ci")}};
    }
    summary["causal"] = {{"naive_difference_in_means", ate.at("naive_difference_in_means")},
                         {"estimates", effects}};
  } catch (const std::exception& e) {
    const std::string stage = to_string(current);
    log << "error: stage " << stage << " failed: " << e.what() << '\n';
    try {
      plot::write_text(dir / "FAILED", "stage: " + stage + "\nerror: " + e.what() + "\n");
    } catch (const std::exception&) {
    }
    return kExitStageFailure;
  }
  summary["artifacts"] = artifacts;
  write_json(dir / "summary.json", summary);
  log << "[done] artifacts in " << dir.string() << '\n';
  return kExitOk;
}

}  // namespace ecoprod::pipeline
