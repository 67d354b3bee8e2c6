#include "ecoprod/dataset.hpp"

#include <json.hpp>

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace ecoprod {

const char* to_string(EcoGroup group) { return group == EcoGroup::High ? "high" : "low"; }

EcoGroup parse_eco_group(const std::string& text) {
  if (text == "high" || text == "High" || text == "1") {
    return EcoGroup::High;
  }
  if (text == "low" || text == "Low" || text == "0") {
    return EcoGroup::Low;
  }
  throw IngestError("unknown eco-efficiency group '" + text + "'");
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string current;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        current += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        current += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(current));
      current.clear();
    } else if (c != '\r') {
      current += c;
    }
  }
  fields.push_back(std::move(current));
  return fields;
}

std::string csv_escape(const std::string& field) {
  if (field.find_first_of(",\"\n") == std::string::npos) {
    return field;
  }
  std::string out = "\"";
  for (char c : field) {
    out += c;
    if (c == '"') {
      out += '"';
    }
  }
  return out + "\"";
}

std::string location(std::size_t row, const std::string& column) {
  return "row " + std::to_string(row) + ", column '" + column + "'";
}

double parse_real(const std::string& text, std::size_t row, const std::string& column) {
  double value = 0.0;
  const char* begin = text.data();
  const char* end = text.data() + text.size();
  while (begin < end && *begin == ' ') {
    ++begin;
  }
  if (begin < end && *begin == '+') {
    ++begin;
  }
  const auto [ptr, ec] = std::from_chars(begin, end, value);
  if (ec != std::errc() || ptr != end || begin == end) {
    throw IngestError(location(row, column) + ": non-numeric cell '" + text + "'");
  }
  if (!std::isfinite(value)) {
    throw IngestError(location(row, column) + ": non-finite value");
  }
  return value;
}

std::int64_t parse_integer(const std::string& text, std::size_t row, const std::string& column) {
  std::int64_t value = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size() || text.empty()) {
    throw IngestError(location(row, column) + ": expected an integer, got '" + text + "'");
  }
  return value;
}

std::string format_real(double value) {
  std::array<char, 64> buffer{};
  const auto [ptr, ec] = std::to_chars(buffer.data(), buffer.data() + buffer.size(), value);
  return std::string(buffer.data(), ptr);
}

}  // namespace

void validate_province(const ProvinceRecord& record) {
  const std::string who = "province " + std::to_string(record.id);
  bool any_positive = false;
  for (double v : record.env_inputs) {
    if (!std::isfinite(v) || v < 0.0) {
      throw IngestError(who + ": environmental inputs must be finite and non-negative");
    }
    any_positive = any_positive || v > 0.0;
  }
  if (!any_positive) {
    throw IngestError(who + ": at least one environmental input must be positive");
  }
  if (!std::isfinite(record.gdp_output) || record.gdp_output <= 0.0) {
    throw IngestError(who + ": gdp_output must be positive");
  }
  if (record.eco_score && !(*record.eco_score > 0.0 && *record.eco_score <= 1.0)) {
    throw IngestError(who + ": eco_score must lie in (0, 1]");
  }
}

ProvinceSchema read_province_schema(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw IngestError("cannot open provinces file " + path.string());
  }
  std::string line;
  if (!std::getline(in, line)) {
    throw IngestError(path.string() + ": missing header row");
  }
  if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF) {
    line.erase(0, 3);
  }
  const auto header = split_csv_line(line);
  if (header.size() < 3 || header[0] != "id" || header[1] != "name") {
    throw IngestError(path.string() + ": header must start with id,name");
  }
  const auto gdp = std::find(header.begin(), header.end(), "gdp_output");
  if (gdp == header.end()) {
    throw IngestError(path.string() + ": missing column 'gdp_output'");
  }
  ProvinceSchema schema;
  schema.input_columns.assign(header.begin() + 2, gdp);
  schema.fiscal_columns.assign(gdp + 1, header.end());
  if (schema.input_columns.empty()) {
    throw IngestError(path.string() + ": no input columns before gdp_output");
  }
  return schema;
}

std::vector<ProvinceRecord> load_provinces(const std::filesystem::path& path,
                                           const ProvinceSchema& schema) {
  std::ifstream in(path);
  if (!in) {
    throw IngestError("cannot open provinces file " + path.string());
  }
  std::string line;
  if (!std::getline(in, line)) {
    throw IngestError(path.string() + ": missing header row");
  }
  if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF) {
    line.erase(0, 3);  // UTF-8 BOM
  }
  const auto header = split_csv_line(line);

  std::vector<std::string> expected = {"id", "name"};
  expected.insert(expected.end(), schema.input_columns.begin(), schema.input_columns.end());
  expected.push_back("gdp_output");
  for (std::size_t c = 0; c < expected.size(); ++c) {
    if (c >= header.size() || header[c] != expected[c]) {
      throw IngestError(path.string() + ": missing column '" + expected[c] + "' at position " +
                        std::to_string(c + 1));
    }
  }
  std::vector<std::string> fiscal = schema.fiscal_columns;
  if (fiscal.empty()) {
    fiscal.assign(header.begin() + static_cast<std::ptrdiff_t>(expected.size()), header.end());
  } else {
    for (std::size_t f = 0; f < fiscal.size(); ++f) {
      const std::size_t c = expected.size() + f;
      if (c >= header.size() || header[c] != fiscal[f]) {
        throw IngestError(path.string() + ": missing column '" + fiscal[f] + "'");
      }
    }
  }
  const std::size_t width = expected.size() + fiscal.size();

  std::vector<ProvinceRecord> records;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") {
      continue;
    }
    ++row;
    const auto cells = split_csv_line(line);
    if (cells.size() != width) {
      throw IngestError("row " + std::to_string(row) + ": expected " + std::to_string(width) +
                        " cells, found " + std::to_string(cells.size()));
    }
    ProvinceRecord r;
    r.id = parse_integer(cells[0], row, "id");
    r.name = cells[1];
    std::size_t c = 2;
    for (const auto& col : schema.input_columns) {
      const double v = parse_real(cells[c++], row, col);
      if (v < 0.0) {
        throw IngestError(location(row, col) + ": negative input " + cells[c - 1]);
      }
      r.env_inputs.push_back(v);
    }
    r.gdp_output = parse_real(cells[c++], row, "gdp_output");
    if (r.gdp_output <= 0.0) {
      throw IngestError(location(row, "gdp_output") + ": output must be positive, got " +
                        cells[c - 1]);
    }
    for (const auto& col : fiscal) {
      r.fiscal_features[col] = parse_real(cells[c++], row, col);
    }
    if (!r.env_inputs.empty() &&
        std::none_of(r.env_inputs.begin(), r.env_inputs.end(), [](double v) { return v > 0; })) {
      throw IngestError("row " + std::to_string(row) + ": all environmental inputs are zero");
    }
    records.push_back(std::move(r));
  }
  return records;
}

void write_provinces(const std::filesystem::path& path, const std::vector<ProvinceRecord>& records,
                     const ProvinceSchema& schema) {
  std::ofstream out(path);
  if (!out) {
    throw IngestError("cannot write " + path.string());
  }
  std::vector<std::string> fiscal = schema.fiscal_columns;
  if (fiscal.empty() && !records.empty()) {
    for (const auto& [name, _] : records.front().fiscal_features) {
      fiscal.push_back(name);
    }
  }
  out << "id,name";
  for (const auto& c : schema.input_columns) {
    out << ',' << csv_escape(c);
  }
  out << ",gdp_output";
  for (const auto& c : fiscal) {
    out << ',' << csv_escape(c);
  }
  out << '\n';
  for (const auto& r : records) {
    if (r.env_inputs.size() != schema.input_columns.size()) {
      throw IngestError("province " + std::to_string(r.id) + " does not match the input schema");
    }
    out << r.id << ',' << csv_escape(r.name);
    for (double v : r.env_inputs) {
      out << ',' << format_real(v);
    }
    out << ',' << format_real(r.gdp_output);
    for (const auto& c : fiscal) {
      const auto it = r.fiscal_features.find(c);
      if (it == r.fiscal_features.end()) {
        throw IngestError("province " + std::to_string(r.id) + " lacks fiscal feature " + c);
      }
      out << ',' << format_real(it->second);
    }
    out << '\n';
  }
}

std::vector<ComplaintRecord> load_complaints(const std::filesystem::path& path,
                                             std::optional<std::size_t> dimension) {
  std::ifstream in(path);
  if (!in) {
    throw IngestError("cannot open complaints file " + path.string());
  }
  std::vector<ComplaintRecord> records;
  std::string line;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") {
      continue;
    }
    ++row;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw IngestError("line " + std::to_string(row) + ": invalid JSON (" + e.what() + ")");
    }
    try {
      ComplaintRecord r;
      r.id = j.at("id").get<std::int64_t>();
      r.province_id = j.at("province_id").get<std::int64_t>();
      r.embedding = j.at("embedding").get<std::vector<double>>();
      r.sentiment = j.at("sentiment").get<double>();
      const auto& attention = j.at("attention");
      r.attention = attention.is_boolean() ? attention.get<bool>() : attention.get<int>() != 0;
      const int label = j.at("label").get<int>();
      if (label == 1) {
        r.response_label = ResponseLabel::CoProduction;
      } else if (label == 0) {
        r.response_label = ResponseLabel::OneWay;
      } else {
        throw IngestError("line " + std::to_string(row) + ": unknown label value " +
                          std::to_string(label));
      }
      if (auto it = j.find("cluster"); it != j.end() && !it->is_null()) {
        r.cluster_id = it->get<int>();
      }
      if (!dimension) {
        dimension = r.embedding.size();
      }
      if (r.embedding.size() != *dimension) {
        throw IngestError("line " + std::to_string(row) + ": embedding dimension mismatch (got " +
                          std::to_string(r.embedding.size()) + ", declared " +
                          std::to_string(*dimension) + ")");
      }
      records.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw IngestError("line " + std::to_string(row) + ": " + e.what());
    }
  }
  return records;
}

void write_complaints(const std::filesystem::path& path,
                      const std::vector<ComplaintRecord>& records) {
  std::ofstream out(path);
  if (!out) {
    throw IngestError("cannot write " + path.string());
  }
  for (const auto& r : records) {
    nlohmann::ordered_json j;
    j["id"] = r.id;
    j["province_id"] = r.province_id;
    j["embedding"] = r.embedding;
    j["sentiment"] = r.sentiment;
    j["attention"] = r.attention ? 1 : 0;
    j["label"] = static_cast<int>(r.response_label);
    if (r.cluster_id) {
      j["cluster"] = *r.cluster_id;
    }
    out << j.dump() << '\n';
  }
}

std::size_t FeaturePlan::feature_count() const {
  std::size_t d = (eco_efficiency ? 1 : 0) + fiscal.size() + env_inputs.size() +
                  (attention ? 1 : 0) + (sentiment ? 1 : 0);
  if (cluster == ClusterEncoding::OneHot) {
    d += static_cast<std::size_t>(n_clusters);
  } else if (cluster == ClusterEncoding::Id) {
    d += 1;
  }
  return d;
}

Eigen::Index FeatureMatrix::column_index(const std::string& name) const {
  for (std::size_t c = 0; c < columns.size(); ++c) {
    if (columns[c] == name) {
      return static_cast<Eigen::Index>(c);
    }
  }
  throw Error("feature column '" + name + "' not present");
}

FeatureMatrix build_feature_matrix(const std::vector<ProvinceRecord>& provinces,
                                   const std::vector<ComplaintRecord>& complaints,
                                   const FeaturePlan& plan, const ProvinceSchema& schema) {
  std::map<std::int64_t, const ProvinceRecord*> by_id;
  for (const auto& p : provinces) {
    by_id[p.id] = &p;
  }
  std::vector<std::size_t> env_index;
  for (const auto& name : plan.env_inputs) {
    const auto it = std::find(schema.input_columns.begin(), schema.input_columns.end(), name);
    if (it == schema.input_columns.end()) {
      throw Error("requested environmental feature '" + name + "' is not an input column");
    }
    env_index.push_back(static_cast<std::size_t>(it - schema.input_columns.begin()));
  }

  FeatureMatrix fm;
  if (plan.eco_efficiency) {
    fm.columns.push_back("eco_efficiency");
  }
  for (const auto& f : plan.fiscal) {
    fm.columns.push_back("fiscal:" + f);
  }
  for (const auto& e : plan.env_inputs) {
    fm.columns.push_back("env:" + e);
  }
  if (plan.cluster == ClusterEncoding::OneHot) {
    for (int c = 0; c < plan.n_clusters; ++c) {
      fm.columns.push_back("cluster_" + std::to_string(c));
    }
  } else if (plan.cluster == ClusterEncoding::Id) {
    fm.columns.push_back("cluster_id");
  }
  if (plan.attention) {
    fm.columns.push_back("attention");
  }
  if (plan.sentiment) {
    fm.columns.push_back("sentiment");
  }

  const auto n = static_cast<Eigen::Index>(complaints.size());
  fm.rows = Matrix::Zero(n, static_cast<Eigen::Index>(fm.columns.size()));
  fm.target.reserve(complaints.size());
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& c = complaints[static_cast<std::size_t>(i)];
    const auto it = by_id.find(c.province_id);
    if (it == by_id.end()) {
      throw Error("complaint " + std::to_string(c.id) + " refers to unknown province " +
                  std::to_string(c.province_id));
    }
    const ProvinceRecord& p = *it->second;
    Eigen::Index col = 0;
    if (plan.eco_efficiency) {
      if (!p.eco_score) {
        throw Error("province " + std::to_string(p.id) + " has no eco_efficiency score");
      }
      fm.rows(i, col++) = *p.eco_score;
    }
    for (const auto& f : plan.fiscal) {
      const auto fit = p.fiscal_features.find(f);
      if (fit == p.fiscal_features.end()) {
        throw Error("requested fiscal feature '" + f + "' absent for province " +
                    std::to_string(p.id));
      }
      fm.rows(i, col++) = fit->second;
    }
    for (std::size_t e : env_index) {
      fm.rows(i, col++) = p.env_inputs.at(e);
    }
    if (plan.cluster != ClusterEncoding::None) {
      if (!c.cluster_id || *c.cluster_id < 0 || *c.cluster_id >= plan.n_clusters) {
        throw Error("complaint " + std::to_string(c.id) + " has no valid cluster id");
      }
      if (plan.cluster == ClusterEncoding::OneHot) {
        fm.rows(i, col + *c.cluster_id) = 1.0;
        col += plan.n_clusters;
      } else {
        fm.rows(i, col++) = *c.cluster_id;
      }
    }
    if (plan.attention) {
      fm.rows(i, col++) = c.attention ? 1.0 : 0.0;
    }
    if (plan.sentiment) {
      fm.rows(i, col++) = c.sentiment;
    }
    fm.target.push_back(static_cast<int>(c.response_label));
    fm.complaint_ids.push_back(c.id);
    fm.province_ids.push_back(c.province_id);
  }
  if (!fm.rows.allFinite()) {
    throw Error("feature matrix contains non-finite entries");
  }
  return fm;
}

}  // namespace ecoprod
