#include "ecoprod/pipeline.hpp"

#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;
namespace pl = ecoprod::pipeline;
using nlohmann::json;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("ecoprod_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

int run(const std::string& args) {
  const std::string cmd = std::string(ECOPROD_CLI) + " " + args + " >/dev/null 2>&1";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

// Small fixture shared by the tests in this file.
const fs::path& fixture() {
  static const fs::path dir = [] {
    const auto d = scratch("fixture");
    REQUIRE(run("synth --out " + d.string() + " --provinces 27 --complaints 160 --clusters 4 --dim 8 --seed 3") == 0);
    return d;
  }();
  return dir;
}

json small_config(const fs::path& out) {
  return json{{"inputs", {{"provinces", (fixture() / "provinces.csv").string()},
                          {"complaints", (fixture() / "complaints.jsonl").string()}}},
              {"output_dir", out.string()},
              {"seed", 5},
              {"cluster", {{"k", 4}, {"permutations", 5}}},
              {"train", {{"rounds", 20}}},
              {"causal", {{"methods", {"t", "s"}}, {"bootstrap", 50}, {"learner", {{"rounds", 30}}}}}};
}

fs::path write_config(const fs::path& dir, const json& j) {
  const auto p = dir / "config.json";
  std::ofstream(p) << j.dump(2);
  return p;
}

}  // namespace

TEST_CASE("pipeline: overrides") {
  json doc = {{"a", {{"b", 1}}}};
  pl::apply_override(doc, "a.b=2");
  pl::apply_override(doc, "a.c=text");
  pl::apply_override(doc, "d.e=[1,2]");
  CHECK(doc["a"]["b"] == 2);
  CHECK(doc["a"]["c"] == "text");
  CHECK(doc["d"]["e"].size() == 2);
  CHECK_THROWS_AS(pl::apply_override(doc, "novalue"), pl::ConfigError);
  CHECK_THROWS_AS(pl::apply_override(doc, "a.b.c=1"), pl::ConfigError);
}

TEST_CASE("pipeline: config parsing and validation") {
  const auto dir = scratch("config");
  auto j = small_config(dir / "out");
  j["cluster"]["k"] = "auto";
  const auto c = pl::PipelineConfig::from_json(j, dir);
  CHECK_FALSE(c.cluster.k.has_value());
  CHECK(c.causal.methods.size() == 2);
  CHECK_NOTHROW(c.validate());
  auto bad = c;
  bad.causal.bootstrap = 10;
  CHECK_THROWS_AS(bad.validate(), pl::ConfigError);
  bad = c;
  bad.provinces = dir / "missing.csv";
  CHECK_THROWS_AS(bad.validate(), pl::ConfigError);
  j["dea"]["returns_to_scale"] = "nope";
  CHECK_THROWS_AS(pl::PipelineConfig::from_json(j, dir), pl::ConfigError);
  CHECK(pl::stage_seed(5, pl::Stage::Train) == ecoprod::derive_seed(5, 2));
}

TEST_CASE("pipeline: missing input exits 2 without artifacts") {
  const auto dir = scratch("missing");
  auto j = small_config(dir / "out");
  j["inputs"]["provinces"] = (dir / "nope.csv").string();
  std::ostringstream log;
  CHECK(pl::run_pipeline(pl::PipelineConfig::from_json(j, dir), log) == pl::kExitConfigError);
  CHECK(log.str().find("nope.csv") != std::string::npos);
  CHECK_FALSE(fs::exists(dir / "out"));
  CHECK(run("pipeline --config " + write_config(dir, j).string()) == 2);
  CHECK(run("pipeline --config " + (dir / "absent.json").string()) == 2);
}

TEST_CASE("pipeline: a failing stage leaves a FAILED marker") {
  const auto dir = scratch("failing");
  auto j = small_config(dir / "out");
  j["cluster"]["k"] = 500;  // more clusters than complaints
  std::ostringstream log;
  CHECK(pl::run_pipeline(pl::PipelineConfig::from_json(j, dir), log) == pl::kExitStageFailure);
  CHECK(fs::exists(dir / "out" / "dea_scores.csv"));
  REQUIRE(fs::exists(dir / "out" / "FAILED"));
  CHECK(slurp(dir / "out" / "FAILED").find("cluster") != std::string::npos);
  CHECK_FALSE(fs::exists(dir / "out" / "summary.json"));
}

TEST_CASE("pipeline: stages run standalone reproduce the pipeline artifacts") {
  const auto dir = scratch("stages");
  const auto pipe_out = dir / "pipe";
  const auto cfg_path = write_config(dir, small_config(pipe_out));
  REQUIRE(run("pipeline --config " + cfg_path.string()) == 0);
  for (const char* f : {"dea_scores.csv", "clusters.csv", "cluster_report.json", "clusters.svg", "features.csv",
                        "model.json", "cv_report.json", "shap.csv", "shap_summary.svg", "archetypes.json",
                        "ate_report.json", "summary.json"}) {
    CAPTURE(f);
    CHECK(fs::exists(pipe_out / f));
  }
  const auto summary = json::parse(slurp(pipe_out / "summary.json"));
  CHECK(summary.at("artifacts").at("dea").at(0) == "dea_scores.csv");

  const auto s = dir / "manual";
  const std::string prov = (fixture() / "provinces.csv").string();
  const std::string comp = (fixture() / "complaints.jsonl").string();
  REQUIRE(run("dea --provinces " + prov + " --out " + s.string()) == 0);
  REQUIRE(run("cluster --complaints " + comp + " --dea " + (s / "dea_scores.csv").string() +
              " --k 4 --permutations 5 --seed 5 --out " + s.string()) == 0);
  REQUIRE(run("train --provinces " + prov + " --complaints " + comp + " --dea " + (s / "dea_scores.csv").string() +
              " --clusters " + (s / "clusters.csv").string() + " --rounds 20 --seed 5 --out " + s.string()) == 0);
  REQUIRE(run("explain --features " + (s / "features.csv").string() + " --model " + (s / "model.json").string() +
              " --seed 5 --out " + s.string()) == 0);
  for (const char* f : {"dea_scores.csv", "clusters.csv", "cluster_report.json", "features.csv", "model.json",
                        "cv_report.json", "shap.csv", "archetypes.json"}) {
    CAPTURE(f);
    CHECK(slurp(pipe_out / f) == slurp(s / f));
  }
}

TEST_CASE("pipeline: causal subcommand") {
  const auto dir = scratch("causal");
  const auto out = dir / "pipe";
  REQUIRE(run("pipeline --config " + write_config(dir, small_config(out)).string()) == 0);
  REQUIRE(run("causal --features " + (out / "features.csv").string() +
              " --method t --bootstrap 50 --seed 5 --out " + dir.string()) == 0);
  const auto rep = json::parse(slurp(dir / "ate_report.json"));
  REQUIRE(rep.at("methods").size() == 1);
  CHECK(rep.at("methods").at(0).at("method") == "t");
  CHECK(run("causal --features " + (out / "features.csv").string() + " --bootstrap 10") == 2);
  CHECK(run("causal --features " + (out / "features.csv").string() + " --method z") == 2);
}

TEST_CASE("cli: synth") {
  const auto a = scratch("synth_a");
  const auto b = scratch("synth_b");
  const std::string flags = " --provinces 27 --complaints 50 --clusters 3 --dim 6 --seed 9";
  REQUIRE(run("synth --out " + a.string() + flags) == 0);
  REQUIRE(run("synth --out " + b.string() + flags) == 0);
  for (const char* f : {"provinces.csv", "complaints.jsonl", "ground_truth.json"}) {
    CHECK(slurp(a / f) == slurp(b / f));
  }
  CHECK(run("synth --out " + a.string() + " --clusters 0") == 2);
  CHECK(run("no-such-command") == 2);
}

TEST_CASE("pipeline: feature table round trip") {
  const auto dir = scratch("features");
  const auto out = dir / "pipe";
  REQUIRE(run("pipeline --config " + write_config(dir, small_config(out)).string()) == 0);
  const auto table = pl::read_features(out / "features.csv");
  pl::write_features(dir / "copy.csv", table);
  CHECK(slurp(out / "features.csv") == slurp(dir / "copy.csv"));
  const auto covs = pl::default_covariates(table.features);
  CHECK(covs.size() == 7);
  CHECK(covs.back() == "sentiment");
  const auto data = pl::causal_dataset(table, covs);
  CHECK(data.x.cols() == 7);
  CHECK_THROWS_AS(pl::causal_dataset(table, {"nope"}), pl::ConfigError);
}
