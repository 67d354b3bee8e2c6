// Batch command line front end. Exit status: 0 success, 1 stage failure,
// 2 configuration or input error.

#include "ecoprod/pipeline.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <iostream>

namespace fs = std::filesystem;
namespace pl = ecoprod::pipeline;
using ecoprod::pipeline::Stage;

namespace {

// Runs `load` (input/validation problems exit 2) and then `compute` (exit 1).
template <typename Load, typename Compute>
int guarded(const char* stage, Load&& load, Compute&& compute) {
  try {
    load();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return pl::kExitConfigError;
  }
  try {
    compute();
  } catch (const std::exception& e) {
    std::cerr << "error: stage " << stage << " failed: " << e.what() << '\n';
    return pl::kExitStageFailure;
  }
  return pl::kExitOk;
}

void make_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) {
    throw pl::ConfigError("cannot create " + dir.string() + ": " + ec.message());
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ecoprod: eco-efficiency and environmental co-production analysis"};
  app.require_subcommand(1);
  int status = 0;

  // synth ---------------------------------------------------------------
  auto* synth = app.add_subcommand("synth", "Generate a synthetic fixture with planted ground truth");
  ecoprod::SyntheticSpec spec;
  fs::path synth_out = "fixture";
  synth->add_option("--out", synth_out, "Output directory");
  synth->add_option("--provinces", spec.n_provinces, "Number of provinces");
  synth->add_option("--complaints", spec.n_complaints, "Number of complaints");
  synth->add_option("--clusters", spec.n_clusters, "Number of planted complaint clusters");
  synth->add_option("--dim", spec.embedding_dim, "Embedding dimension");
  synth->add_option("--inputs", spec.n_inputs, "Environmental input columns");
  synth->add_option("--fiscal", spec.n_fiscal, "Fiscal feature columns");
  synth->add_option("--ate", spec.true_ate, "Planted average treatment effect");
  synth->add_option("--confounding", spec.confounding_strength, "Latent confounding strength");
  synth->add_option("--separation", spec.cluster_separation, "Cluster centre separation in noise sd");
  synth->add_option("--seed", spec.seed, "Seed");
  synth->callback([&] {
    ecoprod::SyntheticData data;
    status = guarded(
        "synth",
        [&] {
          spec.validate();
          make_dir(synth_out);
        },
        [&] {
          data = ecoprod::generate_synthetic(spec);
          ecoprod::write_provinces(synth_out / "provinces.csv", data.provinces, data.schema());
          ecoprod::write_complaints(synth_out / "complaints.jsonl", data.complaints);
          ecoprod::write_ground_truth(synth_out / "ground_truth.json", spec, data.truth);
        });
  });

  // dea -----------------------------------------------------------------
  auto* dea = app.add_subcommand("dea", "Score provinces by DEA and split at the median");
  fs::path dea_provinces;
  fs::path dea_out = ".";
  std::string dea_rts = "vrs";
  bool dea_trace = false;
  dea->add_option("--provinces", dea_provinces, "provinces.csv")->required();
  dea->add_option("--out", dea_out, "Output directory");
  dea->add_option("--rts", dea_rts, "Returns to scale used for the group split")
      ->check(CLI::IsMember({"crs", "vrs"}));
  dea->add_flag("--trace-simplex", dea_trace, "Dump every simplex pivot to stderr");
  dea->callback([&] {
    ecoprod::ProvinceSchema schema;
    std::vector<ecoprod::ProvinceRecord> provinces;
    status = guarded(
        "dea",
        [&] {
          schema = ecoprod::read_province_schema(dea_provinces);
          provinces = ecoprod::load_provinces(dea_provinces, schema);
          make_dir(dea_out);
        },
        [&] {
          const auto rts = dea_rts == "crs" ? ecoprod::dea::ReturnsToScale::CRS : ecoprod::dea::ReturnsToScale::VRS;
          const auto table = pl::run_dea(provinces, schema, rts, dea_trace ? &std::cerr : nullptr);
          pl::write_dea_scores(dea_out / "dea_scores.csv", table);
        });
  });

  // cluster -------------------------------------------------------------
  auto* cluster = app.add_subcommand("cluster", "Spectral clustering of complaint embeddings");
  fs::path cl_complaints;
  fs::path cl_dea;
  fs::path cl_out = ".";
  pl::ClusterConfig cl_cfg;
  int cl_k = 8;
  bool cl_auto = false;
  std::uint64_t cl_seed = 1;
  cluster->add_option("--complaints", cl_complaints, "complaints.jsonl")->required();
  cluster->add_option("--dea", cl_dea, "dea_scores.csv, enables centroid shifts");
  cluster->add_option("--out", cl_out, "Output directory");
  auto* k_opt = cluster->add_option("--k", cl_k, "Number of clusters");
  cluster->add_flag("--auto-k", cl_auto, "Choose k by the elbow rule")->excludes(k_opt);
  cluster->add_option("--kmax", cl_cfg.k_max, "Largest k on the elbow curve");
  cluster->add_option("--permutations", cl_cfg.permutations, "Permutation test replicates (0 disables)");
  cluster->add_flag("--smoothed-p", cl_cfg.smoothed_p, "Use (1 + count) / (1 + N)");
  cluster->add_option("--restarts", cl_cfg.restarts, "k-means restarts");
  cluster->add_option("--seed", cl_seed, "Global seed");
  cluster->callback([&] {
    std::vector<ecoprod::ComplaintRecord> complaints;
    std::optional<pl::DeaTable> table;
    status = guarded(
        "cluster",
        [&] {
          if (cl_auto) {
            cl_cfg.k.reset();
          } else {
            cl_cfg.k = cl_k;
          }
          if (cl_cfg.k && *cl_cfg.k < 2) {
            throw pl::ConfigError("--k must be >= 2");
          }
          complaints = ecoprod::load_complaints(cl_complaints);
          if (!cl_dea.empty()) {
            table = pl::read_dea_scores(cl_dea);
          }
          make_dir(cl_out);
        },
        [&] {
          const auto out = pl::run_cluster(complaints, cl_cfg, pl::stage_seed(cl_seed, Stage::Cluster), table);
          pl::write_cluster_outputs(cl_out, out);
        });
  });

  // train ---------------------------------------------------------------
  auto* train = app.add_subcommand("train", "Build features and fit the boosted classifier");
  fs::path tr_provinces;
  fs::path tr_complaints;
  fs::path tr_dea;
  fs::path tr_clusters;
  fs::path tr_features;
  fs::path tr_out = ".";
  pl::TrainStageConfig tr_cfg;
  std::uint64_t tr_seed = 1;
  train->add_option("--features", tr_features, "Existing features.csv (skips feature building)");
  train->add_option("--provinces", tr_provinces, "provinces.csv");
  train->add_option("--complaints", tr_complaints, "complaints.jsonl");
  train->add_option("--dea", tr_dea, "dea_scores.csv");
  train->add_option("--clusters", tr_clusters, "clusters.csv");
  train->add_option("--out", tr_out, "Output directory");
  train->add_option("--rounds", tr_cfg.gbm.rounds, "Boosting rounds");
  train->add_option("--max-depth", tr_cfg.gbm.max_depth, "Tree depth");
  train->add_option("--eta", tr_cfg.gbm.eta, "Learning rate");
  train->add_option("--lambda", tr_cfg.gbm.lambda, "L2 leaf penalty");
  train->add_option("--min-child-cover", tr_cfg.gbm.min_child_cover, "Minimum hessian cover per leaf");
  train->add_option("--folds", tr_cfg.gbm.folds, "Cross-validation folds");
  train->add_option("--test-fraction", tr_cfg.test_fraction, "Held-out test share");
  train->add_option("--seed", tr_seed, "Global seed");
  train->callback([&] {
    pl::FeatureTable table;
    bool built = false;
    status = guarded(
        "train",
        [&] {
          tr_cfg.gbm.validate();
          if (!(tr_cfg.test_fraction > 0.0 && tr_cfg.test_fraction < 0.5)) {
            throw pl::ConfigError("--test-fraction must lie in (0, 0.5)");
          }
          make_dir(tr_out);
          if (!tr_features.empty()) {
            table = pl::read_features(tr_features);
            return;
          }
          if (tr_provinces.empty() || tr_complaints.empty() || tr_dea.empty() || tr_clusters.empty()) {
            throw pl::ConfigError("train needs --features or all of --provinces --complaints --dea --clusters");
          }
          const auto schema = ecoprod::read_province_schema(tr_provinces);
          auto provinces = ecoprod::load_provinces(tr_provinces, schema);
          auto complaints = ecoprod::load_complaints(tr_complaints);
          const auto dea_table = pl::read_dea_scores(tr_dea);
          const auto clusters = pl::read_clusters(tr_clusters);
          int k = 0;
          for (const auto& [id, c] : clusters) {
            k = std::max(k, c + 1);
          }
          table = pl::build_features(std::move(provinces), schema, std::move(complaints), dea_table, clusters, k);
          built = true;
        },
        [&] {
          if (built) {
            pl::write_features(tr_out / "features.csv", table);
          }
          pl::write_train_outputs(tr_out, pl::run_train(table, tr_cfg, pl::stage_seed(tr_seed, Stage::Train)));
        });
  });

  // explain -------------------------------------------------------------
  auto* explain = app.add_subcommand("explain", "TreeSHAP attributions and province archetypes");
  fs::path ex_features;
  fs::path ex_model;
  fs::path ex_out = ".";
  pl::ExplainConfig ex_cfg;
  std::uint64_t ex_seed = 1;
  explain->add_option("--features", ex_features, "features.csv")->required();
  explain->add_option("--model", ex_model, "model.json")->required();
  explain->add_option("--out", ex_out, "Output directory");
  explain->add_option("--archetype-input", ex_cfg.archetype_input, "Archetype clustering input")
      ->check(CLI::IsMember({"probabilities", "shap"}));
  explain->add_option("--seed", ex_seed, "Global seed");
  explain->callback([&] {
    pl::FeatureTable table;
    ecoprod::gbm::BoostedModel model;
    status = guarded(
        "explain",
        [&] {
          table = pl::read_features(ex_features);
          model = pl::read_model(ex_model);
          make_dir(ex_out);
        },
        [&] {
          const auto out = pl::run_explain(model, table, ex_cfg, pl::stage_seed(ex_seed, Stage::Explain));
          pl::write_explain_outputs(ex_out, out, model, table);
        });
  });

  // causal --------------------------------------------------------------
  auto* causal = app.add_subcommand("causal", "Average treatment effect of high eco-efficiency");
  fs::path ca_features;
  fs::path ca_out = ".";
  pl::CausalStageConfig ca_cfg;
  std::string ca_method = "all";
  std::uint64_t ca_seed = 1;
  int ca_epochs = 0;
  causal->add_option("--features", ca_features, "features.csv")->required();
  causal->add_option("--out", ca_out, "Output directory");
  causal->add_option("--method", ca_method, "Estimator")
      ->check(CLI::IsMember({"cevae", "s", "t", "x", "r", "diff_means", "all"}));
  causal->add_option("--bootstrap", ca_cfg.bootstrap, "Bootstrap replicates (>= 50)");
  causal->add_option("--level", ca_cfg.level, "Confidence level");
  causal->add_option("--preset", ca_cfg.preset, "CEVAE preset")->check(CLI::IsMember({"paper", "desk"}));
  causal->add_option("--epochs", ca_epochs, "Override CEVAE epochs");
  causal->add_option("--mc", ca_cfg.mc_samples, "CEVAE Monte Carlo draws per unit");
  causal->add_option("--covariates", ca_cfg.covariates, "Covariate columns (default selection if omitted)")
      ->delimiter(',');
  causal->add_flag("--group-level", ca_cfg.group_level, "Average effects per province first");
  causal->add_option("--seed", ca_seed, "Global seed");
  causal->callback([&] {
    pl::FeatureTable table;
    status = guarded(
        "causal",
        [&] {
          if (ca_method != "all") {
            ca_cfg.methods = {ecoprod::causal::parse_method(ca_method)};
          }
          if (ca_epochs > 0) {
            ca_cfg.cevae_epochs = ca_epochs;
          }
          if (ca_cfg.bootstrap < 50) {
            throw pl::ConfigError("--bootstrap must be >= 50");
          }
          ca_cfg.cevae_config(ca_seed).validate();
          table = pl::read_features(ca_features);
          pl::causal_dataset(table, ca_cfg.covariates.empty() ? pl::default_covariates(table.features)
                                                              : ca_cfg.covariates)
              .validate();
          make_dir(ca_out);
        },
        [&] {
          pl::write_json(ca_out / "ate_report.json",
                         pl::run_causal(table, ca_cfg, pl::stage_seed(ca_seed, Stage::Causal)));
        });
  });

  // pipeline ------------------------------------------------------------
  auto* pipe = app.add_subcommand("pipeline", "Run every stage from one JSON config");
  fs::path pipe_config;
  std::vector<std::string> pipe_set;
  pipe->add_option("--config", pipe_config, "Config JSON")->required();
  pipe->add_option("--set", pipe_set, "Override, key.path=value (repeatable)");
  pipe->callback([&] {
    try {
      status = pl::run_pipeline(pl::load_config(pipe_config, pipe_set), std::cerr);
    } catch (const std::exception& e) {
      std::cerr << "error: " << e.what() << '\n';
      status = pl::kExitConfigError;
    }
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : pl::kExitConfigError;
  }
  return status;
}
