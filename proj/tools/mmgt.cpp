// mmgt — multi-modal genotype prediction pipeline driver.
//
// Subcommands cover the full flow: synthetic cohort generation, the
// self-supervised brain-network stage, contrastive encoder training, the
// population-graph classifier sweep, the end-to-end pipeline, the ablation
// matrix, and per-patient interpretation exports.
//
// Configuration is layered: preset defaults < config file < MMGT_*
// environment variables < command-line flags. Exit codes: 0 success,
// 2 configuration error, 3 data/stage error, 4 training divergence.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mmgt/brainnet.hpp"
#include "mmgt/config.hpp"
#include "mmgt/manifest.hpp"
#include "mmgt/pipeline.hpp"
#include "mmgt/popgraph.hpp"

namespace fs = std::filesystem;
using namespace mmgt;

namespace {

struct CommonOpts {
  std::string config_file;
  std::string preset;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::string cohort_dir;
  std::string work_dir;
  bool dry_run = false;
};

void add_common(CLI::App* cmd, CommonOpts& o) {
  cmd->add_option("--config", o.config_file,
                  "flat JSON config file (lowest layer)");
  cmd->add_option("--preset", o.preset, "configuration preset: desk | paper");
  cmd->add_option("--set", o.sets,
                  "dotted-key override, e.g. --set contrastive.tau=0.2")
      ->type_size(1)
      ->allow_extra_args(false);
  cmd->add_option("--seed", o.seed, "global seed feeding every stage");
  cmd->add_option("--cohort", o.cohort_dir, "cohort directory");
  cmd->add_option("--work", o.work_dir, "working/artifact directory");
  cmd->add_flag("--dry-run", o.dry_run,
                "print the fully resolved configuration and exit");
}

/// Layered resolution. The effective preset is taken from the highest layer
/// that names one, the preset builds the base config, then each layer's
/// remaining keys apply in file < environment < flags order.
PipelineConfig build_config(const CommonOpts& o) {
  KeyValues file_kv;
  if (!o.config_file.empty()) file_kv = read_config_keys(o.config_file);
  KeyValues env_kv = env_overrides();
  KeyValues flag_kv;
  for (const std::string& kv : o.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos || eq == 0)
      throw ConfigError("--set expects key=value, got '" + kv + "'");
    flag_kv[kv.substr(0, eq)] = kv.substr(eq + 1);
  }
  if (!o.preset.empty()) flag_kv["preset"] = o.preset;
  if (o.seed.has_value()) flag_kv["seed"] = std::to_string(*o.seed);
  if (!o.cohort_dir.empty()) flag_kv["cohort_dir"] = o.cohort_dir;
  if (!o.work_dir.empty()) flag_kv["work_dir"] = o.work_dir;

  std::string preset = "desk";
  for (const KeyValues* layer : {&file_kv, &env_kv, &flag_kv}) {
    auto it = layer->find("preset");
    if (it != layer->end()) preset = it->second;
  }
  PipelineConfig cfg = make_preset(preset);
  for (KeyValues* layer : {&file_kv, &env_kv, &flag_kv}) {
    layer->erase("preset");
    apply_overrides(cfg, *layer);
  }

  std::vector<std::string> violations = validate_config(cfg);
  if (!violations.empty()) {
    std::string msg = "invalid configuration:";
    for (const std::string& v : violations) msg += "\n  - " + v;
    throw ConfigError(msg);
  }
  return cfg;
}

/// Every command goes through this gate: --dry-run prints the resolved
/// key-value view (including derived per-stage seeds) and skips the action.
bool handle_dry_run(const CommonOpts& o, const PipelineConfig& cfg) {
  if (!o.dry_run) return false;
  PipelineConfig r = cfg;
  resolve_derived_fields(r);
  std::cout << dry_run_text(r);
  return true;
}

std::vector<SchemeResult> sweep_rows_from_file(const fs::path& sweep_file) {
  if (!fs::exists(sweep_file))
    throw StageError("evaluate", "no sweep results at " + sweep_file.string() +
                                     "; run the pipeline or train-classifier "
                                     "first");
  std::ifstream in(sweep_file);
  nlohmann::json doc;
  in >> doc;
  std::vector<SchemeResult> rows;
  for (const auto& row : doc.at("rows")) {
    SchemeResult r;
    r.scheme = row.at("scheme").get<std::string>();
    r.n_edges = row.at("n_edges").get<std::size_t>();
    if (!row.at("auc").is_null()) r.metrics.auc = row.at("auc").get<double>();
    r.metrics.accuracy = row.at("accuracy").get<double>();
    r.metrics.sensitivity = row.at("sensitivity").get<double>();
    r.metrics.specificity = row.at("specificity").get<double>();
    rows.push_back(std::move(r));
  }
  return rows;
}

std::vector<PopPatient> patients_from_features(const fs::path& features_file) {
  if (!fs::exists(features_file))
    throw StageError("build-popgraph",
                     "no extracted features at " + features_file.string());
  std::ifstream in(features_file);
  nlohmann::json doc;
  in >> doc;
  std::vector<PopPatient> patients;
  for (const auto& rec : doc.at("records")) {
    PopPatient p;
    p.id = rec.at("id").get<std::string>();
    p.label = rec.at("label").get<int>();
    p.is_test = rec.at("split").get<std::string>() == "test";
    p.u_tumor = rec.at("u_tumor").get<std::vector<double>>();
    p.u_network = rec.at("u_network").get<std::vector<double>>();
    patients.push_back(std::move(p));
  }
  return patients;
}

int dispatch(int argc, char** argv) {
  CLI::App app{
      "multi-modal contrastive genotype prediction — synthetic cohort, "
      "self-supervised brain networks, attention-wired encoders, "
      "population-graph classification"};
  app.require_subcommand(1);

  CommonOpts opts;
  std::optional<std::size_t> gen_n;
  bool resume = false;
  bool baseline = false;
  std::string rows_csv;
  std::string patient_id;

  CLI::App* c_generate =
      app.add_subcommand("generate", "write a synthetic cohort to disk");
  add_common(c_generate, opts);
  c_generate->add_option("--n", gen_n, "number of patients");

  CLI::App* c_brainnet = app.add_subcommand(
      "build-brainnet",
      "train the self-supervised node/edge encoders and build every "
      "patient's brain network");
  add_common(c_brainnet, opts);
  c_brainnet->add_flag("--resume", resume, "skip stages whose artifacts exist");

  CLI::App* c_contrastive = app.add_subcommand(
      "train-contrastive",
      "train the three modality encoders with the bi-level contrastive loss");
  add_common(c_contrastive, opts);
  c_contrastive->add_flag("--resume", resume,
                          "skip when a checkpoint already exists");

  CLI::App* c_popgraph = app.add_subcommand(
      "build-popgraph",
      "extract features and construct the five population graphs");
  add_common(c_popgraph, opts);
  c_popgraph->add_flag("--resume", resume,
                       "reuse extracted features when present");

  CLI::App* c_classifier = app.add_subcommand(
      "train-classifier",
      "train and evaluate the population-graph classifier on all five "
      "weighting schemes");
  add_common(c_classifier, opts);
  c_classifier->add_flag("--resume", resume,
                         "reuse sweep results when present");

  CLI::App* c_pipeline = app.add_subcommand(
      "pipeline", "run every stage in order and write the final report");
  add_common(c_pipeline, opts);
  c_pipeline->add_flag("--resume", resume,
                       "skip stages whose artifacts exist");

  CLI::App* c_ablate = app.add_subcommand(
      "ablate", "run the component-ablation matrix with a shared MLP head");
  add_common(c_ablate, opts);
  c_ablate->add_option(
      "--rows", rows_csv,
      "comma-separated row labels to run (default: all twelve)");
  c_ablate->add_flag("--baseline", baseline,
                     "also run the generic whole-volume 3D conv baseline");

  CLI::App* c_evaluate = app.add_subcommand(
      "evaluate", "print the scheme table from saved sweep results");
  add_common(c_evaluate, opts);

  CLI::App* c_explain = app.add_subcommand(
      "explain",
      "export saliency and attention files for one patient from the trained "
      "checkpoint");
  add_common(c_explain, opts);
  c_explain->add_option("--patient", patient_id, "patient id, e.g. p003")
      ->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);  // prints help or the parse error itself
    return rc == 0 ? 0 : 2;
  }

  PipelineConfig cfg = build_config(opts);
  if (gen_n.has_value()) cfg.synthesis.n_patients = *gen_n;
  if (handle_dry_run(opts, cfg)) return 0;

  if (c_generate->parsed()) {
    run_synthesis_stage(cfg, false);
    CohortManifest manifest =
        load_manifest(fs::path(cfg.cohort_dir) / "cohort.json");
    std::cout << "cohort: " << manifest.patients.size() << " patients in "
              << cfg.cohort_dir << "\n";
    for (const char* split : kSplitNames)
      std::cout << "  " << split << ": "
                << manifest.ids_in_split(split).size() << "\n";
    return 0;
  }

  if (c_brainnet->parsed()) {
    run_brainnet_stage(cfg, resume);
    run_networks_stage(cfg, resume);
    std::cout << "brain networks written to "
              << (fs::path(cfg.work_dir) / "networks") << "\n";
    return 0;
  }

  if (c_contrastive->parsed()) {
    run_contrastive_stage(cfg, resume);
    std::cout << "contrastive checkpoint written to "
              << (fs::path(cfg.work_dir) / "contrastive" / "model") << "\n";
    return 0;
  }

  if (c_popgraph->parsed()) {
    run_features_stage(cfg, resume);
    PipelineConfig r = cfg;
    resolve_derived_fields(r);
    std::vector<PopPatient> patients =
        patients_from_features(fs::path(cfg.work_dir) / "features.json");
    nlohmann::json graphs = nlohmann::json::array();
    for (const char* scheme : kSchemeIds) {
      PopulationGraph g = build_population_graph(
          patients, scheme, r.classifier.theta, r.classifier.similarity);
      nlohmann::json row;
      row["scheme"] = scheme;
      row["n_nodes"] = g.n_nodes;
      row["n_edges"] = g.edges.size();
      graphs.push_back(row);
      std::cout << scheme << ": " << g.n_nodes << " nodes, "
                << g.edges.size() << " edges\n";
    }
    nlohmann::json doc;
    doc["schema_version"] = kReportSchemaVersion;
    doc["graphs"] = graphs;
    fs::create_directories(fs::path(cfg.work_dir) / "popgraph");
    std::ofstream out(fs::path(cfg.work_dir) / "popgraph" / "graphs.json");
    out << doc.dump(2) << '\n';
    return 0;
  }

  if (c_classifier->parsed()) {
    std::vector<SchemeResult> rows = run_popgraph_stage(cfg, resume);
    std::cout << scheme_table_text(rows);
    return 0;
  }

  if (c_pipeline->parsed()) {
    run_pipeline(cfg, resume);
    std::vector<SchemeResult> rows = sweep_rows_from_file(
        fs::path(cfg.work_dir) / "popgraph" / "sweep.json");
    std::cout << scheme_table_text(rows);
    std::cout << "report: " << (fs::path(cfg.work_dir) / "report.json")
              << "\n";
    return 0;
  }

  if (c_ablate->parsed()) {
    std::vector<std::string> selection;
    if (!rows_csv.empty()) {
      std::size_t start = 0;
      while (start <= rows_csv.size()) {
        std::size_t comma = rows_csv.find(',', start);
        if (comma == std::string::npos) comma = rows_csv.size();
        if (comma > start)
          selection.push_back(rows_csv.substr(start, comma - start));
        start = comma + 1;
      }
    }
    std::vector<AblationRowResult> rows =
        run_ablation(cfg, selection, baseline);
    std::cout << ablation_table_text(rows);
    return 0;
  }

  if (c_evaluate->parsed()) {
    std::vector<SchemeResult> rows = sweep_rows_from_file(
        fs::path(cfg.work_dir) / "popgraph" / "sweep.json");
    std::cout << scheme_table_text(rows);
    return 0;
  }

  if (c_explain->parsed()) {
    nlohmann::json doc = run_explain(cfg, patient_id);
    const fs::path dir = fs::path(cfg.work_dir) / "explain";
    std::cout << "saliency: "
              << (dir / doc.at("saliency_file").get<std::string>()) << "\n";
    std::cout << "attention: " << (dir / (patient_id + "_explain.json"))
              << "\n";
    return 0;
  }

  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return dispatch(argc, argv);
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return 2;
  } catch (const TrainingDivergence& e) {
    std::cerr << "training divergence: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
}
