#include "mmgt/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <utility>

#include "mmgt/brainnet.hpp"
#include "mmgt/geometry.hpp"
#include "mmgt/manifest.hpp"
#include "mmgt/synth.hpp"
#include "mmgt/tensor.hpp"

namespace mmgt {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

// ------------------------------------------------------------------ layout

struct Layout {
  fs::path cohort, work, stages;
  fs::path manifest_file;
  fs::path node_ae_dir, edge_pair_dir;
  fs::path networks_dir;
  fs::path contrastive_model_dir;
  fs::path features_file;
  fs::path popgraph_dir, sweep_file, table_file;
  fs::path report_file, ablation_file, explain_dir;
};

Layout layout_of(const PipelineConfig& cfg) {
  Layout l;
  l.cohort = fs::path(cfg.cohort_dir);
  l.work = fs::path(cfg.work_dir);
  l.stages = l.work / "stages";
  l.manifest_file = l.cohort / "cohort.json";
  l.node_ae_dir = l.work / "brainnet" / "node_ae";
  l.edge_pair_dir = l.work / "brainnet" / "edge_pair";
  l.networks_dir = l.work / "networks";
  l.contrastive_model_dir = l.work / "contrastive" / "model";
  l.features_file = l.work / "features.json";
  l.popgraph_dir = l.work / "popgraph";
  l.sweep_file = l.popgraph_dir / "sweep.json";
  l.table_file = l.popgraph_dir / "table.txt";
  l.report_file = l.work / "report.json";
  l.ablation_file = l.work / "ablation.json";
  l.explain_dir = l.work / "explain";
  return l;
}

PipelineConfig resolved(const PipelineConfig& cfg) {
  PipelineConfig c = cfg;
  resolve_derived_fields(c);
  return c;
}

// ------------------------------------------------------------- json files

void dump_json(const fs::path& path, const json& doc) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << doc.dump(2) << '\n';
}

json load_json(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  json doc;
  in >> doc;
  return doc;
}

// ---------------------------------------------------------------- markers

fs::path marker_path(const Layout& l, const std::string& stage) {
  return l.stages / (stage + ".json");
}

bool stage_done(const Layout& l, const std::string& stage) {
  return fs::exists(marker_path(l, stage));
}

void write_marker(const Layout& l, const std::string& stage,
                  const json& summary) {
  json doc;
  doc["stage"] = stage;
  doc["summary"] = summary;
  dump_json(marker_path(l, stage), doc);
}

json read_marker(const Layout& l, const std::string& stage) {
  return load_json(marker_path(l, stage)).at("summary");
}

/// Stage bodies run inside this guard so any failure surfaces with the
/// stage name while training divergences keep their own type (the CLI maps
/// them to a distinct exit code).
template <typename F>
auto guarded(const char* stage, F&& f) {
  try {
    return f();
  } catch (const TrainingDivergence&) {
    throw;
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(stage, e.what());
  }
}

// ------------------------------------------------------ model construction

std::size_t anatomical_count(const PipelineConfig& cfg) {
  return cfg.synthesis.n_channels - 1;
}

NodeAutoencoder make_node_autoencoder(const PipelineConfig& cfg) {
  Rng rng(derive_seed(cfg.brainnet.seed, "node-ae-init"));
  return NodeAutoencoder(cfg.brainnet.node_samples * anatomical_count(cfg),
                         cfg.brainnet.ae_encoder_widths, rng);
}

EdgeEncoderPair make_edge_pair(const PipelineConfig& cfg) {
  Rng rng(derive_seed(cfg.brainnet.seed, "edge-pair-init"));
  return EdgeEncoderPair(cfg.brainnet.edge_samples * anatomical_count(cfg),
                         cfg.brainnet.edge_samples, cfg.brainnet, rng);
}

MultiModalEncoders make_encoders(const PipelineConfig& cfg,
                                 const EncoderConfig& ecfg) {
  Rng rng(derive_seed(cfg.contrastive.seed, "encoders-init"));
  return MultiModalEncoders(ecfg, rng);
}

ProjectionHeads make_heads(const PipelineConfig& cfg,
                           const EncoderConfig& ecfg) {
  Rng rng(derive_seed(cfg.contrastive.seed, "heads-init"));
  return ProjectionHeads(ecfg.feature_dim(), rng);
}

nn::ParamMap contrastive_params(const MultiModalEncoders& enc,
                                const ProjectionHeads& heads) {
  nn::ParamMap all;
  all.merge("encoders", enc.params());
  all.merge("heads", heads.params());
  return all;
}

// ------------------------------------------------------------ stage inputs

CohortManifest load_cohort_manifest(const Layout& l) {
  if (!fs::exists(l.manifest_file))
    throw std::runtime_error("cohort manifest not found at " +
                             l.manifest_file.string() +
                             "; run the generate stage first");
  return load_manifest(l.manifest_file);
}

Atlas load_cohort_atlas(const Layout& l, const CohortManifest& manifest) {
  return load_atlas(l.cohort / manifest.atlas_path);
}

/// One patient with its prepared model inputs and label.
struct CaseData {
  std::string id;
  int label = 0;
  PatientInputs inputs;
};

std::vector<CaseData> prepare_cases(const PipelineConfig& cfg, const Layout& l,
                                    const CohortManifest& manifest,
                                    const std::vector<std::string>& splits) {
  std::vector<CaseData> cases;
  for (const LoadedCase& lc : load_cases(manifest, l.cohort, splits)) {
    BrainNetwork net = load_brain_network(l.networks_dir / lc.entry.id);
    CaseData c;
    c.id = lc.entry.id;
    c.label = lc.entry.label;
    c.inputs = prepare_patient_inputs(lc.volume, lc.mask, std::move(net), cfg);
    cases.push_back(std::move(c));
  }
  return cases;
}

json metrics_to_json(const ClassificationMetrics& m) {
  json row;
  if (m.auc.has_value())
    row["auc"] = *m.auc;
  else
    row["auc"] = nullptr;
  row["accuracy"] = m.accuracy;
  row["sensitivity"] = m.sensitivity;
  row["specificity"] = m.specificity;
  return row;
}

ClassificationMetrics metrics_from_json(const json& row) {
  ClassificationMetrics m;
  if (!row.at("auc").is_null()) m.auc = row.at("auc").get<double>();
  m.accuracy = row.at("accuracy").get<double>();
  m.sensitivity = row.at("sensitivity").get<double>();
  m.specificity = row.at("specificity").get<double>();
  return m;
}

// ---------------------------------------------------- shared head training

/// Binary MLP head (one hidden layer) trained with Adam + step-decayed lr on
/// frozen feature vectors; returns test metrics. Used by the pretrained
/// ablation rows and the feature-probe paths.
ClassificationMetrics train_mlp_head(
    const std::vector<std::vector<double>>& raw_train_x,
    const std::vector<int>& train_y,
    const std::vector<std::vector<double>>& raw_test_x,
    const std::vector<int>& test_y, const ClassifierConfig& ccfg,
    std::uint64_t seed, const std::string& context) {
  if (raw_train_x.empty() || raw_test_x.empty())
    throw std::invalid_argument(context + ": empty feature set");
  const std::size_t dim = raw_train_x.front().size();

  // Standardize per dimension with training-set statistics (applied to both
  // splits). Frozen encoder outputs span arbitrary ranges and would swamp the
  // head's unit-scale initialization; constant dimensions map to zero.
  std::vector<double> mean(dim, 0.0), sd(dim, 0.0);
  for (const auto& x : raw_train_x)
    for (std::size_t d = 0; d < dim; ++d) mean[d] += x[d];
  for (double& m : mean) m /= static_cast<double>(raw_train_x.size());
  for (const auto& x : raw_train_x)
    for (std::size_t d = 0; d < dim; ++d) {
      const double c = x[d] - mean[d];
      sd[d] += c * c;
    }
  for (double& s : sd) s = std::sqrt(s / static_cast<double>(raw_train_x.size()));
  auto standardize = [&](const std::vector<std::vector<double>>& rows) {
    std::vector<std::vector<double>> out = rows;
    for (auto& x : out)
      for (std::size_t d = 0; d < dim; ++d)
        x[d] = sd[d] > 0.0 ? (x[d] - mean[d]) / sd[d] : 0.0;
    return out;
  };
  const std::vector<std::vector<double>> train_x = standardize(raw_train_x);
  const std::vector<std::vector<double>> test_x = standardize(raw_test_x);
  Rng rng(derive_seed(seed, "head-init"));
  nn::Mlp head(dim, {32, 1}, rng);
  nn::ParamMap params;
  head.collect("head", params);
  nn::Adam opt(params.values(), ccfg.lr, ccfg.weight_decay);
  nn::StepDecay sched{ccfg.lr, ccfg.lr_decay, ccfg.lr_step_every};
  Rng order_rng(derive_seed(seed, "head-order"));

  std::vector<std::size_t> order(train_x.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  const std::size_t batch = std::max<std::size_t>(1, ccfg.batch_size);

  for (std::size_t epoch = 0; epoch < ccfg.epochs; ++epoch) {
    opt.set_lr(sched.at(epoch));
    order_rng.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t end = std::min(order.size(), start + batch);
      std::vector<ad::Value> rows;
      std::vector<double> targets;
      for (std::size_t k = start; k < end; ++k) {
        const auto& x = train_x[order[k]];
        rows.push_back(ad::Value::constant({1, dim}, x));
        targets.push_back(static_cast<double>(train_y[order[k]]));
      }
      ad::Value logits = head.forward(ad::stack_rows(rows));
      std::vector<std::uint8_t> mask(targets.size(), 1);
      ad::Value loss = ad::bce_with_logits(logits, targets, mask);
      if (!std::isfinite(loss.item()))
        throw TrainingDivergence(context + ": non-finite loss " +
                                 std::to_string(loss.item()) + " at epoch " +
                                 std::to_string(epoch) +
                                 "; lower the learning rate");
      opt.zero_grad();
      ad::backward(loss);
      opt.step();
    }
  }

  std::vector<double> scores;
  for (const auto& x : test_x) {
    ad::Value logit = head.forward(ad::Value::constant({1, dim}, x));
    scores.push_back(ad::sigmoid(logit).item());
  }
  return classification_metrics(scores, test_y);
}

}  // namespace

// =========================================================== data plumbing

std::vector<LoadedCase> load_cases(const CohortManifest& manifest,
                                   const std::filesystem::path& root,
                                   const std::vector<std::string>& splits) {
  std::vector<LoadedCase> out;
  for (const PatientEntry& entry : manifest.patients) {
    if (std::find(splits.begin(), splits.end(), entry.split) == splits.end())
      continue;
    LoadedCase lc;
    lc.entry = entry;
    lc.volume = load_volume(root / entry.files.at("volume"));
    lc.mask = load_mask(root / entry.files.at("mask"));
    out.push_back(std::move(lc));
  }
  return out;
}

PatientInputs prepare_patient_inputs(const MultiChannelVolume& volume,
                                     const TumorMask& mask,
                                     BrainNetwork network,
                                     const PipelineConfig& cfg) {
  PatientInputs in;
  in.image = make_tumor_image(volume, mask, cfg.encoder.image_cube,
                              cfg.crop_pad, cfg.synthesis.reference_channel);
  PointsCloud surface = extract_surface_points(mask);
  const std::size_t k = std::min(cfg.fps_points, surface.coords.size());
  PointsCloud sampled = farthest_point_sampling(surface, k);
  in.graph = build_point_graph(sampled, cfg.graph_radius);
  in.network = std::move(network);
  return in;
}

// ================================================================== stages

void run_synthesis_stage(const PipelineConfig& raw, bool resume) {
  const PipelineConfig cfg = resolved(raw);
  const Layout l = layout_of(cfg);
  if (resume && stage_done(l, "synthesis") && fs::exists(l.manifest_file))
    return;
  guarded("synthesis", [&] {
    CohortManifest manifest = generate_cohort(cfg.synthesis, l.cohort);
    json summary;
    summary["n_patients"] = manifest.patients.size();
    json splits;
    for (const char* name : kSplitNames)
      splits[name] = manifest.ids_in_split(name).size();
    summary["splits"] = splits;
    write_marker(l, "synthesis", summary);
  });
}

void run_brainnet_stage(const PipelineConfig& raw, bool resume) {
  const PipelineConfig cfg = resolved(raw);
  const Layout l = layout_of(cfg);
  if (resume && stage_done(l, "brainnet") &&
      nn::checkpoint_exists(l.node_ae_dir) &&
      nn::checkpoint_exists(l.edge_pair_dir))
    return;
  guarded("brainnet", [&] {
    CohortManifest manifest = load_cohort_manifest(l);
    Atlas atlas = load_cohort_atlas(l, manifest);
    SslDataset data = load_split_volumes(manifest, l.cohort, "ssl");

    NodeAutoencoder node_ae = make_node_autoencoder(cfg);
    TrainHistory ae_hist =
        train_node_autoencoder(node_ae, data, atlas, cfg.brainnet);
    nn::save_checkpoint(l.node_ae_dir, node_ae.params(),
                        {{"kind", "node-autoencoder"},
                         {"input_dim", std::to_string(node_ae.input_dim)}});

    EdgeEncoderPair edge_pair = make_edge_pair(cfg);
    TrainHistory edge_hist =
        train_edge_encoders(edge_pair, data, atlas, cfg.brainnet);
    nn::save_checkpoint(l.edge_pair_dir, edge_pair.params(),
                        {{"kind", "edge-encoder-pair"}});

    json summary;
    summary["ssl_patients"] = data.volumes.size();
    summary["ae_epochs"] = ae_hist.epoch_loss.size();
    summary["ae_final_loss"] =
        ae_hist.epoch_loss.empty() ? 0.0 : ae_hist.epoch_loss.back();
    summary["edge_epochs"] = edge_hist.epoch_loss.size();
    summary["edge_final_loss"] =
        edge_hist.epoch_loss.empty() ? 0.0 : edge_hist.epoch_loss.back();
    write_marker(l, "brainnet", summary);
  });
}

void run_networks_stage(const PipelineConfig& raw, bool resume) {
  const PipelineConfig cfg = resolved(raw);
  const Layout l = layout_of(cfg);
  if (resume && stage_done(l, "networks")) return;
  guarded("networks", [&] {
    CohortManifest manifest = load_cohort_manifest(l);
    Atlas atlas = load_cohort_atlas(l, manifest);

    NodeAutoencoder node_ae = make_node_autoencoder(cfg);
    nn::ParamMap ae_params = node_ae.params();
    nn::load_checkpoint(l.node_ae_dir, ae_params);
    EdgeEncoderPair edge_pair = make_edge_pair(cfg);
    nn::ParamMap edge_params = edge_pair.params();
    nn::load_checkpoint(l.edge_pair_dir, edge_params);

    fs::create_directories(l.networks_dir);
    for (const PatientEntry& entry : manifest.patients) {
      MultiChannelVolume volume = load_volume(l.cohort / entry.files.at("volume"));
      BrainNetwork net =
          build_brain_network(volume, atlas, node_ae, edge_pair, cfg.brainnet);
      save_brain_network(l.networks_dir / entry.id, net);
    }
    json summary;
    summary["networks"] = manifest.patients.size();
    write_marker(l, "networks", summary);
  });
}

void run_contrastive_stage(const PipelineConfig& raw, bool resume) {
  const PipelineConfig cfg = resolved(raw);
  const Layout l = layout_of(cfg);
  if (resume && stage_done(l, "contrastive") &&
      nn::checkpoint_exists(l.contrastive_model_dir))
    return;
  guarded("contrastive", [&] {
    CohortManifest manifest = load_cohort_manifest(l);
    std::vector<CaseData> cases =
        prepare_cases(cfg, l, manifest, {"contrastive"});
    std::vector<PatientInputs> inputs;
    inputs.reserve(cases.size());
    for (CaseData& c : cases) inputs.push_back(std::move(c.inputs));

    MultiModalEncoders enc = make_encoders(cfg, cfg.encoder);
    ProjectionHeads heads = make_heads(cfg, cfg.encoder);
    TrainHistory hist =
        train_contrastive(enc, heads, inputs, cfg.encoder, cfg.contrastive);

    nn::ParamMap params = contrastive_params(enc, heads);
    nn::save_checkpoint(
        l.contrastive_model_dir, params,
        {{"kind", "contrastive-encoders"},
         {"use_attention", cfg.encoder.use_attention ? "true" : "false"}});

    json summary;
    summary["patients"] = inputs.size();
    summary["epochs"] = hist.epoch_loss.size();
    summary["final_loss"] =
        hist.epoch_loss.empty() ? 0.0 : hist.epoch_loss.back();
    write_marker(l, "contrastive", summary);
  });
}

void run_features_stage(const PipelineConfig& raw, bool resume) {
  const PipelineConfig cfg = resolved(raw);
  const Layout l = layout_of(cfg);
  if (resume && stage_done(l, "features") && fs::exists(l.features_file))
    return;
  guarded("features", [&] {
    CohortManifest manifest = load_cohort_manifest(l);
    MultiModalEncoders enc = make_encoders(cfg, cfg.encoder);
    ProjectionHeads heads = make_heads(cfg, cfg.encoder);
    nn::ParamMap params = contrastive_params(enc, heads);
    nn::load_checkpoint(l.contrastive_model_dir, params);

    std::vector<CaseData> cases =
        prepare_cases(cfg, l, manifest, {"classifier", "test"});
    json records = json::array();
    for (const CaseData& c : cases) {
      PatientForward fwd =
          encode_patient(enc, heads.g_tumor, c.inputs, cfg.encoder);
      ad::Value u_tumor = ad::concat_cols(fwd.u_image, fwd.u_points);
      json rec;
      rec["id"] = c.id;
      rec["label"] = c.label;
      rec["split"] = manifest.find(c.id)->split;
      rec["u_tumor"] = u_tumor.data();
      rec["u_network"] = fwd.u_network.data();
      records.push_back(std::move(rec));
    }
    json doc;
    doc["schema_version"] = kReportSchemaVersion;
    doc["records"] = std::move(records);
    dump_json(l.features_file, doc);

    json summary;
    summary["patients"] = cases.size();
    write_marker(l, "features", summary);
  });
}

std::vector<SchemeResult> run_popgraph_stage(const PipelineConfig& raw,
                                             bool resume) {
  const PipelineConfig cfg = resolved(raw);
  const Layout l = layout_of(cfg);
  if (resume && stage_done(l, "popgraph") && fs::exists(l.sweep_file)) {
    std::vector<SchemeResult> rows;
    for (const json& row : load_json(l.sweep_file).at("rows")) {
      SchemeResult r;
      r.scheme = row.at("scheme").get<std::string>();
      r.n_edges = row.at("n_edges").get<std::size_t>();
      r.metrics = metrics_from_json(row);
      rows.push_back(std::move(r));
    }
    return rows;
  }
  return guarded("popgraph", [&] {
    json features = load_json(l.features_file);
    std::vector<PopPatient> patients;
    for (const json& rec : features.at("records")) {
      PopPatient p;
      p.id = rec.at("id").get<std::string>();
      p.label = rec.at("label").get<int>();
      p.is_test = rec.at("split").get<std::string>() == "test";
      p.u_tumor = rec.at("u_tumor").get<std::vector<double>>();
      p.u_network = rec.at("u_network").get<std::vector<double>>();
      patients.push_back(std::move(p));
    }

    std::vector<SchemeResult> rows = run_scheme_sweep(patients, cfg.classifier);

    json doc;
    doc["schema_version"] = kReportSchemaVersion;
    json jrows = json::array();
    for (const SchemeResult& r : rows) {
      json row = metrics_to_json(r.metrics);
      row["scheme"] = r.scheme;
      row["n_edges"] = r.n_edges;
      jrows.push_back(std::move(row));
    }
    doc["rows"] = std::move(jrows);
    dump_json(l.sweep_file, doc);

    std::ofstream table(l.table_file, std::ios::binary);
    table << scheme_table_text(rows);

    json summary;
    summary["schemes"] = rows.size();
    write_marker(l, "popgraph", summary);
    return rows;
  });
}

nlohmann::json run_pipeline(const PipelineConfig& raw, bool resume) {
  const PipelineConfig cfg = resolved(raw);
  const Layout l = layout_of(cfg);

  run_synthesis_stage(cfg, resume);
  run_brainnet_stage(cfg, resume);
  run_networks_stage(cfg, resume);
  run_contrastive_stage(cfg, resume);
  run_features_stage(cfg, resume);
  std::vector<SchemeResult> rows = run_popgraph_stage(cfg, resume);

  // The report is assembled from the on-disk stage outputs only, so a
  // resumed run and an uninterrupted run serialize identical bytes.
  json report;
  report["schema_version"] = kReportSchemaVersion;
  report["kind"] = "pipeline";
  json config_echo;
  for (const auto& [key, value] : flatten_config(cfg)) config_echo[key] = value;
  report["config"] = std::move(config_echo);
  report["cohort"] = read_marker(l, "synthesis");
  json stages;
  stages["brainnet"] = read_marker(l, "brainnet");
  stages["contrastive"] = read_marker(l, "contrastive");
  report["stages"] = std::move(stages);

  json jrows = json::array();
  const SchemeResult* best = nullptr;
  for (const SchemeResult& r : rows) {
    json row = metrics_to_json(r.metrics);
    row["scheme"] = r.scheme;
    row["n_edges"] = r.n_edges;
    jrows.push_back(std::move(row));
    const double auc = r.metrics.auc.value_or(-1.0);
    if (best == nullptr || auc > best->metrics.auc.value_or(-1.0)) best = &r;
  }
  report["schemes"] = std::move(jrows);
  if (best != nullptr) {
    json b = metrics_to_json(best->metrics);
    b["scheme"] = best->scheme;
    report["best_scheme"] = std::move(b);
  }

  dump_json(l.report_file, report);
  return report;
}

// ================================================================ ablation

namespace {

/// What one ablation row trains: which encoders feed the MLP head, whether
/// a pairwise contrastive term joins the supervised loss, and whether the
/// row runs the full two-stage recipe (contrastive pretraining + frozen
/// features) instead of joint supervision.
struct RowSpec {
  bool image = false, geo = false, net = false;
  bool pair_contrastive = false;
  bool pretrained = false;
  bool attention = true;
};

RowSpec row_spec(const std::string& label) {
  RowSpec s;
  if (label == "image+mlp") {
    s.image = true;
  } else if (label == "geometric+mlp") {
    s.geo = true;
  } else if (label == "network+mlp") {
    s.net = true;
  } else if (label == "image+geometric+mlp") {
    s.image = s.geo = true;
  } else if (label == "network+geometric+mlp") {
    s.net = s.geo = true;
  } else if (label == "image+network+mlp") {
    s.image = s.net = true;
  } else if (label == "image+geometric+mlp+contrastive") {
    s.image = s.geo = s.pair_contrastive = true;
  } else if (label == "network+geometric+mlp+contrastive") {
    s.net = s.geo = s.pair_contrastive = true;
  } else if (label == "image+network+mlp+contrastive") {
    s.image = s.net = s.pair_contrastive = true;
  } else if (label == "multimodal-no-attention+mlp") {
    s.image = s.geo = s.net = s.pretrained = true;
    s.attention = false;
  } else if (label == "multimodal-no-contrastive+mlp") {
    s.image = s.geo = s.net = true;
  } else if (label == "multimodal-full+mlp") {
    s.image = s.geo = s.net = s.pretrained = true;
  } else {
    throw ConfigError("unknown ablation row '" + label + "'");
  }
  return s;
}

/// Generic bidirectional InfoNCE between two matched latent batches.
ad::Value pair_nce(const ad::Value& za, const ad::Value& zb, double tau) {
  ad::Value a = ad::l2_normalize_rows(za);
  ad::Value b = ad::l2_normalize_rows(zb);
  ad::Value ab = ad::mean(ad::info_nce_rows(ad::matmul_nt(a, b), tau));
  ad::Value ba = ad::mean(ad::info_nce_rows(ad::matmul_nt(b, a), tau));
  return ad::scale(ad::add(ab, ba), 0.5);
}

/// Forward one patient through the row's active encoders. Attention hooks
/// engage only when their inputs exist in the row: edge attention needs the
/// geometric branch, node attention additionally the image branch.
struct RowForward {
  ad::Value feature;  // {1, 32 * active}
  ad::Value u_image, u_geo, u_net;
};

RowForward row_forward(const MultiModalEncoders& enc,
                       const ProjectionHeads& heads, const RowSpec& spec,
                       const PatientInputs& in, const EncoderConfig& ecfg) {
  const bool attend = ecfg.use_attention && spec.attention;
  RowForward out;
  ad::Value a_points;
  if (spec.image) out.u_image = enc.image.forward(image_to_value(in.image));
  if (spec.geo) {
    GeometricEncoder::Output g = enc.geometric.forward(in.graph);
    out.u_geo = g.feature;
    a_points = g.point_attention;
  }
  if (spec.net) {
    const std::size_t n_edges = in.network.edge_index.size();
    ad::Value a_edge = (attend && spec.geo)
                           ? edge_attention(a_points, in.graph.points,
                                            in.network.edge_voxel_sets,
                                            ecfg.crossing_radius,
                                            ecfg.uncrossed_attention)
                           : ones_attention(n_edges);
    ad::Value emb = enc.network.node_embeddings(in.network, a_edge);
    ad::Value a_node =
        (attend && spec.image && spec.geo)
            ? node_attention(emb, out.u_image, out.u_geo,
                             enc.network.node_att_head, heads.g_tumor,
                             ecfg.raw_cosine_node_attention)
            : ones_attention(in.network.n_nodes);
    out.u_net = enc.network.pooled_feature(emb, a_node);
  }
  std::vector<ad::Value> parts;
  if (spec.image) parts.push_back(out.u_image);
  if (spec.geo) parts.push_back(out.u_geo);
  if (spec.net) parts.push_back(out.u_net);
  out.feature = parts.front();
  for (std::size_t i = 1; i < parts.size(); ++i)
    out.feature = ad::concat_cols(out.feature, parts[i]);
  return out;
}

/// The two latent streams of a multi-task row, in (image, geo, net) priority
/// order of whichever two branches are active.
std::pair<ad::Value, ad::Value> pair_latents(const ProjectionHeads& heads,
                                             const RowSpec& spec,
                                             const RowForward& fwd) {
  std::vector<ad::Value> zs;
  if (spec.image) zs.push_back(heads.g_image.forward(fwd.u_image));
  if (spec.geo) zs.push_back(heads.g_points.forward(fwd.u_geo));
  if (spec.net) zs.push_back(heads.g_network.forward(fwd.u_net));
  if (zs.size() != 2)
    throw std::logic_error("multi-task rows pair exactly two branches");
  return {zs[0], zs[1]};
}

ClassificationMetrics run_supervised_row(const PipelineConfig& cfg,
                                         const std::string& label,
                                         const RowSpec& spec,
                                         const std::vector<CaseData>& train,
                                         const std::vector<CaseData>& test) {
  const std::uint64_t row_seed = derive_seed(cfg.seed, "ablation:" + label);
  Rng init(derive_seed(row_seed, "init"));
  MultiModalEncoders enc(cfg.encoder, init);
  ProjectionHeads heads(cfg.encoder.feature_dim(), init);
  const std::size_t active = static_cast<std::size_t>(spec.image) +
                             static_cast<std::size_t>(spec.geo) +
                             static_cast<std::size_t>(spec.net);
  nn::Mlp head(cfg.encoder.feature_dim() * active, {32, 1}, init);

  nn::ParamMap params;
  if (spec.image) params.merge("image", enc.image.params());
  if (spec.geo) params.merge("geometric", enc.geometric.params());
  if (spec.net) params.merge("network", enc.network.params());
  if (spec.net && spec.image && spec.geo && cfg.encoder.use_attention &&
      spec.attention)
    heads.g_tumor.collect("g_tumor", params);
  if (spec.pair_contrastive) {
    if (spec.image) heads.g_image.collect("g_image", params);
    if (spec.geo) heads.g_points.collect("g_points", params);
    if (spec.net) heads.g_network.collect("g_network", params);
  }
  head.collect("head", params);

  const ClassifierConfig& ccfg = cfg.classifier;
  nn::Adam opt(params.values(), ccfg.lr, ccfg.weight_decay);
  nn::StepDecay sched{ccfg.lr, ccfg.lr_decay, ccfg.lr_step_every};
  Rng order_rng(derive_seed(row_seed, "order"));
  std::vector<std::size_t> order(train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  const std::size_t batch = std::max<std::size_t>(1, ccfg.batch_size);
  const std::size_t min_batch = spec.pair_contrastive ? 2 : 1;

  for (std::size_t epoch = 0; epoch < ccfg.epochs; ++epoch) {
    opt.set_lr(sched.at(epoch));
    order_rng.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t end = std::min(order.size(), start + batch);
      if (end - start < min_batch) break;
      std::vector<ad::Value> feats;
      std::vector<ad::Value> za_rows, zb_rows;
      std::vector<double> targets;
      for (std::size_t k = start; k < end; ++k) {
        const CaseData& c = train[order[k]];
        RowForward fwd = row_forward(enc, heads, spec, c.inputs, cfg.encoder);
        feats.push_back(fwd.feature);
        targets.push_back(static_cast<double>(c.label));
        if (spec.pair_contrastive) {
          auto [za, zb] = pair_latents(heads, spec, fwd);
          za_rows.push_back(za);
          zb_rows.push_back(zb);
        }
      }
      ad::Value logits = head.forward(ad::stack_rows(feats));
      std::vector<std::uint8_t> mask(targets.size(), 1);
      ad::Value loss = ad::bce_with_logits(logits, targets, mask);
      if (spec.pair_contrastive)
        loss = ad::add(loss, pair_nce(ad::stack_rows(za_rows),
                                      ad::stack_rows(zb_rows),
                                      cfg.contrastive.tau));
      if (!std::isfinite(loss.item()))
        throw TrainingDivergence(
            "ablation '" + label + "': non-finite loss " +
            std::to_string(loss.item()) + " at epoch " +
            std::to_string(epoch) + "; lower the learning rate");
      opt.zero_grad();
      ad::backward(loss);
      opt.step();
    }
  }

  std::vector<double> scores;
  std::vector<int> labels;
  for (const CaseData& c : test) {
    RowForward fwd = row_forward(enc, heads, spec, c.inputs, cfg.encoder);
    scores.push_back(ad::sigmoid(head.forward(fwd.feature)).item());
    labels.push_back(c.label);
  }
  return classification_metrics(scores, labels);
}

ClassificationMetrics run_pretrained_row(const PipelineConfig& cfg,
                                         const Layout& l,
                                         const std::string& label,
                                         const RowSpec& spec,
                                         const CohortManifest& manifest,
                                         const std::vector<CaseData>& train,
                                         const std::vector<CaseData>& test) {
  EncoderConfig ecfg = cfg.encoder;
  ecfg.use_attention = spec.attention;

  // The attention-matching checkpoint is shared with the pipeline's
  // contrastive stage (the training recipe and seeds are identical); the
  // other variant trains into its own directory.
  fs::path model_dir = l.contrastive_model_dir;
  if (spec.attention != cfg.encoder.use_attention)
    model_dir = l.work / (spec.attention ? "contrastive_attn" : "contrastive_noattn") /
                "model";

  MultiModalEncoders enc = make_encoders(cfg, ecfg);
  ProjectionHeads heads = make_heads(cfg, ecfg);
  nn::ParamMap params = contrastive_params(enc, heads);
  if (nn::checkpoint_exists(model_dir)) {
    nn::load_checkpoint(model_dir, params);
  } else {
    std::vector<CaseData> pretrain_cases =
        prepare_cases(cfg, l, manifest, {"contrastive"});
    std::vector<PatientInputs> inputs;
    inputs.reserve(pretrain_cases.size());
    for (CaseData& c : pretrain_cases) inputs.push_back(std::move(c.inputs));
    train_contrastive(enc, heads, inputs, ecfg, cfg.contrastive);
    nn::save_checkpoint(
        model_dir, params,
        {{"kind", "contrastive-encoders"},
         {"use_attention", ecfg.use_attention ? "true" : "false"}});
  }

  auto freeze = [&](const std::vector<CaseData>& cases,
                    std::vector<std::vector<double>>& x,
                    std::vector<int>& y) {
    for (const CaseData& c : cases) {
      PatientForward fwd = encode_patient(enc, heads.g_tumor, c.inputs, ecfg);
      ad::Value feat = ad::concat_cols(
          ad::concat_cols(fwd.u_image, fwd.u_points), fwd.u_network);
      x.push_back(feat.data());
      y.push_back(c.label);
    }
  };
  std::vector<std::vector<double>> train_x, test_x;
  std::vector<int> train_y, test_y;
  freeze(train, train_x, train_y);
  freeze(test, test_x, test_y);

  return train_mlp_head(train_x, train_y, test_x, test_y, cfg.classifier,
                        derive_seed(cfg.seed, "ablation:" + label + ":head"),
                        "ablation '" + label + "'");
}

ClassificationMetrics run_baseline_row(const PipelineConfig& cfg,
                                       const std::vector<LoadedCase>& train,
                                       const std::vector<LoadedCase>& test) {
  const std::uint64_t seed = derive_seed(cfg.seed, "ablation:conv3d-baseline");
  Rng init(derive_seed(seed, "init"));
  nn::ConvStack3d conv(cfg.synthesis.n_channels, cfg.encoder.image_conv_widths,
                       init);
  // Flattened output dim: each block halves the side (ceil); probe on the
  // first case rather than duplicating the pooling arithmetic.
  auto volume_value = [](const MultiChannelVolume& v) {
    return ad::Value::constant({v.channels, v.nx, v.ny, v.nz}, v.data);
  };
  if (train.empty() || test.empty())
    throw std::invalid_argument("conv3d-baseline: empty split");
  const std::size_t flat =
      conv.forward(volume_value(train.front().volume)).cols();
  nn::Mlp head(flat, {32, 1}, init);
  nn::ParamMap params;
  conv.collect("conv", params);
  head.collect("head", params);

  const ClassifierConfig& ccfg = cfg.classifier;
  nn::Adam opt(params.values(), ccfg.lr, ccfg.weight_decay);
  nn::StepDecay sched{ccfg.lr, ccfg.lr_decay, ccfg.lr_step_every};
  Rng order_rng(derive_seed(seed, "order"));
  std::vector<std::size_t> order(train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  const std::size_t batch = std::max<std::size_t>(1, ccfg.batch_size);

  for (std::size_t epoch = 0; epoch < ccfg.epochs; ++epoch) {
    opt.set_lr(sched.at(epoch));
    order_rng.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t end = std::min(order.size(), start + batch);
      std::vector<ad::Value> feats;
      std::vector<double> targets;
      for (std::size_t k = start; k < end; ++k) {
        const LoadedCase& c = train[order[k]];
        feats.push_back(conv.forward(volume_value(c.volume)));
        targets.push_back(static_cast<double>(c.entry.label));
      }
      ad::Value logits = head.forward(ad::stack_rows(feats));
      std::vector<std::uint8_t> mask(targets.size(), 1);
      ad::Value loss = ad::bce_with_logits(logits, targets, mask);
      if (!std::isfinite(loss.item()))
        throw TrainingDivergence(
            "conv3d-baseline: non-finite loss at epoch " +
            std::to_string(epoch) + "; lower the learning rate");
      opt.zero_grad();
      ad::backward(loss);
      opt.step();
    }
  }

  std::vector<double> scores;
  std::vector<int> labels;
  for (const LoadedCase& c : test) {
    ad::Value logit = head.forward(conv.forward(volume_value(c.volume)));
    scores.push_back(ad::sigmoid(logit).item());
    labels.push_back(c.entry.label);
  }
  return classification_metrics(scores, labels);
}

}  // namespace

std::vector<AblationRowResult> run_ablation(const PipelineConfig& raw,
                                            std::vector<std::string> selection,
                                            bool include_baseline) {
  const PipelineConfig cfg = resolved(raw);
  const Layout l = layout_of(cfg);

  bool baseline = include_baseline;
  if (selection.empty()) {
    selection.assign(kAblationRows.begin(), kAblationRows.end());
  } else {
    std::vector<std::string> kept;
    for (const std::string& label : selection) {
      if (label == kBaselineRow) {
        baseline = true;
        continue;
      }
      row_spec(label);  // validates the label
      kept.push_back(label);
    }
    // Run in table order regardless of how the selection was spelled.
    std::vector<std::string> ordered;
    for (const char* label : kAblationRows)
      if (std::find(kept.begin(), kept.end(), label) != kept.end())
        ordered.push_back(label);
    selection = std::move(ordered);
  }

  run_synthesis_stage(cfg, true);
  run_brainnet_stage(cfg, true);
  run_networks_stage(cfg, true);

  return guarded("ablation", [&] {
    CohortManifest manifest = load_cohort_manifest(l);
    std::vector<CaseData> train = prepare_cases(cfg, l, manifest, {"classifier"});
    std::vector<CaseData> test = prepare_cases(cfg, l, manifest, {"test"});

    std::vector<AblationRowResult> results;
    for (const std::string& label : selection) {
      RowSpec spec = row_spec(label);
      AblationRowResult row;
      row.label = label;
      row.metrics =
          spec.pretrained
              ? run_pretrained_row(cfg, l, label, spec, manifest, train, test)
              : run_supervised_row(cfg, label, spec, train, test);
      results.push_back(std::move(row));
    }
    if (baseline) {
      std::vector<LoadedCase> train_raw =
          load_cases(manifest, l.cohort, {"classifier"});
      std::vector<LoadedCase> test_raw =
          load_cases(manifest, l.cohort, {"test"});
      AblationRowResult row;
      row.label = kBaselineRow;
      row.metrics = run_baseline_row(cfg, train_raw, test_raw);
      results.push_back(std::move(row));
    }

    json doc;
    doc["schema_version"] = kReportSchemaVersion;
    doc["kind"] = "ablation";
    json jrows = json::array();
    for (const AblationRowResult& r : results) {
      json row = metrics_to_json(r.metrics);
      row["label"] = r.label;
      jrows.push_back(std::move(row));
    }
    doc["rows"] = std::move(jrows);
    dump_json(l.ablation_file, doc);
    return results;
  });
}

std::string ablation_table_text(const std::vector<AblationRowResult>& rows) {
  std::ostringstream out;
  char line[160];
  std::snprintf(line, sizeof(line), "%-40s %8s %8s %8s %8s\n", "variant",
                "AUC", "ACC", "SEN", "SPE");
  out << line;
  for (const AblationRowResult& r : rows) {
    char auc[16];
    if (r.metrics.auc.has_value())
      std::snprintf(auc, sizeof(auc), "%8.3f", *r.metrics.auc);
    else
      std::snprintf(auc, sizeof(auc), "%8s", "--");
    std::snprintf(line, sizeof(line), "%-40s %s %8.3f %8.3f %8.3f\n",
                  r.label.c_str(), auc, r.metrics.accuracy,
                  r.metrics.sensitivity, r.metrics.specificity);
    out << line;
  }
  return out.str();
}

// ================================================================= explain

nlohmann::json run_explain(const PipelineConfig& raw,
                           const std::string& patient_id) {
  const PipelineConfig cfg = resolved(raw);
  const Layout l = layout_of(cfg);

  return guarded("explain", [&] {
    CohortManifest manifest = load_cohort_manifest(l);
    const PatientEntry* entry = manifest.find(patient_id);
    if (entry == nullptr)
      throw std::runtime_error("unknown patient id '" + patient_id + "'");
    if (!nn::checkpoint_exists(l.contrastive_model_dir))
      throw std::runtime_error(
          "no contrastive checkpoint at " + l.contrastive_model_dir.string() +
          "; run the contrastive stage first");

    MultiChannelVolume volume = load_volume(l.cohort / entry->files.at("volume"));
    TumorMask mask = load_mask(l.cohort / entry->files.at("mask"));
    BrainNetwork net = load_brain_network(l.networks_dir / entry->id);
    PatientInputs inputs =
        prepare_patient_inputs(volume, mask, std::move(net), cfg);

    MultiModalEncoders enc = make_encoders(cfg, cfg.encoder);
    ProjectionHeads heads = make_heads(cfg, cfg.encoder);
    nn::ParamMap params = contrastive_params(enc, heads);
    nn::load_checkpoint(l.contrastive_model_dir, params);

    // Input saliency: |d(sum u_image)/d(voxel)| through the bias-free image
    // branch (an all-zero crop therefore yields an all-zero map). The crop
    // enters as a gradient-carrying leaf.
    const TumorImage& img = inputs.image;
    ad::Value leaf =
        ad::Value::param({img.channels, img.nx, img.ny, img.nz}, img.data);
    ad::Value u_image = enc.image.forward(leaf);
    ad::Value score = ad::sum(u_image);
    leaf.zero_grad();
    ad::backward(score);
    std::vector<double> saliency(leaf.grad().size());
    for (std::size_t i = 0; i < saliency.size(); ++i)
      saliency[i] = std::abs(leaf.grad()[i]);

    fs::create_directories(l.explain_dir);
    const fs::path saliency_file = l.explain_dir / (patient_id + "_saliency.mmgt");
    save_tensor(saliency_file,
                to_f32({img.channels, img.nx, img.ny, img.nz}, saliency));

    // Attention exports from the full attention-wired forward.
    PatientForward fwd = encode_patient(enc, heads.g_tumor, inputs, cfg.encoder);

    json points = json::array();
    for (std::size_t p = 0; p < inputs.graph.points.size(); ++p) {
      json pt;
      pt["xyz"] = inputs.graph.points[p];
      pt["attention"] = fwd.point_attention.data()[p];
      points.push_back(std::move(pt));
    }

    const std::vector<double>& a_edge = fwd.edge_attn.data();
    json edges = json::array();
    for (std::size_t e = 0; e < inputs.network.edge_index.size(); ++e) {
      json ed;
      ed["i"] = inputs.network.edge_index[e].first;
      ed["j"] = inputs.network.edge_index[e].second;
      ed["attention"] = a_edge[e];
      edges.push_back(std::move(ed));
    }

    json nodes = json::array();
    for (std::size_t r = 0; r < inputs.network.n_nodes; ++r) {
      json nd;
      nd["region"] = r;
      nd["attention"] = fwd.node_attn.data()[r];
      nodes.push_back(std::move(nd));
    }

    // Edges ranked by attention (descending, ties to the lower index) with
    // the upper-half subset marked: kept = attention >= median.
    std::vector<std::size_t> ranked(a_edge.size());
    for (std::size_t i = 0; i < ranked.size(); ++i) ranked[i] = i;
    std::stable_sort(ranked.begin(), ranked.end(),
                     [&](std::size_t a, std::size_t b) {
                       return a_edge[a] > a_edge[b];
                     });
    std::vector<double> sorted(a_edge.begin(), a_edge.end());
    std::sort(sorted.begin(), sorted.end());
    const double median = sorted.empty() ? 0.0 : sorted[(sorted.size() - 1) / 2];
    json kept = json::array();
    for (std::size_t e : ranked)
      if (a_edge[e] >= median) kept.push_back(e);

    json doc;
    doc["schema_version"] = kReportSchemaVersion;
    doc["id"] = patient_id;
    doc["saliency_file"] = saliency_file.filename().string();
    doc["points"] = std::move(points);
    doc["edges"] = std::move(edges);
    doc["nodes"] = std::move(nodes);
    doc["ranked_edges"] = ranked;
    doc["kept_edges"] = std::move(kept);
    dump_json(l.explain_dir / (patient_id + "_explain.json"), doc);
    return doc;
  });
}

}  // namespace mmgt
