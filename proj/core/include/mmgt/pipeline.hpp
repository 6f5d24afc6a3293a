#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mmgt/config.hpp"
#include "mmgt/contrastive.hpp"
#include "mmgt/encoders.hpp"
#include "mmgt/metrics.hpp"
#include "mmgt/popgraph.hpp"

namespace mmgt {

inline constexpr int kReportSchemaVersion = 1;

/// A stage failure carries the stage name and leaves earlier stages'
/// artifacts (checkpoints, markers) on disk for --resume.
class StageError : public std::runtime_error {
 public:
  StageError(std::string stage, const std::string& what)
      : std::runtime_error("stage '" + stage + "': " + what),
        stage_(std::move(stage)) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

/// Pipeline stages in execution order. Each writes its artifacts plus a
/// completion marker under <work_dir>/stages/; with `resume` a marked stage
/// is skipped and its artifacts are reloaded from disk. Every stage reads
/// its inputs from the previous stage's files (never from memory), so
/// resumed and uninterrupted runs produce identical reports.
inline constexpr std::array<const char*, 6> kPipelineStages = {
    "synthesis", "brainnet", "networks", "contrastive", "features",
    "popgraph"};

/// One patient's raw artifacts loaded from the cohort directory.
struct LoadedCase {
  PatientEntry entry;
  MultiChannelVolume volume;
  TumorMask mask;
};
std::vector<LoadedCase> load_cases(const CohortManifest& manifest,
                                   const std::filesystem::path& root,
                                   const std::vector<std::string>& splits);

/// Crop + surface-sample + graph-build for one patient (the network is
/// attached from the networks stage). FPS size is capped by the surface
/// point count.
PatientInputs prepare_patient_inputs(const MultiChannelVolume& volume,
                                     const TumorMask& mask,
                                     BrainNetwork network,
                                     const PipelineConfig& cfg);

/// Per-patient encoder outputs for the population graph.
struct FeatureRecord {
  std::string id;
  int label = 0;
  std::string split;
  std::vector<double> u_tumor;    // image ++ geometric (64)
  std::vector<double> u_network;  // 32
};

/// Runs all stages in order and writes <work_dir>/report.json; returns the
/// report document. The report is deterministic: fixed key order, no
/// timestamps, content a pure function of the config.
nlohmann::json run_pipeline(const PipelineConfig& cfg, bool resume = false);

/// Individual stages (the CLI exposes some directly).
void run_synthesis_stage(const PipelineConfig& cfg, bool resume);
void run_brainnet_stage(const PipelineConfig& cfg, bool resume);
void run_networks_stage(const PipelineConfig& cfg, bool resume);
void run_contrastive_stage(const PipelineConfig& cfg, bool resume);
void run_features_stage(const PipelineConfig& cfg, bool resume);
std::vector<SchemeResult> run_popgraph_stage(const PipelineConfig& cfg,
                                             bool resume);

/// The ablation matrix: single encoders, pairwise combinations, pairwise
/// plus contrastive multi-task, and the three multi-modal variants — all
/// with the same MLP classification head on the classifier/test splits.
inline constexpr std::array<const char*, 12> kAblationRows = {
    "image+mlp",
    "geometric+mlp",
    "network+mlp",
    "image+geometric+mlp",
    "network+geometric+mlp",
    "image+network+mlp",
    "image+geometric+mlp+contrastive",
    "network+geometric+mlp+contrastive",
    "image+network+mlp+contrastive",
    "multimodal-no-attention+mlp",
    "multimodal-no-contrastive+mlp",
    "multimodal-full+mlp"};

/// Whole-volume 3D conv classifier outside the framework, for --baseline.
inline constexpr const char* kBaselineRow = "conv3d-baseline";

struct AblationRowResult {
  std::string label;
  ClassificationMetrics metrics;
};

/// Runs the requested rows (empty selection = all twelve; the baseline row
/// runs only when selected or `include_baseline`). Requires the synthesis,
/// brainnet, and networks stages' artifacts; runs them if absent. Writes
/// <work_dir>/ablation.json.
std::vector<AblationRowResult> run_ablation(
    const PipelineConfig& cfg, std::vector<std::string> selection = {},
    bool include_baseline = false);

/// Interpretation exports for one patient using the trained contrastive
/// checkpoint: gradient-magnitude saliency of the image-feature sum over
/// the input crop (f32 tensor), per-point boundary attention, per-edge and
/// per-node attention, and the edges ranked by attention with the upper
/// 50%-quantile subset marked. Files land in <work_dir>/explain/.
nlohmann::json run_explain(const PipelineConfig& cfg,
                           const std::string& patient_id);

/// Fixed-width text table: one AUC/ACC/SEN/SPE row per ablation result.
std::string ablation_table_text(const std::vector<AblationRowResult>& rows);

}  // namespace mmgt
