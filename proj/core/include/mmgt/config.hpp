#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "mmgt/brainnet.hpp"
#include "mmgt/contrastive.hpp"
#include "mmgt/encoders.hpp"
#include "mmgt/popgraph.hpp"
#include "mmgt/synth.hpp"

namespace mmgt {

class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

/// Full run configuration: one section per stage plus the data-preparation
/// knobs. A single global seed feeds every stage through named sub-streams.
struct PipelineConfig {
  std::string preset = "desk";
  std::uint64_t seed = 7;
  std::string cohort_dir = "cohort";
  std::string work_dir = "work";
  SynthesisConfig synthesis;
  BrainNetTrainConfig brainnet;
  EncoderConfig encoder;
  ContrastiveConfig contrastive;
  ClassifierConfig classifier;
  // per-patient input preparation
  std::size_t crop_pad = 2;
  std::size_t fps_points = 256;
  double graph_radius = 3.0;
};

/// `desk` is the scaled-down default; `paper` restores the full-scale model
/// widths, sample counts, and epoch budgets (the synthetic data shape is
/// unchanged — a clinical cohort is out of scope).
PipelineConfig make_preset(const std::string& name);

/// Ordered flat view of every tunable key (dotted names, string values).
using KeyValues = std::map<std::string, std::string>;
KeyValues flatten_config(const PipelineConfig& cfg);

/// Set one dotted key from its string form. Unknown keys and malformed
/// values throw ConfigError.
void apply_key(PipelineConfig& cfg, const std::string& key,
               const std::string& value);
void apply_overrides(PipelineConfig& cfg, const KeyValues& overrides);

/// Environment layer: for each known key, MMGT_<KEY> (uppercased, '.' and
/// existing '_' both become '_') overrides when set.
KeyValues env_overrides();
std::string env_name_for_key(const std::string& key);

/// Flat JSON object file (string/number/bool values accepted).
PipelineConfig load_config_file(const std::filesystem::path& path);
/// The same file as a raw key map, for callers that layer several override
/// sources themselves.
KeyValues read_config_keys(const std::filesystem::path& path);
void save_config_file(const std::filesystem::path& path,
                      const PipelineConfig& cfg);

/// Resolved `key = value` listing for --dry-run.
std::string dry_run_text(const PipelineConfig& cfg);

/// Cross-section consistency checks (seed propagation, dims agreement);
/// returns violations, empty when coherent.
std::vector<std::string> validate_config(const PipelineConfig& cfg);

/// Stage sub-seeds derived from the global seed; every stage consumes only
/// its own stream so stages can be resumed independently.
std::uint64_t stage_seed(const PipelineConfig& cfg, const std::string& stage);

/// Propagate cross-section facts that are derived, not tuned: channel
/// layout from the synthesis section into the model sections, and the
/// per-stage sub-seeds from the global seed. Call after all overrides.
void resolve_derived_fields(PipelineConfig& cfg);

}  // namespace mmgt
