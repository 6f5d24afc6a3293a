#include "mmgt/config.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>

#include <nlohmann/json.hpp>

#include "mmgt/rng.hpp"

namespace mmgt {

namespace {

// ------------------------------------------------------------- converters

std::string bool_to_string(bool v) { return v ? "true" : "false"; }

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("config key '" + key + "': expected bool, got '" + v +
                    "'");
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    double out = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': expected number, got '" + v +
                      "'");
  }
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    unsigned long long out = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return static_cast<std::uint64_t>(out);
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key +
                      "': expected unsigned integer, got '" + v + "'");
  }
}

std::size_t parse_size(const std::string& key, const std::string& v) {
  return static_cast<std::size_t>(parse_u64(key, v));
}

std::string widths_to_string(const std::vector<std::size_t>& w) {
  std::ostringstream out;
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (i) out << ",";
    out << w[i];
  }
  return out.str();
}

std::vector<std::size_t> parse_widths(const std::string& key,
                                      const std::string& v) {
  std::vector<std::size_t> out;
  std::stringstream in(v);
  std::string item;
  while (std::getline(in, item, ','))
    out.push_back(parse_size(key, item));
  if (out.empty())
    throw ConfigError("config key '" + key + "': empty width list");
  return out;
}

// ---------------------------------------------------------------- registry

struct KeySpec {
  std::string name;
  std::function<std::string(const PipelineConfig&)> get;
  std::function<void(PipelineConfig&, const std::string&)> set;
};

#define MMGT_KEY_SIZE(key, field)                                         \
  KeySpec {                                                               \
    key, [](const PipelineConfig& c) { return std::to_string(c.field); }, \
        [](PipelineConfig& c, const std::string& v) {                     \
          c.field = parse_size(key, v);                                   \
        }                                                                 \
  }
#define MMGT_KEY_DOUBLE(key, field)                                        \
  KeySpec {                                                                \
    key,                                                                   \
        [](const PipelineConfig& c) {                                     \
          std::ostringstream o;                                           \
          o << c.field;                                                   \
          return o.str();                                                 \
        },                                                                 \
        [](PipelineConfig& c, const std::string& v) {                     \
          c.field = parse_double(key, v);                                 \
        }                                                                  \
  }
#define MMGT_KEY_BOOL(key, field)                                       \
  KeySpec {                                                             \
    key, [](const PipelineConfig& c) { return bool_to_string(c.field); }, \
        [](PipelineConfig& c, const std::string& v) {                   \
          c.field = parse_bool(key, v);                                 \
        }                                                               \
  }
#define MMGT_KEY_WIDTHS(key, field)                                        \
  KeySpec {                                                                \
    key, [](const PipelineConfig& c) { return widths_to_string(c.field); }, \
        [](PipelineConfig& c, const std::string& v) {                      \
          c.field = parse_widths(key, v);                                  \
        }                                                                  \
  }

const std::vector<KeySpec>& registry() {
  static const std::vector<KeySpec> keys = {
      KeySpec{"preset",
              [](const PipelineConfig& c) { return c.preset; },
              [](PipelineConfig& c, const std::string& v) {
                if (v != "desk" && v != "paper")
                  throw ConfigError("unknown preset '" + v + "'");
                c.preset = v;
              }},
      KeySpec{"seed",
              [](const PipelineConfig& c) { return std::to_string(c.seed); },
              [](PipelineConfig& c, const std::string& v) {
                c.seed = parse_u64("seed", v);
              }},
      KeySpec{"cohort_dir",
              [](const PipelineConfig& c) { return c.cohort_dir; },
              [](PipelineConfig& c, const std::string& v) {
                c.cohort_dir = v;
              }},
      KeySpec{"work_dir", [](const PipelineConfig& c) { return c.work_dir; },
              [](PipelineConfig& c, const std::string& v) { c.work_dir = v; }},
      // synthesis
      MMGT_KEY_SIZE("synthesis.n_patients", synthesis.n_patients),
      KeySpec{"synthesis.volume_side",
              [](const PipelineConfig& c) {
                return std::to_string(c.synthesis.volume_shape[0]);
              },
              [](PipelineConfig& c, const std::string& v) {
                std::size_t s = parse_size("synthesis.volume_side", v);
                c.synthesis.volume_shape = {s, s, s};
              }},
      MMGT_KEY_SIZE("synthesis.n_channels", synthesis.n_channels),
      MMGT_KEY_SIZE("synthesis.reference_channel",
                    synthesis.reference_channel),
      MMGT_KEY_SIZE("synthesis.atlas_regions", synthesis.atlas_regions),
      MMGT_KEY_SIZE("synthesis.atlas_tracts", synthesis.atlas_tracts),
      MMGT_KEY_DOUBLE("synthesis.delta_img", synthesis.delta_img),
      MMGT_KEY_DOUBLE("synthesis.delta_geo", synthesis.delta_geo),
      MMGT_KEY_DOUBLE("synthesis.delta_net", synthesis.delta_net),
      MMGT_KEY_DOUBLE("synthesis.positive_rate", synthesis.positive_rate),
      MMGT_KEY_SIZE("synthesis.n_ssl", synthesis.n_ssl),
      // brainnet
      MMGT_KEY_SIZE("brainnet.node_samples", brainnet.node_samples),
      MMGT_KEY_SIZE("brainnet.edge_samples", brainnet.edge_samples),
      MMGT_KEY_WIDTHS("brainnet.ae_encoder_widths",
                      brainnet.ae_encoder_widths),
      MMGT_KEY_WIDTHS("brainnet.edge_anat_widths", brainnet.edge_anat_widths),
      MMGT_KEY_WIDTHS("brainnet.edge_fa_widths", brainnet.edge_fa_widths),
      MMGT_KEY_WIDTHS("brainnet.edge_proj_widths", brainnet.edge_proj_widths),
      MMGT_KEY_DOUBLE("brainnet.tau_edge", brainnet.tau_edge),
      MMGT_KEY_BOOL("brainnet.include_positive_in_denominator",
                    brainnet.include_positive_in_denominator),
      MMGT_KEY_SIZE("brainnet.ae_epochs", brainnet.ae_epochs),
      MMGT_KEY_SIZE("brainnet.edge_epochs", brainnet.edge_epochs),
      MMGT_KEY_SIZE("brainnet.batch_size", brainnet.batch_size),
      MMGT_KEY_DOUBLE("brainnet.lr", brainnet.lr),
      MMGT_KEY_DOUBLE("brainnet.weight_decay", brainnet.weight_decay),
      MMGT_KEY_DOUBLE("brainnet.lr_decay", brainnet.lr_decay),
      MMGT_KEY_SIZE("brainnet.lr_step_every", brainnet.lr_step_every),
      // encoder
      MMGT_KEY_SIZE("encoder.image_cube", encoder.image_cube),
      MMGT_KEY_WIDTHS("encoder.image_conv_widths", encoder.image_conv_widths),
      MMGT_KEY_WIDTHS("encoder.image_head_widths", encoder.image_head_widths),
      MMGT_KEY_WIDTHS("encoder.geo_conv_widths", encoder.geo_conv_widths),
      MMGT_KEY_WIDTHS("encoder.geo_head_widths", encoder.geo_head_widths),
      MMGT_KEY_SIZE("encoder.node_attr_dim", encoder.node_attr_dim),
      MMGT_KEY_WIDTHS("encoder.net_gat_widths", encoder.net_gat_widths),
      MMGT_KEY_WIDTHS("encoder.net_head_widths", encoder.net_head_widths),
      MMGT_KEY_WIDTHS("encoder.node_att_widths", encoder.node_att_widths),
      MMGT_KEY_DOUBLE("encoder.crossing_radius", encoder.crossing_radius),
      MMGT_KEY_DOUBLE("encoder.uncrossed_attention",
                      encoder.uncrossed_attention),
      MMGT_KEY_BOOL("encoder.raw_cosine_node_attention",
                    encoder.raw_cosine_node_attention),
      MMGT_KEY_BOOL("encoder.use_attention", encoder.use_attention),
      // contrastive
      MMGT_KEY_DOUBLE("contrastive.tau", contrastive.tau),
      MMGT_KEY_DOUBLE("contrastive.lambda", contrastive.lambda),
      MMGT_KEY_SIZE("contrastive.batch_size", contrastive.batch_size),
      MMGT_KEY_SIZE("contrastive.epochs", contrastive.epochs),
      MMGT_KEY_DOUBLE("contrastive.lr", contrastive.lr),
      MMGT_KEY_DOUBLE("contrastive.weight_decay", contrastive.weight_decay),
      MMGT_KEY_DOUBLE("contrastive.lr_decay", contrastive.lr_decay),
      MMGT_KEY_SIZE("contrastive.lr_step_every", contrastive.lr_step_every),
      MMGT_KEY_BOOL("contrastive.augment", contrastive.augment),
      MMGT_KEY_BOOL("contrastive.include_positive_in_denominator",
                    contrastive.include_positive_in_denominator),
      // classifier
      MMGT_KEY_WIDTHS("classifier.gat_widths", classifier.gat_widths),
      MMGT_KEY_DOUBLE("classifier.theta", classifier.theta),
      KeySpec{"classifier.similarity",
              [](const PipelineConfig& c) {
                return c.classifier.similarity == Similarity::kCosine
                           ? std::string("cosine")
                           : std::string("pearson");
              },
              [](PipelineConfig& c, const std::string& v) {
                if (v == "cosine")
                  c.classifier.similarity = Similarity::kCosine;
                else if (v == "pearson")
                  c.classifier.similarity = Similarity::kPearson;
                else
                  throw ConfigError(
                      "config key 'classifier.similarity': expected "
                      "cosine|pearson, got '" +
                      v + "'");
              }},
      MMGT_KEY_SIZE("classifier.epochs", classifier.epochs),
      MMGT_KEY_DOUBLE("classifier.lr", classifier.lr),
      MMGT_KEY_DOUBLE("classifier.weight_decay", classifier.weight_decay),
      MMGT_KEY_DOUBLE("classifier.lr_decay", classifier.lr_decay),
      MMGT_KEY_SIZE("classifier.lr_step_every", classifier.lr_step_every),
      MMGT_KEY_BOOL("classifier.minibatch", classifier.minibatch),
      MMGT_KEY_SIZE("classifier.batch_size", classifier.batch_size),
      // data preparation
      MMGT_KEY_SIZE("crop_pad", crop_pad),
      MMGT_KEY_SIZE("fps_points", fps_points),
      MMGT_KEY_DOUBLE("graph_radius", graph_radius),
  };
  return keys;
}

#undef MMGT_KEY_SIZE
#undef MMGT_KEY_DOUBLE
#undef MMGT_KEY_BOOL
#undef MMGT_KEY_WIDTHS

const KeySpec* find_key(const std::string& name) {
  for (const auto& k : registry())
    if (k.name == name) return &k;
  return nullptr;
}

}  // namespace

PipelineConfig make_preset(const std::string& name) {
  PipelineConfig c;
  c.preset = name;
  if (name == "desk") return c;
  if (name != "paper") throw ConfigError("unknown preset '" + name + "'");
  // Full-scale model; synthetic data shape stays desk-sized.
  c.brainnet.node_samples = 1000;  // x4 channels -> 4000-dim region vectors
  c.brainnet.edge_samples = 1000;
  c.brainnet.ae_encoder_widths = {2048, 1024, 512, 128, 32, 16};
  c.brainnet.edge_anat_widths = {2048, 1024, 512, 128, 32, 16};
  c.brainnet.edge_fa_widths = {1024, 512, 128, 32, 16};
  c.brainnet.ae_epochs = 1000;
  c.brainnet.edge_epochs = 1000;
  c.encoder.image_conv_widths = {64, 128, 128, 256, 256};
  c.encoder.image_head_widths = {512, 256, 32};
  c.encoder.geo_conv_widths = {32, 64, 64, 128, 128};
  c.encoder.geo_head_widths = {256, 128, 32};
  c.encoder.net_gat_widths = {64, 128, 128, 256, 256, 256};
  c.encoder.net_head_widths = {512, 256, 32};
  c.contrastive.epochs = 1000;
  c.contrastive.augment = true;
  c.classifier.gat_widths = {64, 128, 128, 128};
  return c;
}

KeyValues flatten_config(const PipelineConfig& cfg) {
  KeyValues out;
  for (const auto& k : registry()) out[k.name] = k.get(cfg);
  return out;
}

void apply_key(PipelineConfig& cfg, const std::string& key,
               const std::string& value) {
  const KeySpec* spec = find_key(key);
  if (!spec) throw ConfigError("unknown config key '" + key + "'");
  spec->set(cfg, value);
}

void apply_overrides(PipelineConfig& cfg, const KeyValues& overrides) {
  // Preset first: it resets whole sections, so explicit keys must win.
  auto preset = overrides.find("preset");
  if (preset != overrides.end()) cfg = make_preset(preset->second);
  for (const auto& [key, value] : overrides) {
    if (key == "preset") continue;
    apply_key(cfg, key, value);
  }
}

std::string env_name_for_key(const std::string& key) {
  std::string out = "MMGT_";
  for (char ch : key)
    out.push_back(ch == '.' ? '_'
                            : static_cast<char>(std::toupper(
                                  static_cast<unsigned char>(ch))));
  return out;
}

KeyValues env_overrides() {
  KeyValues out;
  for (const auto& k : registry()) {
    const char* v = std::getenv(env_name_for_key(k.name).c_str());
    if (v) out[k.name] = v;
  }
  return out;
}

KeyValues read_config_keys(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config file " + path.string() + ": " + e.what());
  }
  if (!doc.is_object())
    throw ConfigError("config file " + path.string() +
                      ": expected a flat JSON object");
  KeyValues overrides;
  for (const auto& [key, value] : doc.items()) {
    if (value.is_string())
      overrides[key] = value.get<std::string>();
    else if (value.is_boolean())
      overrides[key] = value.get<bool>() ? "true" : "false";
    else if (value.is_number())
      overrides[key] = value.dump();
    else
      throw ConfigError("config key '" + key +
                        "': values must be scalar (string/number/bool)");
  }
  return overrides;
}

PipelineConfig load_config_file(const std::filesystem::path& path) {
  PipelineConfig cfg;
  apply_overrides(cfg, read_config_keys(path));
  return cfg;
}

void save_config_file(const std::filesystem::path& path,
                      const PipelineConfig& cfg) {
  nlohmann::json doc;
  for (const auto& [key, value] : flatten_config(cfg)) doc[key] = value;
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write config file " + path.string());
  out << doc.dump(2) << "\n";
}

std::string dry_run_text(const PipelineConfig& cfg) {
  std::ostringstream out;
  for (const auto& [key, value] : flatten_config(cfg))
    out << key << " = " << value << "\n";
  return out.str();
}

std::vector<std::string> validate_config(const PipelineConfig& cfg) {
  std::vector<std::string> out = validate_synthesis_config(cfg.synthesis);
  for (auto& v : validate_contrastive_config(cfg.contrastive))
    out.push_back(std::move(v));
  if (cfg.encoder.image_channels + 1 != cfg.synthesis.n_channels)
    out.push_back(
        "config: encoder image channels must be synthesis channels minus the "
        "reference channel");
  if (cfg.brainnet.ae_encoder_widths.back() != cfg.encoder.node_attr_dim)
    out.push_back(
        "config: autoencoder bottleneck dim must equal encoder node attr dim");
  if (cfg.brainnet.edge_anat_widths.back() != cfg.encoder.node_attr_dim)
    out.push_back(
        "config: edge encoder output dim must equal encoder node attr dim");
  if (cfg.classifier.theta < -1.0 || cfg.classifier.theta > 1.0)
    out.push_back("config: classifier theta must be in [-1, 1]");
  if (cfg.crop_pad >= cfg.encoder.image_cube)
    out.push_back("config: crop pad must be smaller than the crop cube");
  if (!(cfg.graph_radius > 0.0))
    out.push_back("config: graph radius must be positive");
  if (cfg.fps_points == 0) out.push_back("config: fps_points must be >= 1");
  return out;
}

std::uint64_t stage_seed(const PipelineConfig& cfg, const std::string& stage) {
  return derive_seed(cfg.seed, stage);
}

void resolve_derived_fields(PipelineConfig& cfg) {
  cfg.synthesis.rng_seed = stage_seed(cfg, "synthesis");
  cfg.brainnet.seed = stage_seed(cfg, "brainnet");
  cfg.contrastive.seed = stage_seed(cfg, "contrastive");
  cfg.classifier.seed = stage_seed(cfg, "classifier");
  cfg.brainnet.reference_channel = cfg.synthesis.reference_channel;
  cfg.encoder.image_channels = cfg.synthesis.n_channels - 1;
  cfg.encoder.node_attr_dim = cfg.brainnet.ae_encoder_widths.back();
}

}  // namespace mmgt
