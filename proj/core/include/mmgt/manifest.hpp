#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace mmgt {

inline constexpr const char* kSplitNames[4] = {"ssl", "contrastive",
                                               "classifier", "test"};

struct PatientEntry {
  std::string id;
  int label = -1;  // -1 = absent (allowed only for the ssl split)
  std::string split;
  std::map<std::string, std::string> files;  // modality name -> relative path
};

/// Cohort index: one entry per patient plus the atlas/config file references.
/// File paths are relative to the manifest's own directory.
struct CohortManifest {
  std::vector<PatientEntry> patients;
  std::string atlas_path;
  std::string config_path;

  std::vector<std::string> ids_in_split(const std::string& split) const;
  const PatientEntry* find(const std::string& id) const;
};

/// Invariant checks; returns one human-readable violation per broken rule
/// (empty list means the manifest is well-formed). Violations name the
/// offending patient where one exists. Pure — no filesystem access.
std::vector<std::string> validate_manifest(const CohortManifest& manifest);

/// JSON round-trip of cohort.json: keys `patients` (array of
/// {id, label, split, files}), `atlas`, `config`. A missing label is
/// serialized as null.
void save_manifest(const std::filesystem::path& path,
                   const CohortManifest& manifest);
CohortManifest load_manifest(const std::filesystem::path& path);

}  // namespace mmgt
