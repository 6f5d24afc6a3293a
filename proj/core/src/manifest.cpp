#include "mmgt/manifest.hpp"

#include <fstream>
#include <set>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace mmgt {

std::vector<std::string> CohortManifest::ids_in_split(
    const std::string& split) const {
  std::vector<std::string> out;
  for (const auto& p : patients)
    if (p.split == split) out.push_back(p.id);
  return out;
}

const PatientEntry* CohortManifest::find(const std::string& id) const {
  for (const auto& p : patients)
    if (p.id == id) return &p;
  return nullptr;
}

std::vector<std::string> validate_manifest(const CohortManifest& manifest) {
  std::vector<std::string> violations;
  std::set<std::string> seen;
  std::set<std::string> valid_splits(std::begin(kSplitNames),
                                     std::end(kSplitNames));
  for (const auto& p : manifest.patients) {
    if (p.id.empty()) violations.push_back("patient with empty id");
    if (!seen.insert(p.id).second)
      violations.push_back("duplicate patient id: " + p.id);
    if (!valid_splits.count(p.split))
      violations.push_back("patient " + p.id + ": invalid split tag '" +
                           p.split + "'");
    if (p.split != "ssl" && p.label < 0)
      violations.push_back("patient " + p.id + ": missing label");
    if (p.label > 1)
      violations.push_back("patient " + p.id + ": label not binary");
  }
  for (const char* split : kSplitNames) {
    bool any = false;
    for (const auto& p : manifest.patients)
      if (p.split == split) {
        any = true;
        break;
      }
    if (!any)
      violations.push_back(std::string("empty split partition: ") + split);
  }
  return violations;
}

void save_manifest(const std::filesystem::path& path,
                   const CohortManifest& manifest) {
  nlohmann::json doc;
  doc["patients"] = nlohmann::json::array();
  for (const auto& p : manifest.patients) {
    nlohmann::json entry;
    entry["id"] = p.id;
    if (p.label < 0)
      entry["label"] = nullptr;
    else
      entry["label"] = p.label;
    entry["split"] = p.split;
    entry["files"] = p.files;
    doc["patients"].push_back(std::move(entry));
  }
  doc["atlas"] = manifest.atlas_path;
  doc["config"] = manifest.config_path;
  std::ofstream out(path);
  if (!out)
    throw std::runtime_error("cannot write manifest: " + path.string());
  out << doc.dump(2) << "\n";
}

CohortManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open manifest: " + path.string());
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::parse_error& e) {
    throw std::runtime_error("manifest is not valid JSON: " + path.string() +
                             " (" + e.what() + ")");
  }
  CohortManifest manifest;
  for (const auto& entry : doc.at("patients")) {
    PatientEntry p;
    p.id = entry.at("id").get<std::string>();
    if (entry.contains("label") && !entry.at("label").is_null())
      p.label = entry.at("label").get<int>();
    p.split = entry.at("split").get<std::string>();
    if (entry.contains("files"))
      p.files = entry.at("files").get<std::map<std::string, std::string>>();
    manifest.patients.push_back(std::move(p));
  }
  manifest.atlas_path = doc.value("atlas", "");
  manifest.config_path = doc.value("config", "");
  return manifest;
}

}  // namespace mmgt
