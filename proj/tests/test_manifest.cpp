#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "mmgt/manifest.hpp"

namespace fs = std::filesystem;
using namespace mmgt;

namespace {
fs::path temp_dir(const char* name) {
  fs::path d = fs::temp_directory_path() / "mmgt_tests" / name;
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

CohortManifest small_manifest() {
  CohortManifest m;
  m.atlas_path = "atlas.json";
  m.config_path = "synthesis.json";
  const char* splits[4] = {"ssl", "contrastive", "classifier", "test"};
  for (int i = 0; i < 8; ++i) {
    PatientEntry e;
    e.id = "p00" + std::to_string(i);
    e.label = i % 2;
    e.split = splits[i / 2];
    e.files["volume"] = e.id + "_volume.mmgt";
    e.files["mask"] = e.id + "_mask.mmgt";
    m.patients.push_back(e);
  }
  return m;
}
}  // namespace

TEST_CASE("manifest JSON round-trip preserves everything") {
  auto dir = temp_dir("manifest_rt");
  CohortManifest m = small_manifest();
  m.patients[0].label = -1;  // ssl entries may omit the label
  save_manifest(dir / "cohort.json", m);
  CohortManifest back = load_manifest(dir / "cohort.json");
  REQUIRE(back.patients.size() == m.patients.size());
  for (std::size_t i = 0; i < m.patients.size(); ++i) {
    CHECK(back.patients[i].id == m.patients[i].id);
    CHECK(back.patients[i].label == m.patients[i].label);
    CHECK(back.patients[i].split == m.patients[i].split);
    CHECK(back.patients[i].files == m.patients[i].files);
  }
  CHECK(back.atlas_path == m.atlas_path);
  CHECK(back.config_path == m.config_path);
}

TEST_CASE("missing label serializes as JSON null") {
  auto dir = temp_dir("manifest_null");
  CohortManifest m = small_manifest();
  m.patients[1].label = -1;
  m.patients[1].split = "ssl";
  save_manifest(dir / "cohort.json", m);
  std::ifstream in(dir / "cohort.json");
  std::string text((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  CHECK(text.find("null") != std::string::npos);
}

TEST_CASE("split lookup helpers") {
  CohortManifest m = small_manifest();
  auto ids = m.ids_in_split("classifier");
  REQUIRE(ids.size() == 2);
  CHECK(ids[0] == "p004");
  CHECK(ids[1] == "p005");
  REQUIRE(m.find("p003") != nullptr);
  CHECK(m.find("p003")->split == "contrastive");
  CHECK(m.find("nope") == nullptr);
}

TEST_CASE("validator accepts a well-formed manifest") {
  CHECK(validate_manifest(small_manifest()).empty());
}

TEST_CASE("validator reports violations") {
  SUBCASE("duplicate id") {
    CohortManifest m = small_manifest();
    m.patients[1].id = m.patients[0].id;
    CHECK_FALSE(validate_manifest(m).empty());
  }
  SUBCASE("unknown split name") {
    CohortManifest m = small_manifest();
    m.patients[2].split = "validation";
    CHECK_FALSE(validate_manifest(m).empty());
  }
  SUBCASE("missing label outside ssl") {
    CohortManifest m = small_manifest();
    m.patients[4].label = -1;  // classifier split
    CHECK_FALSE(validate_manifest(m).empty());
  }
  SUBCASE("label out of range") {
    CohortManifest m = small_manifest();
    m.patients[4].label = 2;
    CHECK_FALSE(validate_manifest(m).empty());
  }
  SUBCASE("missing modality file entry") {
    CohortManifest m = small_manifest();
    m.patients[5].files.erase("mask");
    CHECK_FALSE(validate_manifest(m).empty());
  }
  SUBCASE("violation names the offending patient") {
    CohortManifest m = small_manifest();
    m.patients[5].files.erase("mask");
    auto v = validate_manifest(m);
    REQUIRE_FALSE(v.empty());
    bool named = false;
    for (const auto& msg : v)
      if (msg.find("p005") != std::string::npos) named = true;
    CHECK(named);
  }
}

TEST_CASE("load rejects malformed JSON") {
  auto dir = temp_dir("manifest_bad");
  std::ofstream(dir / "cohort.json") << "{ not json";
  CHECK_THROWS((void)load_manifest(dir / "cohort.json"));
}
