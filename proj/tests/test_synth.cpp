#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <set>

#include "mmgt/brainnet.hpp"
#include "mmgt/synth.hpp"
#include "mmgt/types.hpp"

namespace fs = std::filesystem;
using namespace mmgt;

namespace {
fs::path temp_dir(const char* name) {
  fs::path d = fs::temp_directory_path() / "mmgt_tests" / name;
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

SynthesisConfig tiny_config() {
  SynthesisConfig c;
  c.n_patients = 12;
  c.volume_shape = {24, 24, 24};
  c.atlas_regions = 8;
  c.atlas_tracts = 20;
  c.rng_seed = 17;
  return c;
}
}  // namespace

TEST_CASE("split arithmetic matches the documented rounding") {
  // n=60, automatic ssl pool: ssl=6, then 54 -> train 37 / test 17,
  // train halves into contrastive 19 (ceil) / classifier 18.
  SplitSizes s = compute_split_sizes(60, 0);
  CHECK(s.ssl == 6);
  CHECK(s.contrastive == 19);
  CHECK(s.classifier == 18);
  CHECK(s.test == 17);
  CHECK(s.ssl + s.contrastive + s.classifier + s.test == 60);

  SplitSizes t = compute_split_sizes(20, 4);
  CHECK(t.ssl == 4);
  CHECK(t.contrastive + t.classifier + t.test == 16);
  CHECK(t.test == 16 - (16 * 7) / 10);

  CHECK_THROWS_AS((void)compute_split_sizes(2, 0), std::invalid_argument);
}

TEST_CASE("synthesis config validation") {
  SynthesisConfig c = tiny_config();
  CHECK(validate_synthesis_config(c).empty());
  c.delta_net = -1.0;
  CHECK_FALSE(validate_synthesis_config(c).empty());
  c = tiny_config();
  c.reference_channel = c.n_channels;  // out of range
  CHECK_FALSE(validate_synthesis_config(c).empty());
}

TEST_CASE("atlas generation is deterministic and structurally sound") {
  SynthesisConfig c = tiny_config();
  Atlas a = generate_atlas(c);
  Atlas b = generate_atlas(c);
  CHECK(a.region_voxels == b.region_voxels);
  CHECK(a.tract_endpoints == b.tract_endpoints);
  CHECK(a.tract_voxels == b.tract_voxels);

  CHECK(validate_atlas(a).empty());
  REQUIRE(a.region_voxels.size() == c.atlas_regions);
  REQUIRE(a.tract_endpoints.size() == c.atlas_tracts);

  // Regions are pairwise disjoint.
  std::set<Voxel> seen;
  for (const auto& region : a.region_voxels)
    for (const auto& v : region) {
      CHECK(seen.insert(v).second);
    }
  // Tract endpoints are canonical distinct region pairs.
  std::set<std::pair<int, int>> pairs;
  for (auto [i, j] : a.tract_endpoints) {
    CHECK(i < j);
    CHECK(j < static_cast<int>(c.atlas_regions));
    CHECK(pairs.insert({i, j}).second);
  }
}

TEST_CASE("atlas JSON round-trip") {
  auto dir = temp_dir("synth_atlas");
  SynthesisConfig c = tiny_config();
  Atlas a = generate_atlas(c);
  save_atlas(dir / "atlas.json", a);
  Atlas back = load_atlas(dir / "atlas.json");
  CHECK(back.volume_shape == a.volume_shape);
  CHECK(back.region_voxels == a.region_voxels);
  CHECK(back.tract_endpoints == a.tract_endpoints);
  CHECK(back.tract_voxels == a.tract_voxels);
}

TEST_CASE("patient generation is deterministic and valid") {
  SynthesisConfig c = tiny_config();
  Atlas atlas = generate_atlas(c);
  PatientSample p1 = generate_patient(c, 1, atlas, 3);
  PatientSample p2 = generate_patient(c, 1, atlas, 3);
  CHECK(p1.volume.data == p2.volume.data);
  CHECK(p1.mask.data == p2.mask.data);

  CHECK(validate_volume(p1.volume).empty());
  CHECK(validate_mask(p1.mask).empty());
  CHECK(p1.mask.foreground_count() > 0);
  CHECK(is_single_6connected_component(p1.mask));

  // The reference channel stays a nonnegative anisotropy-like index.
  for (std::size_t x = 0; x < p1.volume.nx; ++x)
    for (std::size_t y = 0; y < p1.volume.ny; ++y)
      for (std::size_t z = 0; z < p1.volume.nz; ++z)
        REQUIRE(p1.volume.at(c.reference_channel, x, y, z) >= 0.05);

  // Placement guarantees recoverable network signal.
  CHECK(tracts_adjacent_to_mask(atlas, p1.mask, 2).size() >= 1);
}

TEST_CASE("zero effect sizes make the labels byte-identical") {
  SynthesisConfig c = tiny_config();
  c.delta_img = c.delta_geo = c.delta_net = 0.0;
  Atlas atlas = generate_atlas(c);
  PatientSample neg = generate_patient(c, 0, atlas, 5);
  PatientSample pos = generate_patient(c, 1, atlas, 5);
  CHECK(neg.volume.data == pos.volume.data);
  CHECK(neg.mask.data == pos.mask.data);
}

TEST_CASE("network effect attenuates the reference channel along adjacent tracts") {
  SynthesisConfig c = tiny_config();
  c.delta_img = 0.0;
  c.delta_geo = 0.0;
  c.delta_net = 0.5;
  Atlas atlas = generate_atlas(c);
  PatientSample neg = generate_patient(c, 0, atlas, 2);
  PatientSample pos = generate_patient(c, 1, atlas, 2);
  REQUIRE(neg.mask.data == pos.mask.data);  // same geometry, label-only diff

  auto mean_fa_on = [&](const PatientSample& p,
                        const std::vector<std::size_t>& tracts) {
    double sum = 0.0;
    std::size_t n = 0;
    for (auto t : tracts)
      for (const auto& v : atlas.tract_voxels[t]) {
        sum += p.volume.at(c.reference_channel, static_cast<std::size_t>(v.x),
                           static_cast<std::size_t>(v.y),
                           static_cast<std::size_t>(v.z));
        ++n;
      }
    REQUIRE(n > 0);
    return sum / static_cast<double>(n);
  };

  auto adjacent = tracts_adjacent_to_mask(atlas, pos.mask, 2);
  REQUIRE_FALSE(adjacent.empty());
  // The positive class receives the full attenuation, the negative class a
  // 0.3-scaled one, so the positive mean must be strictly lower.
  CHECK(mean_fa_on(pos, adjacent) < mean_fa_on(neg, adjacent));
}

TEST_CASE("tract adjacency rule matches a brute-force scan") {
  SynthesisConfig c = tiny_config();
  Atlas atlas = generate_atlas(c);
  PatientSample p = generate_patient(c, 1, atlas, 7);
  auto fast = tracts_adjacent_to_mask(atlas, p.mask, 2);

  std::vector<std::size_t> slow;
  auto fg = p.mask.foreground_voxels();
  for (std::size_t t = 0; t < atlas.tract_voxels.size(); ++t) {
    bool hit = false;
    for (const auto& tv : atlas.tract_voxels[t]) {
      for (const auto& mv : fg)
        if (chebyshev_distance(tv, mv) <= 2) {
          hit = true;
          break;
        }
      if (hit) break;
    }
    if (hit) slow.push_back(t);
  }
  CHECK(fast == slow);
}

TEST_CASE("cohort generation writes a valid, balanced, split-covering tree") {
  auto dir = temp_dir("synth_cohort");
  SynthesisConfig c = tiny_config();
  // The positive-label stride is n / quota = 4; every non-ssl split of this
  // 16-patient cohort is at least that wide, so each sees both classes.
  c.n_patients = 16;
  CohortManifest m = generate_cohort(c, dir);
  CHECK(validate_manifest(m).empty());
  REQUIRE(m.patients.size() == c.n_patients);

  // Files exist on disk and load back.
  for (const auto& p : m.patients) {
    auto vol = load_volume(dir / p.files.at("volume"));
    auto mask = load_mask(dir / p.files.at("mask"));
    CHECK(vol.channels == c.n_channels);
    CHECK(mask.foreground_count() > 0);
  }
  CHECK(fs::exists(dir / m.atlas_path));
  CHECK(fs::exists(dir / m.config_path));

  // ~25% positive overall.
  int pos = 0, labeled = 0;
  for (const auto& p : m.patients)
    if (p.label >= 0) {
      ++labeled;
      pos += p.label;
    }
  double rate = static_cast<double>(pos) / labeled;
  CHECK(rate >= 0.15);
  CHECK(rate <= 0.35);

  // Interleaved labels: both classes in every labeled split big enough.
  for (const char* split : {"contrastive", "classifier", "test"}) {
    std::set<int> classes;
    for (const auto& p : m.patients)
      if (p.split == split) classes.insert(p.label);
    CHECK(classes.count(0) == 1);
    CHECK(classes.count(1) == 1);
  }
}

TEST_CASE("synthesis config snapshot round-trips") {
  auto dir = temp_dir("synth_cfg");
  SynthesisConfig c = tiny_config();
  c.delta_img = 0.75;
  save_synthesis_config(dir / "synthesis.json", c);
  SynthesisConfig back = load_synthesis_config(dir / "synthesis.json");
  CHECK(back.n_patients == c.n_patients);
  CHECK(back.volume_shape == c.volume_shape);
  CHECK(back.delta_img == c.delta_img);
  CHECK(back.rng_seed == c.rng_seed);
}
