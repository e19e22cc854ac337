/*
 * Copyright 2026 The Fedgraph Authors.
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include <catch2/catch_amalgamated.hpp>

#include <set>

#include "fedgraph/synth.hpp"
#include "support/oracles.hpp"

using namespace fedgraph;

TEST_CASE("generate_scene is a pure function of spec and index") {
  const auto spec = preset_cohorts(123)[0];
  const Scene a = generate_scene(spec, 17);
  const Scene b = generate_scene(spec, 17);
  CHECK(a.volume.intensities == b.volume.intensities);
  CHECK(a.volume.labels == b.volume.labels);
  REQUIRE(a.graph.objects.size() == b.graph.objects.size());
  for (std::size_t i = 0; i < a.graph.objects.size(); ++i) {
    CHECK(a.graph.objects[i].box == b.graph.objects[i].box);
  }
  REQUIRE(a.graph.relations.size() == b.graph.relations.size());
}

TEST_CASE("different scene indices and client ids give different scenes") {
  auto spec = preset_cohorts(9)[0];
  const Scene a = generate_scene(spec, 0);
  const Scene b = generate_scene(spec, 1);
  CHECK(a.volume.intensities != b.volume.intensities);
  CohortSpec other = spec;
  other.client_id = "Z";
  const Scene c = generate_scene(other, 0);
  CHECK(a.volume.intensities != c.volume.intensities);
}

TEST_CASE("a zero-bleeding distribution yields only the singletons") {
  CohortSpec spec = preset_cohorts(5)[3];
  spec.bleed_count_dist = {1.0, 0, 0, 0, 0, 0, 0};
  const Scene s = generate_scene(spec, 3);
  REQUIRE(s.graph.objects.size() == 2);
  CHECK(s.graph.objects[0].cls == ObjectClass::VentricleSystem);
  CHECK(s.graph.objects[1].cls == ObjectClass::Midline);
  CHECK(s.graph.relations.empty());
}

TEST_CASE("generated scenes validate as ground truth over many seeds") {
  // schema soundness across presets; 1000 scenes total
  const auto specs = preset_cohorts(2024);
  for (const auto& spec : specs) {
    for (std::uint64_t i = 0; i < 250; ++i) {
      const Scene s = generate_scene(spec, i);
      const auto violations = validate_scene(s.graph, s.volume.extent, true);
      if (!violations.empty()) {
        CAPTURE(spec.client_id, i, violations[0].rule);
      }
      REQUIRE(violations.empty());
    }
  }
}

TEST_CASE("relations equal an independent re-derivation from the label map") {
  const auto specs = preset_cohorts(77);
  for (const auto& spec : specs) {
    for (std::uint64_t i = 0; i < 60; ++i) {
      const Scene s = generate_scene(spec, i);
      const auto replayed = oracle::replay_relations(s.volume, s.graph.objects, spec.thresholds);
      CAPTURE(spec.client_id, i);
      REQUIRE(oracle::same_relations(s.graph.relations, replayed));
    }
  }
}

TEST_CASE("label regions match the scene object boxes") {
  const auto spec = preset_cohorts(31)[1];
  for (std::uint64_t i = 0; i < 25; ++i) {
    const Scene s = generate_scene(spec, i);
    for (const auto& o : s.graph.objects) {
      // every face of the object box carries at least one voxel of its label
      Box3D seen{s.volume.extent.nz, s.volume.extent.ny, s.volume.extent.nx, 0, 0, 0};
      REQUIRE(o.mask_label.has_value());
      for (std::int64_t z = o.box.z0; z < o.box.z1; ++z) {
        for (std::int64_t y = o.box.y0; y < o.box.y1; ++y) {
          for (std::int64_t x = o.box.x0; x < o.box.x1; ++x) {
            if (s.volume.label(z, y, x) != *o.mask_label) continue;
            seen.z0 = std::min(seen.z0, z);
            seen.y0 = std::min(seen.y0, y);
            seen.x0 = std::min(seen.x0, x);
            seen.z1 = std::max(seen.z1, z + 1);
            seen.y1 = std::max(seen.y1, y + 1);
            seen.x1 = std::max(seen.x1, x + 1);
          }
        }
      }
      REQUIRE(seen == o.box);
    }
  }
}

TEST_CASE("generate_cohort computes the relation subset and the split") {
  const auto spec = preset_cohorts(55)[0];
  const Dataset ds = generate_cohort(spec, 40);
  REQUIRE(ds.scenes.size() == 40);
  REQUIRE(ds.obj_indices.size() == 40);
  std::set<std::size_t> rel(ds.rel_indices.begin(), ds.rel_indices.end());
  for (std::size_t i = 0; i < ds.scenes.size(); ++i) {
    const bool has_rel = !ds.scenes[i].graph.relations.empty();
    CHECK(rel.count(i) == static_cast<std::size_t>(has_rel));
  }
  // rel_indices is a subset of obj_indices
  for (auto i : ds.rel_indices) {
    CHECK(std::find(ds.obj_indices.begin(), ds.obj_indices.end(), i) != ds.obj_indices.end());
  }
  // all three splits appear at this size
  int train = 0, val = 0, test = 0;
  for (auto s : ds.split) {
    if (s == Split::Train) ++train;
    if (s == Split::Val) ++val;
    if (s == Split::Test) ++test;
  }
  CHECK(train > 0);
  CHECK(val > 0);
  CHECK(test > 0);
  CHECK(train > test);
}

TEST_CASE("generate_cohort is deterministic") {
  const auto spec = preset_cohorts(66)[2];
  const Dataset a = generate_cohort(spec, 12);
  const Dataset b = generate_cohort(spec, 12);
  REQUIRE(a.scenes.size() == b.scenes.size());
  for (std::size_t i = 0; i < a.scenes.size(); ++i) {
    CHECK(a.scenes[i].volume.intensities == b.scenes[i].volume.intensities);
    CHECK(a.split[i] == b.split[i]);
  }
}

TEST_CASE("presets are four distinct valid cohorts") {
  const auto specs = preset_cohorts(0);
  REQUIRE(specs.size() == 4);
  std::set<std::string> names;
  for (const auto& s : specs) {
    s.validate();
    names.insert(s.client_id);
  }
  CHECK(names == std::set<std::string>{"A", "B", "C", "D"});
  for (std::size_t i = 0; i < specs.size(); ++i) {
    for (std::size_t j = i + 1; j < specs.size(); ++j) {
      CHECK(specs[i].subtype_mix != specs[j].subtype_mix);
    }
  }
}

TEST_CASE("every preset generates enough scenes with relations") {
  // measured over a slice here; the n=200 figure is part of the suite runs
  for (const auto& spec : preset_cohorts(404)) {
    int with_rel = 0;
    const int n = 120;
    for (std::uint64_t i = 0; i < n; ++i) {
      if (!generate_scene(spec, i).graph.relations.empty()) ++with_rel;
    }
    CAPTURE(spec.client_id, with_rel);
    CHECK(with_rel >= n * 2 / 5);
  }
}

TEST_CASE("cohort spec invariants are enforced") {
  CohortSpec spec = preset_cohorts(1)[0];
  spec.subtype_mix = {0.5, 0.5, 0.5, 0, 0};
  CHECK_THROWS_AS(spec.validate(), Error);
  spec = preset_cohorts(1)[0];
  spec.thresholds.flow_overlap_frac = 0.0;
  CHECK_THROWS_AS(spec.validate(), Error);
  spec = preset_cohorts(1)[0];
  spec.volume_extent = {4, 8, 8};
  CHECK_THROWS_AS(generate_scene(spec, 0), Error);
}

TEST_CASE("intensity distributions differ across presets") {
  const auto specs = preset_cohorts(8);
  const Scene a = generate_scene(specs[0], 0);
  const Scene c = generate_scene(specs[2], 0);
  double mean_a = 0, mean_c = 0;
  for (float v : a.volume.intensities) mean_a += v;
  for (float v : c.volume.intensities) mean_c += v;
  mean_a /= static_cast<double>(a.volume.intensities.size());
  mean_c /= static_cast<double>(c.volume.intensities.size());
  CHECK(std::abs(mean_a - mean_c) > 0.05);  // C has a much brighter background
}
