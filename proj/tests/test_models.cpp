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

#include <cmath>

#include "fedgraph/models.hpp"
#include "fedgraph/synth.hpp"
#include "support/oracles.hpp"

using namespace fedgraph;

namespace {

Volume uniform_volume(const Extent& e, float value) {
  Volume v;
  v.extent = e;
  v.intensities.assign(static_cast<std::size_t>(e.voxels()), value);
  v.labels.assign(static_cast<std::size_t>(e.voxels()), 0);
  return v;
}

Volume random_volume(const Extent& e, std::uint64_t seed) {
  Volume v = uniform_volume(e, 0.0f);
  RngStream rng(seed);
  for (auto& x : v.intensities) x = static_cast<float>(rng.next_double());
  for (auto& l : v.labels) l = static_cast<std::uint8_t>(rng.next_below(4));
  return v;
}

constexpr Extent kSmall{8, 12, 12};

ObjBatch small_batch(const Volume& vol, std::uint64_t key) {
  ObjBatch batch;
  ObjBatchItem item;
  item.volume = &vol;
  item.gt_bleedings = {{1, 2, 3, 4, 7, 8}, {5, 6, 2, 8, 11, 7}};
  batch.items.push_back(item);
  batch.sample_key = key;
  return batch;
}

}  // namespace

TEST_CASE("build_anchors is deterministic with the advertised count") {
  const Extent e{16, 64, 64};
  const AnchorSet a = build_anchors(e);
  const AnchorSet b = build_anchors(e);
  REQUIRE(a.anchors.size() == b.anchors.size());
  for (std::size_t i = 0; i < a.anchors.size(); ++i) REQUIRE(a.anchors[i] == b.anchors[i]);
  // cells x templates summed over both scales (all templates stay valid
  // after clipping at this extent)
  const std::size_t scale0 = (16 / 2) * (64 / 2) * (64 / 2) * 3;
  const std::size_t scale1 = (16 / 4 + 0) * (64 / 6 + 1) * (64 / 6 + 1) * 3;
  CHECK(a.anchors.size() == scale0 + scale1);
  CHECK_THROWS_AS(build_anchors(Extent{4, 64, 64}), Error);
}

TEST_CASE("anchors cover preset bleedings at IoU 0.3") {
  int covered = 0, total = 0;
  for (const auto& spec : preset_cohorts(7)) {
    for (std::uint64_t i = 0; i < 40; ++i) {
      const Scene s = generate_scene(spec, i);
      const auto& anchors = anchors_for(s.volume.extent);
      bool all = true;
      for (const auto& o : s.graph.objects) {
        if (o.cls != ObjectClass::Bleeding) continue;
        double best = 0.0;
        for (const auto& a : anchors.anchors) best = std::max(best, iou3d(a, o.box));
        all = all && best >= 0.3;
      }
      if (all) ++covered;
      ++total;
    }
  }
  CHECK(covered >= total * 99 / 100);
}

TEST_CASE("anchor stats are zero on a uniform-zero volume") {
  const Volume vol = uniform_volume(kSmall, 0.0f);
  std::vector<float> f(16);
  anchor_features(vol, {1, 2, 3, 4, 7, 8}, 16, f.data());
  CHECK(f[0] == 0.0f);  // mean
  CHECK(f[1] == 0.0f);  // variance
  CHECK(f[2] == 0.0f);  // max
  // projection of a zero patch is zero as well
  for (int i = 6; i < 16; ++i) CHECK(f[static_cast<std::size_t>(i)] == 0.0f);
}

TEST_CASE("anchor stats are translation-consistent") {
  Volume vol = uniform_volume({8, 20, 20}, 0.1f);
  // same 2x3x3 pattern stamped at two locations
  auto stamp = [&vol](std::int64_t z, std::int64_t y, std::int64_t x) {
    float value = 0.2f;
    for (std::int64_t dz = 0; dz < 2; ++dz)
      for (std::int64_t dy = 0; dy < 3; ++dy)
        for (std::int64_t dx = 0; dx < 3; ++dx) {
          vol.intensities[vol.index(z + dz, y + dy, x + dx)] = value;
          value += 0.05f;
        }
  };
  stamp(1, 2, 3);
  stamp(5, 11, 12);
  std::vector<float> fa(16), fb(16);
  anchor_features(vol, {1, 2, 3, 3, 5, 6}, 16, fa.data());
  anchor_features(vol, {5, 11, 12, 7, 14, 15}, 16, fb.data());
  for (int i = 0; i < 16; ++i) {
    CHECK(fa[static_cast<std::size_t>(i)] == fb[static_cast<std::size_t>(i)]);
  }
}

TEST_CASE("anchor projection matches an independent matrix multiply") {
  const Volume vol = random_volume(kSmall, 3);
  const Box3D box{1, 2, 3, 5, 9, 11};
  const int F = 20;
  std::vector<float> f(static_cast<std::size_t>(F));
  anchor_features(vol, box, F, f.data());
  // rebuild the nearest-sampled 3x3x3 patch and multiply by the same
  // seeded matrix
  const auto& m = modeldetail::projection_matrix("anchor_patch", F - 6, 27);
  float patch[27];
  int pi = 0;
  const std::int64_t dz = box.z1 - box.z0, dy = box.y1 - box.y0, dx = box.x1 - box.x0;
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      for (int k = 0; k < 3; ++k) {
        patch[pi++] = vol.intensity(box.z0 + ((2 * i + 1) * dz) / 6, box.y0 + ((2 * j + 1) * dy) / 6,
                                    box.x0 + ((2 * k + 1) * dx) / 6);
      }
    }
  }
  for (int r = 0; r < F - 6; ++r) {
    float acc = 0.0f;
    for (int c = 0; c < 27; ++c) acc += m[static_cast<std::size_t>(r) * 27 + static_cast<std::size_t>(c)] * patch[c];
    CHECK(f[static_cast<std::size_t>(6 + r)] == acc);
  }
}

TEST_CASE("voxel features carry local stats and position") {
  const Volume vol = uniform_volume(kSmall, 0.25f);
  std::vector<float> f(12);
  voxel_features(vol, 4, 6, 6, 12, f.data());
  const float s = modeldetail::kVoxelFeatureScale;
  CHECK(f[0] == s);                             // constant term
  CHECK(f[1] == s * 0.25f);                     // center intensity
  CHECK(f[2] == Catch::Approx(s * 0.25));       // neighborhood mean
  CHECK(f[3] == Catch::Approx(0.0).margin(1e-5));
  CHECK(f[4] == s * 0.25f);                     // neighborhood max
  CHECK(f[5] == Catch::Approx(s * 4.0 / 8.0));  // normalized z
  CHECK(f[6] == Catch::Approx(s * 6.0 / 12.0));
}

TEST_CASE("match_anchors follows the stated thresholds") {
  AnchorSet anchors;
  anchors.extent = kSmall;
  anchors.anchors = {{0, 0, 0, 2, 4, 4}, {2, 4, 4, 4, 8, 8}, {0, 0, 6, 2, 4, 10}};
  SECTION("exact anchor is positive") {
    const auto assign = match_anchors(anchors, {{2, 4, 4, 4, 8, 8}});
    CHECK(assign.label[1] == 1);
    CHECK(assign.gt_index[1] == 0);
  }
  SECTION("empty ground truth marks everything negative") {
    const auto assign = match_anchors(anchors, {});
    for (auto l : assign.label) CHECK(l == -1);
  }
}

TEST_CASE("match_anchors equals the brute-force oracle") {
  RngStream rng(17);
  for (int trial = 0; trial < 50; ++trial) {
    AnchorSet anchors;
    anchors.extent = kSmall;
    auto rand_box = [&rng]() {
      Box3D b;
      b.z0 = rng.next_in(0, 5);
      b.y0 = rng.next_in(0, 8);
      b.x0 = rng.next_in(0, 8);
      b.z1 = b.z0 + rng.next_in(1, 3);
      b.y1 = b.y0 + rng.next_in(1, 4);
      b.x1 = b.x0 + rng.next_in(1, 4);
      return b;
    };
    for (int i = 0; i < 5; ++i) anchors.anchors.push_back(rand_box());
    std::vector<Box3D> gts;
    for (int i = 0; i < 2; ++i) gts.push_back(rand_box());
    const auto got = match_anchors(anchors, gts);
    const auto want = oracle::match_anchors_bruteforce(anchors.anchors, gts);
    for (std::size_t ai = 0; ai < anchors.anchors.size(); ++ai) {
      CAPTURE(trial, ai);
      REQUIRE(static_cast<int>(got.label[ai]) == want.label[ai]);
      if (want.label[ai] == 1) REQUIRE(got.gt_index[ai] == want.gt_index[ai]);
    }
  }
}

TEST_CASE("detector loss with zero weights gives ln 2 per sampled anchor") {
  const Volume vol = random_volume(kSmall, 11);
  ParamStore params = make_initial_params(12, 0);
  for (auto& g : params.groups) std::fill(g.values.begin(), g.values.end(), 0.0);
  const auto loss = detector_loss_and_grad(params, small_batch(vol, 5), DetectorLossPart::Loc);
  CHECK(loss.loc == Catch::Approx(std::log(2.0)));
  CHECK(loss.box == 0.0);
  CHECK(loss.seg == 0.0);
}

TEST_CASE("a batch with no positive anchors has zero box loss and gradient") {
  const Volume vol = random_volume(kSmall, 13);
  const ParamStore params = make_initial_params(12, 3);
  ObjBatch batch;
  ObjBatchItem item;
  item.volume = &vol;  // no ground-truth bleedings at all
  batch.items.push_back(item);
  batch.sample_key = 1;
  const auto loss = detector_loss_and_grad(params, batch);
  CHECK(loss.box == 0.0);
  for (double v : loss.grads.find(kGroupDetectorBox)->values) CHECK(v == 0.0);
}

TEST_CASE("detector gradients match finite differences") {
  const int F = 12;
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    const Volume vol = random_volume(kSmall, 100 + seed);
    ParamStore params = make_initial_params(F, seed);
    const ObjBatch batch = small_batch(vol, seed);
    for (auto part : {DetectorLossPart::Loc, DetectorLossPart::Box, DetectorLossPart::Seg,
                      DetectorLossPart::All}) {
      const double err = oracle::finite_diff_rel_error(
          params, {kGroupDetectorLoc, kGroupDetectorBox, kGroupDetectorSeg}, 1e-5,
          [&](const ParamStore& p) { return detector_loss_and_grad(p, batch, part).total; },
          [&](const ParamStore& p) { return detector_loss_and_grad(p, batch, part).grads; });
      CAPTURE(seed, static_cast<unsigned>(part));
      REQUIRE(err < 1e-4);
    }
  }
}

TEST_CASE("detect_objects caps the object count") {
  const auto spec = preset_cohorts(21)[0];
  const Scene s = generate_scene(spec, 2);
  const ParamStore params = make_initial_params(12, 5);
  CHECK(detect_objects(s.volume, params, 1).size() <= 1);
  CHECK(detect_objects(s.volume, params, 8).size() <= 8);
  const auto dets = detect_objects(s.volume, params, 8);
  for (const auto& o : dets) {
    CHECK(o.box.valid());
    CHECK(o.box.inside(s.volume.extent));
    CHECK(o.score >= 0.0);
    CHECK(o.score <= 1.0);
  }
}

TEST_CASE("perfect segmentation recovers the singleton boxes exactly") {
  const auto spec = preset_cohorts(33)[3];
  const Scene s = generate_scene(spec, 4);
  SegPrediction seg;
  seg.extent = s.volume.extent;
  seg.argmax = s.volume.labels;
  seg.prob.assign(s.volume.labels.size(), 1.0f);
  const auto vent = extract_singleton(seg, ObjectClass::VentricleSystem);
  const auto mid = extract_singleton(seg, ObjectClass::Midline);
  REQUIRE(vent.has_value());
  REQUIRE(mid.has_value());
  CHECK(vent->box == s.graph.objects[0].box);
  CHECK(mid->box == s.graph.objects[1].box);
  CHECK(vent->score == 1.0);
  // no predicted voxels -> absent
  SegPrediction empty;
  empty.extent = s.volume.extent;
  empty.argmax.assign(s.volume.labels.size(), 0);
  empty.prob.assign(s.volume.labels.size(), 1.0f);
  CHECK_FALSE(extract_singleton(empty, ObjectClass::Midline).has_value());
}

TEST_CASE("greedy NMS equals brute-force suppression on a 6-candidate fixture") {
  std::vector<modeldetail::ScoredBox> boxes = {
      {{0, 0, 0, 2, 4, 4}, 0.9, 0}, {{0, 0, 1, 2, 4, 5}, 0.8, 1}, {{0, 6, 6, 2, 10, 10}, 0.7, 2},
      {{0, 0, 0, 2, 4, 4}, 0.6, 3}, {{0, 7, 6, 2, 11, 10}, 0.5, 4}, {{4, 4, 4, 6, 8, 8}, 0.4, 5},
  };
  const auto kept = modeldetail::greedy_nms(boxes, 0.3);
  // brute force: walk by descending score, suppress against kept
  std::vector<modeldetail::ScoredBox> expected;
  std::vector<modeldetail::ScoredBox> sorted = boxes;
  std::sort(sorted.begin(), sorted.end(),
            [](const auto& a, const auto& b) { return a.score > b.score; });
  for (const auto& c : sorted) {
    bool keep = true;
    for (const auto& k : expected) {
      if (oracle::iou_voxel_enumeration(c.box, k.box) >= 0.3) keep = false;
    }
    if (keep) expected.push_back(c);
  }
  REQUIRE(kept.size() == expected.size());
  for (std::size_t i = 0; i < kept.size(); ++i) {
    CHECK(kept[i].anchor_index == expected[i].anchor_index);
  }
}

TEST_CASE("select_pairs builds the schema-filtered ordered product") {
  std::vector<SceneObject> objects = {
      {0, ObjectClass::VentricleSystem, std::nullopt, {0, 0, 0, 2, 2, 2}, 1.0, {}},
      {1, ObjectClass::Midline, std::nullopt, {0, 2, 2, 2, 4, 4}, 1.0, {}},
      {2, ObjectClass::Bleeding, 1, {2, 0, 0, 4, 2, 2}, 1.0, {}},
      {3, ObjectClass::Bleeding, 2, {4, 0, 0, 6, 2, 2}, 1.0, {}},
  };
  const auto pairs = select_pairs(objects);
  REQUIRE(pairs.size() == 4);  // 2 bleedings x 2 singletons
  CHECK(pairs[0].first->id == 2);
  CHECK(pairs[0].second->id == 0);
  CHECK(pairs[3].first->id == 3);
  CHECK(pairs[3].second->id == 1);
  // brute-force cross check
  std::size_t expected = 0;
  for (const auto& s : objects) {
    for (const auto& o : objects) {
      if (s.id != o.id && s.cls == ObjectClass::Bleeding &&
          !allowed_predicates(s.cls, o.cls).empty()) {
        ++expected;
      }
    }
  }
  CHECK(pairs.size() == expected);
  CHECK(select_pairs({objects[0], objects[1]}).empty());
}

TEST_CASE("pair features match a hand-computed instance") {
  Volume vol = uniform_volume(kSmall, 0.5f);
  const SceneObject subj{2, ObjectClass::Bleeding, 4, {2, 2, 2, 4, 6, 6}, 1.0, {}};
  const SceneObject obj{0, ObjectClass::VentricleSystem, std::nullopt, {2, 2, 2, 6, 10, 10}, 1.0, {}};
  const auto f = pair_features(vol, subj, obj);
  // centers: subj (3,4,4), obj (4,6,6); obj sizes (4,8,8)
  CHECK(f[0] == Catch::Approx(-0.25));
  CHECK(f[1] == Catch::Approx(-0.25));
  CHECK(f[2] == Catch::Approx(-0.25));
  CHECK(f[3] == Catch::Approx(std::log(0.5)));
  CHECK(f[4] == Catch::Approx(std::log(0.5)));
  CHECK(f[5] == Catch::Approx(std::log(0.5)));
  CHECK(f[6] == Catch::Approx(32.0 / 256.0));  // subj fully inside: inter 32, union 256
  CHECK(f[7] == 1.0);                          // inside fraction
  CHECK(f[8] == 1.0);
  CHECK(f[9] == 0.0);
  CHECK(f[10 + 4 - 1] == 1.0);  // subtype 4 one-hot
  CHECK(f[15] == Catch::Approx(0.5));
  // identical boxes: zero offsets and log-ratios, iou 1
  const auto g = pair_features(vol, subj, SceneObject{1, ObjectClass::Midline, std::nullopt,
                                                      subj.box, 1.0, {}});
  CHECK(g[0] == 0.0);
  CHECK(g[3] == 0.0);
  CHECK(g[6] == 1.0);
  CHECK(g[7] == 1.0);
}

TEST_CASE("relation_forward adds the log prior only when enabled") {
  Volume vol = uniform_volume(kSmall, 0.1f);
  ParamStore params = make_initial_params(12, 0);
  for (auto& g : params.groups) std::fill(g.values.begin(), g.values.end(), 0.0);
  const SceneObject subj{2, ObjectClass::Bleeding, 1, {2, 2, 2, 4, 4, 4}, 1.0, {}};
  const SceneObject obj{0, ObjectClass::VentricleSystem, std::nullopt, {4, 4, 4, 6, 8, 8}, 1.0, {}};
  SECTION("disabled bias with zero weights gives zero logits") {
    const auto logits = relation_forward(params, vol, subj, obj, false);
    for (double l : logits) CHECK(l == 0.0);
  }
  SECTION("a uniform cell shifts all logits equally") {
    FrequencyBias bias = FrequencyBias::uniform();
    bias_into_params(params, bias);
    const auto logits = relation_forward(params, vol, subj, obj, true);
    for (double l : logits) CHECK(l == Catch::Approx(std::log(0.25 + 1e-6)));
  }
  SECTION("a peaked cell dominates the argmax") {
    FrequencyBias bias = FrequencyBias::uniform();
    double* cell = bias.cell(ObjectClass::Bleeding, ObjectClass::VentricleSystem);
    cell[0] = 0.7;
    cell[1] = 0.1;
    cell[2] = 0.1;
    cell[3] = 0.1;
    bias_into_params(params, bias);
    const auto logits = relation_forward(params, vol, subj, obj, true);
    CHECK(std::max_element(logits.begin(), logits.end()) == logits.begin());
  }
}

namespace {

std::vector<RelBatchItem> one_scene_items(const Volume& vol, const SceneGraph& gt) {
  RelBatchItem item;
  item.volume = &vol;
  item.objects = gt.objects;
  item.gt = &gt;
  return {item};
}

}  // namespace

TEST_CASE("relation loss with zero logits is 4 ln 2 per pair") {
  Volume vol = uniform_volume(kSmall, 0.2f);
  SceneGraph gt;
  gt.objects.push_back({0, ObjectClass::VentricleSystem, std::nullopt, {2, 2, 2, 6, 8, 8}, 1.0, {}});
  gt.objects.push_back({2, ObjectClass::Bleeding, 1, {1, 1, 1, 3, 4, 4}, 1.0, {}});
  ParamStore params = make_initial_params(12, 0);
  for (auto& g : params.groups) std::fill(g.values.begin(), g.values.end(), 0.0);
  const auto items = one_scene_items(vol, gt);
  const auto loss = relation_loss_and_grad(params, items, false);
  CHECK(loss.n_pairs == 1);
  CHECK(loss.total == Catch::Approx(4.0 * std::log(2.0)));
}

TEST_CASE("relation gradients match finite differences and spare the bias") {
  Volume vol = random_volume(kSmall, 303);
  SceneGraph gt;
  gt.objects.push_back({0, ObjectClass::VentricleSystem, std::nullopt, {2, 2, 2, 6, 8, 8}, 1.0, {}});
  gt.objects.push_back({1, ObjectClass::Midline, std::nullopt, {0, 1, 5, 8, 10, 7}, 1.0, {}});
  gt.objects.push_back({2, ObjectClass::Bleeding, 2, {1, 1, 1, 3, 4, 4}, 1.0, {}});
  gt.objects.push_back({3, ObjectClass::Bleeding, 3, {4, 4, 1, 6, 7, 4}, 1.0, {}});
  gt.relations.push_back({2, 0, PredicateClass::BloodFlowToVentricle, 1.0});
  gt.relations.push_back({3, 1, PredicateClass::MidlineShift, 1.0});
  const auto items = one_scene_items(vol, gt);
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    const ParamStore params = make_initial_params(12, 40 + seed);
    for (bool bias : {false, true}) {
      const double err = oracle::finite_diff_rel_error(
          params, {kGroupRelationLinear}, 1e-5,
          [&](const ParamStore& p) { return relation_loss_and_grad(p, items, bias).total; },
          [&](const ParamStore& p) { return relation_loss_and_grad(p, items, bias).grads; });
      CAPTURE(seed, bias);
      REQUIRE(err < 1e-4);
    }
    const auto loss = relation_loss_and_grad(params, items, true);
    for (double v : loss.grads.find(kGroupRelationBias)->values) REQUIRE(v == 0.0);
    for (double v : loss.grads.find(kGroupDetectorLoc)->values) REQUIRE(v == 0.0);
  }
}

TEST_CASE("frequency stats match a hand tally on a two-scene fixture") {
  // scene 1: one bleeding flowing into the ventricle; midline pair untouched
  SceneGraph s1;
  s1.objects.push_back({0, ObjectClass::VentricleSystem, std::nullopt, {0, 0, 0, 2, 2, 2}, 1.0, {}});
  s1.objects.push_back({1, ObjectClass::Midline, std::nullopt, {0, 2, 2, 2, 4, 4}, 1.0, {}});
  s1.objects.push_back({2, ObjectClass::Bleeding, 3, {2, 0, 0, 4, 2, 2}, 1.0, {}});
  s1.relations.push_back({2, 0, PredicateClass::BloodFlowToVentricle, 1.0});
  // scene 2: two bleedings, one flows, one shifts the midline
  SceneGraph s2 = s1;
  s2.objects.push_back({3, ObjectClass::Bleeding, 2, {4, 0, 0, 6, 2, 2}, 1.0, {}});
  s2.relations.push_back({3, 1, PredicateClass::MidlineShift, 1.0});

  const FrequencyBias bias = compute_frequency_stats({&s1, &s2});
  // (Bleeding, Ventricle): flows 2 of 3 pair observations, one silent pair
  const double* bv = bias.cell(ObjectClass::Bleeding, ObjectClass::VentricleSystem);
  CHECK(bv[static_cast<int>(PredicateClass::BloodFlowToVentricle)] == Catch::Approx(2.0 / 3.0));
  CHECK(bv[static_cast<int>(PredicateClass::NoRelation)] == Catch::Approx(1.0 / 3.0));
  // (Bleeding, Midline): 1 shift, 2 no-relation over 3 pairs
  const double* bm = bias.cell(ObjectClass::Bleeding, ObjectClass::Midline);
  CHECK(bm[static_cast<int>(PredicateClass::MidlineShift)] == Catch::Approx(1.0 / 3.0));
  CHECK(bm[static_cast<int>(PredicateClass::NoRelation)] == Catch::Approx(2.0 / 3.0));
  // untouched cells are uniform and every cell sums to one
  const double* vm = bias.cell(ObjectClass::VentricleSystem, ObjectClass::Midline);
  for (int c = 0; c < kNumPredicates; ++c) CHECK(vm[c] == Catch::Approx(0.25));
  for (int s = 0; s < kNumObjectClasses; ++s) {
    for (int o = 0; o < kNumObjectClasses; ++o) {
      double sum = 0.0;
      const double* cell = bias.cell(static_cast<ObjectClass>(s), static_cast<ObjectClass>(o));
      for (int c = 0; c < kNumPredicates; ++c) sum += cell[c];
      CHECK(sum == Catch::Approx(1.0).epsilon(1e-9));
    }
  }
  CHECK_THROWS_AS(compute_frequency_stats({}), Error);
}

TEST_CASE("frequency stats counts are additive across disjoint datasets") {
  const auto spec = preset_cohorts(3)[0];
  std::vector<const SceneGraph*> part1, part2, all;
  std::vector<Scene> storage;
  for (std::uint64_t i = 0; i < 20; ++i) storage.push_back(generate_scene(spec, i));
  for (std::size_t i = 0; i < storage.size(); ++i) {
    if (storage[i].graph.relations.empty()) continue;
    (i < 10 ? part1 : part2).push_back(&storage[i].graph);
    all.push_back(&storage[i].graph);
  }
  REQUIRE_FALSE(part1.empty());
  REQUIRE_FALSE(part2.empty());
  const FrequencyBias b1 = compute_frequency_stats(part1);
  const FrequencyBias b2 = compute_frequency_stats(part2);
  const FrequencyBias ball = compute_frequency_stats(all);
  CHECK(ball.count == b1.count + b2.count);
}

TEST_CASE("detection never changes an object's class downstream") {
  const auto spec = preset_cohorts(19)[0];
  const Scene s = generate_scene(spec, 6);
  const ParamStore params = make_initial_params(12, 1);
  const auto dets = detect_objects(s.volume, params, 8);
  const auto pairs = select_pairs(dets);
  for (const auto& [subj, obj] : pairs) {
    CHECK(subj->cls == ObjectClass::Bleeding);
    CHECK((obj->cls == ObjectClass::VentricleSystem || obj->cls == ObjectClass::Midline));
  }
}
