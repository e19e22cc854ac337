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

// Test-only reference implementations, written independently from the
// library code paths they check: voxel-enumeration IoU, brute-force anchor
// matching, a from-the-definitions metric evaluator, finite-difference
// gradients, and a re-derivation of the synthetic relation rules.

#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <tuple>
#include <vector>

#include "fedgraph/metrics.hpp"
#include "fedgraph/models.hpp"
#include "fedgraph/params.hpp"
#include "fedgraph/rng.hpp"
#include "fedgraph/scenegraph.hpp"
#include "fedgraph/synth.hpp"

namespace oracle {

using namespace fedgraph;

// ---------------------------------------------------------------------------
// IoU by explicit voxel enumeration

inline double iou_voxel_enumeration(const Box3D& a, const Box3D& b) {
  std::int64_t inter = 0, uni = 0;
  const std::int64_t z0 = std::min(a.z0, b.z0), z1 = std::max(a.z1, b.z1);
  const std::int64_t y0 = std::min(a.y0, b.y0), y1 = std::max(a.y1, b.y1);
  const std::int64_t x0 = std::min(a.x0, b.x0), x1 = std::max(a.x1, b.x1);
  for (std::int64_t z = z0; z < z1; ++z) {
    for (std::int64_t y = y0; y < y1; ++y) {
      for (std::int64_t x = x0; x < x1; ++x) {
        const bool in_a = a.contains(z, y, x);
        const bool in_b = b.contains(z, y, x);
        if (in_a && in_b) ++inter;
        if (in_a || in_b) ++uni;
      }
    }
  }
  if (inter == 0) return 0.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

/// 216-bit voxel-membership mask of a box within a 6x6x6 grid. Still a
/// genuine voxel enumeration, just popcount-backed so the exhaustive pair
/// sweep stays fast.
struct Mask6 {
  std::array<std::uint64_t, 4> bits{};
};

inline Mask6 mask6_of(const Box3D& b) {
  Mask6 m;
  for (std::int64_t z = 0; z < 6; ++z) {
    for (std::int64_t y = 0; y < 6; ++y) {
      for (std::int64_t x = 0; x < 6; ++x) {
        if (b.contains(z, y, x)) {
          const std::size_t i = static_cast<std::size_t>((z * 6 + y) * 6 + x);
          m.bits[i / 64] |= 1ULL << (i % 64);
        }
      }
    }
  }
  return m;
}

inline double iou_mask6(const Mask6& a, const Mask6& b) {
  std::int64_t inter = 0, uni = 0;
  for (int i = 0; i < 4; ++i) {
    inter += std::popcount(a.bits[static_cast<std::size_t>(i)] & b.bits[static_cast<std::size_t>(i)]);
    uni += std::popcount(a.bits[static_cast<std::size_t>(i)] | b.bits[static_cast<std::size_t>(i)]);
  }
  if (inter == 0) return 0.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

// ---------------------------------------------------------------------------
// Brute-force anchor matching (mirrors the stated rule, double loop)

struct AnchorLabelOracle {
  std::vector<int> label;     // +1/-1/0
  std::vector<int> gt_index;  // for positives
};

inline AnchorLabelOracle match_anchors_bruteforce(const std::vector<Box3D>& anchors,
                                                  const std::vector<Box3D>& gts) {
  AnchorLabelOracle out;
  out.label.assign(anchors.size(), -1);
  out.gt_index.assign(anchors.size(), -1);
  if (gts.empty()) return out;
  for (std::size_t ai = 0; ai < anchors.size(); ++ai) {
    double best = 0.0;
    int best_gt = -1;
    for (std::size_t gi = 0; gi < gts.size(); ++gi) {
      const double iou = iou_voxel_enumeration(anchors[ai], gts[gi]);
      if (iou > best) {
        best = iou;
        best_gt = static_cast<int>(gi);
      }
    }
    if (best >= 0.5) {
      out.label[ai] = 1;
      out.gt_index[ai] = best_gt;
    } else if (best >= 0.3) {
      out.label[ai] = 0;
      out.gt_index[ai] = best_gt;
    }
  }
  for (std::size_t gi = 0; gi < gts.size(); ++gi) {
    double best = 0.0;
    std::ptrdiff_t best_anchor = -1;
    for (std::size_t ai = 0; ai < anchors.size(); ++ai) {
      const double iou = iou_voxel_enumeration(anchors[ai], gts[gi]);
      if (iou > best) {
        best = iou;
        best_anchor = static_cast<std::ptrdiff_t>(ai);
      }
    }
    if (best_anchor >= 0 && out.label[static_cast<std::size_t>(best_anchor)] != 1) {
      out.label[static_cast<std::size_t>(best_anchor)] = 1;
      out.gt_index[static_cast<std::size_t>(best_anchor)] = static_cast<int>(gi);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Metric evaluator, straight from the definitions

struct OracleMetrics {
  std::optional<double> r_at_k, mr_at_k, map_at_k;
  std::optional<double> ar_ventricle, ar_midline, ar_bleeding, ap_bleeding;
  std::optional<double> ub_r_at_k, ub_mr_at_k;
  std::array<std::optional<double>, kNumBleedingSubtypes> subtype_recall{};
};

namespace detail {

struct Trip {
  int subject, object;
  PredicateClass predicate;
  double score;
};

inline std::vector<Trip> ranked_top_k(const std::vector<RelationTriplet>& preds, int k) {
  // collapse duplicates to max score
  std::map<std::tuple<int, int, int>, double> collapsed;
  for (const auto& t : preds) {
    const auto key = std::make_tuple(t.subject_id, static_cast<int>(t.predicate), t.object_id);
    auto it = collapsed.find(key);
    if (it == collapsed.end()) collapsed[key] = t.score;
    else it->second = std::max(it->second, t.score);
  }
  std::vector<Trip> all;
  for (const auto& [key, score] : collapsed) {
    all.push_back({std::get<0>(key), std::get<2>(key),
                   static_cast<PredicateClass>(std::get<1>(key)), score});
  }
  std::sort(all.begin(), all.end(), [](const Trip& a, const Trip& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.subject != b.subject) return a.subject < b.subject;
    if (a.predicate != b.predicate) return a.predicate < b.predicate;
    return a.object < b.object;
  });
  if (static_cast<int>(all.size()) > k) all.resize(static_cast<std::size_t>(k));
  return all;
}

inline const SceneObject* obj_by_id(const std::vector<SceneObject>& objs, int id) {
  for (const auto& o : objs) {
    if (o.id == id) return &o;
  }
  return nullptr;
}

inline bool trip_matches(const Trip& pred, const RelationTriplet& gt,
                         const std::vector<SceneObject>& pred_objs, const SceneGraph& gt_graph,
                         double thr) {
  if (pred.predicate != gt.predicate) return false;
  const SceneObject* ps = obj_by_id(pred_objs, pred.subject);
  const SceneObject* po = obj_by_id(pred_objs, pred.object);
  const SceneObject* gs = gt_graph.find_object(gt.subject_id);
  const SceneObject* go = gt_graph.find_object(gt.object_id);
  if (ps->cls != gs->cls || po->cls != go->cls) return false;
  return iou_voxel_enumeration(ps->box, gs->box) >= thr &&
         iou_voxel_enumeration(po->box, go->box) >= thr;
}

inline double ap_101(const std::vector<std::pair<double, bool>>& ranked_in, std::size_t n_gt) {
  auto ranked = ranked_in;
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  std::size_t tp = 0, fp = 0;
  std::vector<double> prec, rec;
  for (const auto& [s, is_tp] : ranked) {
    (void)s;
    if (is_tp) ++tp;
    else ++fp;
    prec.push_back(static_cast<double>(tp) / static_cast<double>(tp + fp));
    rec.push_back(static_cast<double>(tp) / static_cast<double>(n_gt));
  }
  double sum = 0.0;
  for (int i = 0; i <= 100; ++i) {
    const double r = static_cast<double>(i) / 100.0;
    double best = 0.0;
    for (std::size_t j = 0; j < rec.size(); ++j) {
      if (rec[j] >= r && prec[j] > best) best = prec[j];
    }
    sum += best;
  }
  return 100.0 * sum / 101.0;
}

/// Greedy detection matching as stated: score order, unmatched same-class
/// gt with highest IoU at or above the threshold, ties to the lower gt id.
inline std::vector<int> match_dets(const std::vector<SceneObject>& preds,
                                   const std::vector<SceneObject>& gts, double thr) {
  std::vector<std::size_t> order(preds.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return preds[a].score > preds[b].score; });
  std::vector<int> result(preds.size(), -1);
  std::vector<bool> used(gts.size(), false);
  for (std::size_t pi : order) {
    int chosen = -1;
    double chosen_iou = 0.0;
    for (std::size_t gi = 0; gi < gts.size(); ++gi) {
      if (used[gi]) continue;
      if (gts[gi].cls != preds[pi].cls) continue;
      const double iou = iou_voxel_enumeration(preds[pi].box, gts[gi].box);
      if (iou < thr) continue;
      const bool better =
          iou > chosen_iou ||
          (iou == chosen_iou && chosen >= 0 && gts[gi].id < gts[static_cast<std::size_t>(chosen)].id);
      if (chosen < 0 || better) {
        chosen = static_cast<int>(gi);
        chosen_iou = iou;
      }
    }
    if (chosen >= 0) {
      result[pi] = chosen;
      used[static_cast<std::size_t>(chosen)] = true;
    }
  }
  return result;
}

}  // namespace detail

inline OracleMetrics evaluate_oracle(const std::vector<EvalScene>& scenes, const EvalConfig& cfg) {
  OracleMetrics out;

  // ----- triplet recall, per class and pooled -----
  std::map<int, std::size_t> gt_count, hit_count;
  // mAP candidate pools per class: (score, tp) in pooled rank order
  std::map<int, std::vector<std::pair<double, bool>>> ap_pool;
  {
    // Build the pooled candidate lists per class first (scene order, then
    // rank), then mark TP greedily per pooled score order.
    struct Cand {
      double score;
      std::size_t scene;
      detail::Trip trip;
    };
    std::map<int, std::vector<Cand>> pools;
    for (std::size_t si = 0; si < scenes.size(); ++si) {
      const auto top = detail::ranked_top_k(scenes[si].pred_triplets, cfg.k);
      // per-scene greedy matching for recall
      std::vector<bool> used(scenes[si].gt->relations.size(), false);
      for (const auto& gt : scenes[si].gt->relations) {
        gt_count[static_cast<int>(gt.predicate)] += 1;
      }
      for (const auto& pred : top) {
        for (std::size_t gi = 0; gi < scenes[si].gt->relations.size(); ++gi) {
          if (used[gi]) continue;
          if (detail::trip_matches(pred, scenes[si].gt->relations[gi], scenes[si].pred_objects,
                                   *scenes[si].gt, cfg.iou_threshold)) {
            used[gi] = true;
            hit_count[static_cast<int>(scenes[si].gt->relations[gi].predicate)] += 1;
            break;
          }
        }
        pools[static_cast<int>(pred.predicate)].push_back({pred.score, si, pred});
      }
    }
    for (int c = 0; c < kNumRealPredicates; ++c) {
      if (gt_count[c] == 0) continue;
      auto& pool = pools[c];
      std::stable_sort(pool.begin(), pool.end(),
                       [](const Cand& a, const Cand& b) { return a.score > b.score; });
      std::map<std::size_t, std::vector<bool>> used;
      for (std::size_t si = 0; si < scenes.size(); ++si) {
        used[si].assign(scenes[si].gt->relations.size(), false);
      }
      for (const auto& cand : pool) {
        bool tp = false;
        const auto& scene = scenes[cand.scene];
        for (std::size_t gi = 0; gi < scene.gt->relations.size(); ++gi) {
          if (used[cand.scene][gi]) continue;
          if (scene.gt->relations[gi].predicate != static_cast<PredicateClass>(c)) continue;
          if (detail::trip_matches(cand.trip, scene.gt->relations[gi], scene.pred_objects,
                                   *scene.gt, cfg.iou_threshold)) {
            used[cand.scene][gi] = true;
            tp = true;
            break;
          }
        }
        ap_pool[c].push_back({cand.score, tp});
      }
    }
  }
  {
    std::size_t total = 0, hits = 0;
    double mr_sum = 0.0;
    int mr_classes = 0;
    double map_sum = 0.0;
    int map_classes = 0;
    for (int c = 0; c < kNumRealPredicates; ++c) {
      total += gt_count[c];
      hits += hit_count[c];
      if (gt_count[c] > 0) {
        mr_sum += 100.0 * static_cast<double>(hit_count[c]) / static_cast<double>(gt_count[c]);
        ++mr_classes;
        map_sum += detail::ap_101(ap_pool[c], gt_count[c]);
        ++map_classes;
      }
    }
    if (total > 0) out.r_at_k = 100.0 * static_cast<double>(hits) / static_cast<double>(total);
    if (mr_classes > 0) out.mr_at_k = mr_sum / mr_classes;
    if (map_classes > 0) out.map_at_k = map_sum / map_classes;
  }

  // ----- detection AR/AP per class -----
  auto det_for_class = [&scenes, &cfg](ObjectClass cls) {
    std::size_t n_gt = 0, n_hit = 0;
    std::vector<std::pair<double, bool>> ranked;
    for (const auto& scene : scenes) {
      std::vector<SceneObject> preds, gts;
      for (const auto& p : scene.pred_objects) {
        if (p.cls == cls) preds.push_back(p);
      }
      for (const auto& g : scene.gt->objects) {
        if (g.cls == cls) gts.push_back(g);
      }
      n_gt += gts.size();
      const auto m = detail::match_dets(preds, gts, cfg.iou_threshold);
      for (std::size_t pi = 0; pi < preds.size(); ++pi) {
        ranked.push_back({preds[pi].score, m[pi] >= 0});
        if (m[pi] >= 0) ++n_hit;
      }
    }
    std::pair<std::optional<double>, std::optional<double>> out_pair;
    if (n_gt > 0) {
      out_pair.first = 100.0 * static_cast<double>(n_hit) / static_cast<double>(n_gt);
      out_pair.second = detail::ap_101(ranked, n_gt);
    }
    return out_pair;
  };
  {
    auto [arv, apv] = det_for_class(ObjectClass::VentricleSystem);
    auto [arm, apm] = det_for_class(ObjectClass::Midline);
    auto [arb, apb] = det_for_class(ObjectClass::Bleeding);
    (void)apv;
    (void)apm;
    out.ar_ventricle = arv;
    out.ar_midline = arm;
    out.ar_bleeding = arb;
    out.ap_bleeding = apb;
  }

  // ----- relation upper bounds -----
  {
    std::map<int, std::size_t> total, ok;
    for (const auto& scene : scenes) {
      for (const auto& gt : scene.gt->relations) {
        total[static_cast<int>(gt.predicate)] += 1;
        const SceneObject* gs = scene.gt->find_object(gt.subject_id);
        const SceneObject* go = scene.gt->find_object(gt.object_id);
        auto has_cover = [&](const SceneObject& g) {
          for (const auto& p : scene.pred_objects) {
            if (p.cls == g.cls && iou_voxel_enumeration(p.box, g.box) >= cfg.iou_threshold) {
              return true;
            }
          }
          return false;
        };
        if (has_cover(*gs) && has_cover(*go)) ok[static_cast<int>(gt.predicate)] += 1;
      }
    }
    std::size_t t = 0, h = 0;
    double sum = 0.0;
    int classes = 0;
    for (int c = 0; c < kNumRealPredicates; ++c) {
      t += total[c];
      h += ok[c];
      if (total[c] > 0) {
        sum += 100.0 * static_cast<double>(ok[c]) / static_cast<double>(total[c]);
        ++classes;
      }
    }
    if (t > 0) out.ub_r_at_k = 100.0 * static_cast<double>(h) / static_cast<double>(t);
    if (classes > 0) out.ub_mr_at_k = sum / classes;
  }

  // ----- per-subtype bleeding recall -----
  {
    std::array<std::size_t, kNumBleedingSubtypes> total{}, hit{};
    for (const auto& scene : scenes) {
      std::vector<SceneObject> preds, gts;
      for (const auto& p : scene.pred_objects) {
        if (p.cls == ObjectClass::Bleeding) preds.push_back(p);
      }
      for (const auto& g : scene.gt->objects) {
        if (g.cls == ObjectClass::Bleeding) gts.push_back(g);
      }
      const auto m = detail::match_dets(preds, gts, cfg.iou_threshold);
      std::vector<bool> covered(gts.size(), false);
      for (std::size_t pi = 0; pi < preds.size(); ++pi) {
        if (m[pi] >= 0) covered[static_cast<std::size_t>(m[pi])] = true;
      }
      for (std::size_t gi = 0; gi < gts.size(); ++gi) {
        if (!gts[gi].subtype) continue;
        const auto st = static_cast<std::size_t>(*gts[gi].subtype - 1);
        total[st] += 1;
        if (covered[gi]) hit[st] += 1;
      }
    }
    for (std::size_t st = 0; st < kNumBleedingSubtypes; ++st) {
      if (total[st] > 0) {
        out.subtype_recall[st] =
            100.0 * static_cast<double>(hit[st]) / static_cast<double>(total[st]);
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Random metric fixtures (<= 5 objects, <= 8 relations per scene)

inline std::vector<EvalScene> random_fixture(RngStream& rng, std::vector<SceneGraph>& gt_storage,
                                             std::size_t n_scenes) {
  const Extent extent{12, 24, 24};
  auto random_box = [&rng, &extent]() {
    Box3D b;
    b.z0 = rng.next_in(0, extent.nz - 3);
    b.y0 = rng.next_in(0, extent.ny - 5);
    b.x0 = rng.next_in(0, extent.nx - 5);
    b.z1 = b.z0 + rng.next_in(1, 4);
    b.y1 = b.y0 + rng.next_in(2, 6);
    b.x1 = b.x0 + rng.next_in(2, 6);
    return b;
  };
  auto jitter_box = [&rng, &extent](const Box3D& b) {
    Box3D j = b;
    j.z0 = std::max<std::int64_t>(0, j.z0 + rng.next_in(-1, 1));
    j.y0 = std::max<std::int64_t>(0, j.y0 + rng.next_in(-2, 2));
    j.x0 = std::max<std::int64_t>(0, j.x0 + rng.next_in(-2, 2));
    j.z1 = std::min(extent.nz, std::max(j.z0 + 1, j.z1 + rng.next_in(-1, 1)));
    j.y1 = std::min(extent.ny, std::max(j.y0 + 1, j.y1 + rng.next_in(-2, 2)));
    j.x1 = std::min(extent.nx, std::max(j.x0 + 1, j.x1 + rng.next_in(-2, 2)));
    return j;
  };

  gt_storage.clear();
  gt_storage.resize(n_scenes);
  std::vector<EvalScene> scenes(n_scenes);
  for (std::size_t si = 0; si < n_scenes; ++si) {
    SceneGraph& gt = gt_storage[si];
    gt.objects.push_back({0, ObjectClass::VentricleSystem, std::nullopt, random_box(), 1.0, {}});
    gt.objects.push_back({1, ObjectClass::Midline, std::nullopt, random_box(), 1.0, {}});
    const int n_bleed = static_cast<int>(rng.next_in(0, 3));
    for (int b = 0; b < n_bleed; ++b) {
      gt.objects.push_back({2 + b, ObjectClass::Bleeding,
                            static_cast<int>(rng.next_in(1, kNumBleedingSubtypes)), random_box(),
                            1.0, {}});
    }
    std::set<std::tuple<int, int, int>> seen;
    const int n_rel = static_cast<int>(rng.next_in(0, 8));
    for (int r = 0; r < n_rel && n_bleed > 0; ++r) {
      const int subj = 2 + static_cast<int>(rng.next_in(0, n_bleed - 1));
      const int obj = static_cast<int>(rng.next_in(0, 1));
      const auto allowed = allowed_predicates(ObjectClass::Bleeding,
                                              obj == 0 ? ObjectClass::VentricleSystem
                                                       : ObjectClass::Midline);
      std::vector<PredicateClass> opts(allowed.begin(), allowed.end());
      const auto pred = opts[rng.next_below(opts.size())];
      if (seen.insert({subj, static_cast<int>(pred), obj}).second) {
        gt.relations.push_back({subj, obj, pred, 1.0});
      }
    }

    EvalScene& es = scenes[si];
    es.gt = &gt;
    for (const auto& o : gt.objects) {
      if (rng.next_double() < 0.15) continue;  // missed detection
      SceneObject p = o;
      p.box = jitter_box(o.box);
      p.score = rng.next_double();
      p.subtype = std::nullopt;
      es.pred_objects.push_back(p);
    }
    // extra false positives
    const int extra = static_cast<int>(rng.next_in(0, 2));
    for (int i = 0; i < extra; ++i) {
      SceneObject p;
      p.id = 100 + i;
      p.cls = static_cast<ObjectClass>(rng.next_in(0, 2));
      p.box = random_box();
      p.score = rng.next_double();
      es.pred_objects.push_back(p);
    }
    // re-number predictions
    for (std::size_t i = 0; i < es.pred_objects.size(); ++i) {
      es.pred_objects[i].id = static_cast<int>(i);
    }
    // predicted triplets over schema pairs, with duplicates
    for (const auto& s : es.pred_objects) {
      if (s.cls != ObjectClass::Bleeding) continue;
      for (const auto& o : es.pred_objects) {
        if (o.cls != ObjectClass::VentricleSystem && o.cls != ObjectClass::Midline) continue;
        for (int c = 0; c < kNumRealPredicates; ++c) {
          if (rng.next_double() < 0.5) {
            es.pred_triplets.push_back(
                {s.id, o.id, static_cast<PredicateClass>(c), rng.next_double()});
          }
          if (rng.next_double() < 0.1) {  // duplicate with a different score
            es.pred_triplets.push_back(
                {s.id, o.id, static_cast<PredicateClass>(c), rng.next_double()});
          }
        }
      }
    }
  }
  return scenes;
}

// ---------------------------------------------------------------------------
// Finite differences

/// Max norm-relative error between the analytic gradient and a central
/// finite difference, over the named groups.
inline double finite_diff_rel_error(
    const ParamStore& params, const std::set<std::string>& groups, double h,
    const std::function<double(const ParamStore&)>& loss_of,
    const std::function<GradStore(const ParamStore&)>& grad_of) {
  const GradStore analytic = grad_of(params);
  double err_sq = 0.0, a_sq = 0.0, fd_sq = 0.0;
  for (std::size_t gi = 0; gi < params.groups.size(); ++gi) {
    if (!groups.count(params.groups[gi].name)) continue;
    for (std::size_t k = 0; k < params.groups[gi].values.size(); ++k) {
      ParamStore plus = params;
      plus.groups[gi].values[k] += h;
      ParamStore minus = params;
      minus.groups[gi].values[k] -= h;
      const double fd = (loss_of(plus) - loss_of(minus)) / (2.0 * h);
      const double a = analytic.groups[gi].values[k];
      err_sq += (a - fd) * (a - fd);
      a_sq += a * a;
      fd_sq += fd * fd;
    }
  }
  const double denom = std::max({std::sqrt(a_sq), std::sqrt(fd_sq), 1e-12});
  return std::sqrt(err_sq) / denom;
}

// ---------------------------------------------------------------------------
// Synthetic relation rules, re-derived from the emitted label map

inline std::vector<RelationTriplet> replay_relations(const Volume& vol,
                                                     const std::vector<SceneObject>& objects,
                                                     const RelationThresholds& thr) {
  const auto& e = vol.extent;
  int ventricle_id = -1, midline_id = -1;
  for (const auto& o : objects) {
    if (o.cls == ObjectClass::VentricleSystem) ventricle_id = o.id;
    if (o.cls == ObjectClass::Midline) midline_id = o.id;
  }

  // ventricle halves (independent scan, y-major this time)
  std::int64_t vl = 0, vr = 0;
  Box3D bl{e.nz, e.ny, e.nx, 0, 0, 0}, br{e.nz, e.ny, e.nx, 0, 0, 0};
  for (std::int64_t y = 0; y < e.ny; ++y) {
    for (std::int64_t z = 0; z < e.nz; ++z) {
      for (std::int64_t x = 0; x < e.nx; ++x) {
        if (vol.label(z, y, x) != kLabelVentricle) continue;
        const bool left = x < e.nx / 2;
        auto& box = left ? bl : br;
        (left ? vl : vr) += 1;
        box.z0 = std::min(box.z0, z);
        box.z1 = std::max(box.z1, z + 1);
        box.y0 = std::min(box.y0, y);
        box.y1 = std::max(box.y1, y + 1);
        box.x0 = std::min(box.x0, x);
        box.x1 = std::max(box.x1, x + 1);
      }
    }
  }
  const bool asym =
      vl > 0 && vr > 0 &&
      static_cast<double>(std::llabs(vl - vr)) / static_cast<double>(std::max(vl, vr)) >=
          thr.asym_volume_frac;
  const Box3D smaller = vl <= vr ? bl : br;

  // per-slice midline centroid displacement
  std::vector<double> disp(static_cast<std::size_t>(e.nz), 0.0);
  for (std::int64_t z = 0; z < e.nz; ++z) {
    double sum = 0.0;
    std::int64_t count = 0;
    for (std::int64_t y = 0; y < e.ny; ++y) {
      for (std::int64_t x = 0; x < e.nx; ++x) {
        if (vol.label(z, y, x) == kLabelMidline) {
          sum += static_cast<double>(x);
          ++count;
        }
      }
    }
    if (count > 0) {
      disp[static_cast<std::size_t>(z)] =
          std::abs(sum / static_cast<double>(count) - 0.5 * static_cast<double>(e.nx - 1));
    }
  }

  std::vector<RelationTriplet> out;
  for (const auto& o : objects) {
    if (o.cls != ObjectClass::Bleeding) continue;
    // bleeding voxels inside this object's box
    std::int64_t total = 0, inside = 0;
    double max_disp = 0.0;
    for (std::int64_t z = o.box.z0; z < o.box.z1; ++z) {
      max_disp = std::max(max_disp, disp[static_cast<std::size_t>(z)]);
      for (std::int64_t y = o.box.y0; y < o.box.y1; ++y) {
        for (std::int64_t x = o.box.x0; x < o.box.x1; ++x) {
          if (vol.label(z, y, x) != kLabelBleeding) continue;
          ++total;
          const bool in_left = vl > 0 && bl.contains(z, y, x);
          const bool in_right = vr > 0 && br.contains(z, y, x);
          if (in_left || in_right) ++inside;
        }
      }
    }
    if (ventricle_id >= 0 && total > 0 &&
        static_cast<double>(inside) / static_cast<double>(total) >= thr.flow_overlap_frac) {
      out.push_back({o.id, ventricle_id, PredicateClass::BloodFlowToVentricle, 1.0});
    }
    if (ventricle_id >= 0 && asym) {
      const Box3D dil = o.box.dilated(2);
      const bool touches = std::max(dil.z0, smaller.z0) < std::min(dil.z1, smaller.z1) &&
                           std::max(dil.y0, smaller.y0) < std::min(dil.y1, smaller.y1) &&
                           std::max(dil.x0, smaller.x0) < std::min(dil.x1, smaller.x1);
      if (touches) out.push_back({o.id, ventricle_id, PredicateClass::VentricleAsymmetry, 1.0});
    }
    if (midline_id >= 0 && max_disp >= thr.shift_displacement_vox) {
      out.push_back({o.id, midline_id, PredicateClass::MidlineShift, 1.0});
    }
  }
  std::sort(out.begin(), out.end(), [](const RelationTriplet& a, const RelationTriplet& b) {
    return std::tie(a.subject_id, a.predicate, a.object_id) <
           std::tie(b.subject_id, b.predicate, b.object_id);
  });
  return out;
}

inline bool same_relations(const std::vector<RelationTriplet>& a,
                           const std::vector<RelationTriplet>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].subject_id != b[i].subject_id || a[i].object_id != b[i].object_id ||
        a[i].predicate != b[i].predicate) {
      return false;
    }
  }
  return true;
}

}  // namespace oracle
