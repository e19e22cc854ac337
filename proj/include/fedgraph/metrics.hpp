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

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fedgraph/errors.hpp"
#include "fedgraph/models.hpp"
#include "fedgraph/scenegraph.hpp"
#include "fedgraph/synth.hpp"

namespace fedgraph {

enum class EvalTask { PredicateClassification, SceneGraphGeneration };

struct EvalConfig {
  double iou_threshold = 0.3;
  int k = 8;
  EvalTask task = EvalTask::SceneGraphGeneration;
};

/// One scene's predictions next to its ground truth.
struct EvalScene {
  std::vector<SceneObject> pred_objects;
  std::vector<RelationTriplet> pred_triplets;
  const SceneGraph* gt = nullptr;
};

/// All values in percent.
struct EvalReport {
  std::string task;
  int n_scenes = 0;
  std::optional<double> ar_ventricle, ar_midline, ar_bleeding;
  std::optional<double> ap_bleeding;
  std::optional<double> r_at_k, mr_at_k, map_at_k;
  std::optional<double> ub_r_at_k, ub_mr_at_k;
  std::array<std::optional<double>, kNumBleedingSubtypes> subtype_recall{};
};

// ---------------------------------------------------------------------------
// Detection matching and AR/AP

/// Greedy one-to-one matching: predictions in descending score order claim
/// the unmatched same-class ground truth with the highest IoU >= iou_thr.
/// Returns per-prediction ground-truth indices (-1 when unmatched).
inline std::vector<int> match_detections(const std::vector<SceneObject>& preds,
                                         const std::vector<SceneObject>& gts, double iou_thr) {
  std::vector<std::size_t> order(preds.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&preds](std::size_t a, std::size_t b) { return preds[a].score > preds[b].score; });
  std::vector<int> match(preds.size(), -1);
  std::vector<bool> taken(gts.size(), false);
  for (std::size_t pi : order) {
    double best = -1.0;
    int best_gt = -1;
    for (std::size_t gi = 0; gi < gts.size(); ++gi) {
      if (taken[gi] || gts[gi].cls != preds[pi].cls) continue;
      const double iou = iou3d(preds[pi].box, gts[gi].box);
      if (iou < iou_thr) continue;
      if (iou > best ||
          (iou == best && gts[gi].id < gts[static_cast<std::size_t>(best_gt)].id)) {
        best = iou;
        best_gt = static_cast<int>(gi);
      }
    }
    if (best_gt >= 0) {
      match[pi] = best_gt;
      taken[static_cast<std::size_t>(best_gt)] = true;
    }
  }
  return match;
}

namespace metricdetail {

/// 101-point interpolated average precision over a pooled, score-ranked
/// TP/FP sequence, in percent.
inline double interpolated_ap(std::vector<std::pair<double, bool>> ranked, std::size_t n_gt) {
  if (n_gt == 0) return 0.0;
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  std::vector<double> precision, recall;
  std::size_t tp = 0, fp = 0;
  for (const auto& [score, is_tp] : ranked) {
    (void)score;
    if (is_tp) ++tp;
    else ++fp;
    precision.push_back(static_cast<double>(tp) / static_cast<double>(tp + fp));
    recall.push_back(static_cast<double>(tp) / static_cast<double>(n_gt));
  }
  double ap = 0.0;
  for (int i = 0; i <= 100; ++i) {
    const double r = static_cast<double>(i) / 100.0;
    double best = 0.0;
    for (std::size_t j = 0; j < recall.size(); ++j) {
      if (recall[j] >= r) best = std::max(best, precision[j]);
    }
    ap += best;
  }
  return 100.0 * ap / 101.0;
}

}  // namespace metricdetail

struct DetectionMetrics {
  std::optional<double> ar;  // absent when the class has no ground truth
  std::optional<double> ap;
};

/// Pooled AR and 101-point AP at the configured IoU threshold, optionally
/// restricted to one object class.
inline DetectionMetrics detection_ar_ap(const std::vector<EvalScene>& scenes,
                                        std::optional<ObjectClass> class_filter, double iou_thr) {
  if (scenes.empty()) throw Error(Errc::EmptyInput, "no scenes");
  std::size_t n_gt = 0, n_matched = 0;
  std::vector<std::pair<double, bool>> ranked;  // (score, matched)
  for (const auto& scene : scenes) {
    std::vector<SceneObject> preds, gts;
    for (const auto& p : scene.pred_objects) {
      if (!class_filter || p.cls == *class_filter) preds.push_back(p);
    }
    for (const auto& g : scene.gt->objects) {
      if (!class_filter || g.cls == *class_filter) gts.push_back(g);
    }
    n_gt += gts.size();
    const auto match = match_detections(preds, gts, iou_thr);
    for (std::size_t pi = 0; pi < preds.size(); ++pi) {
      ranked.push_back({preds[pi].score, match[pi] >= 0});
      if (match[pi] >= 0) ++n_matched;
    }
  }
  DetectionMetrics out;
  if (n_gt == 0) return out;  // AR undefined, reported as absent
  out.ar = 100.0 * static_cast<double>(n_matched) / static_cast<double>(n_gt);
  out.ap = metricdetail::interpolated_ap(std::move(ranked), n_gt);
  return out;
}

// ---------------------------------------------------------------------------
// Triplet metrics

/// True iff the predicate matches and both endpoints localize the ground
/// truth: same class and IoU >= iou_thr.
inline bool triplet_match(const RelationTriplet& pred, const RelationTriplet& gt,
                          const std::vector<SceneObject>& pred_objs, const SceneGraph& gt_graph,
                          double iou_thr) {
  if (pred.predicate != gt.predicate) return false;
  auto find_pred = [&pred_objs](int id) -> const SceneObject* {
    for (const auto& o : pred_objs) {
      if (o.id == id) return &o;
    }
    return nullptr;
  };
  const SceneObject* ps = find_pred(pred.subject_id);
  const SceneObject* po = find_pred(pred.object_id);
  const SceneObject* gs = gt_graph.find_object(gt.subject_id);
  const SceneObject* go = gt_graph.find_object(gt.object_id);
  if (ps == nullptr || po == nullptr || gs == nullptr || go == nullptr) {
    throw Error(Errc::DanglingId, "triplet references a missing object");
  }
  if (ps->cls != gs->cls || po->cls != go->cls) return false;
  return iou3d(ps->box, gs->box) >= iou_thr && iou3d(po->box, go->box) >= iou_thr;
}

namespace metricdetail {

/// Duplicate (subject, predicate, object) predictions collapse to their
/// maximum score; result is ranked by (score desc, subject, predicate,
/// object) and truncated to the top k.
inline std::vector<RelationTriplet> top_k_triplets(const std::vector<RelationTriplet>& preds,
                                                   int k) {
  std::map<std::tuple<int, int, int>, double> best;
  for (const auto& t : preds) {
    auto key = std::make_tuple(t.subject_id, static_cast<int>(t.predicate), t.object_id);
    auto it = best.find(key);
    if (it == best.end() || t.score > it->second) best[key] = t.score;
  }
  std::vector<RelationTriplet> out;
  out.reserve(best.size());
  for (const auto& [key, score] : best) {
    out.push_back(RelationTriplet{std::get<0>(key), std::get<2>(key),
                                  static_cast<PredicateClass>(std::get<1>(key)), score});
  }
  std::sort(out.begin(), out.end(), [](const RelationTriplet& a, const RelationTriplet& b) {
    if (a.score != b.score) return a.score > b.score;
    return std::tie(a.subject_id, a.predicate, a.object_id) <
           std::tie(b.subject_id, b.predicate, b.object_id);
  });
  if (static_cast<int>(out.size()) > k) out.resize(static_cast<std::size_t>(k));
  return out;
}

struct TripletTallies {
  // per predicate class (excluding NoRelation): matched and total gt counts
  std::array<std::size_t, kNumRealPredicates> matched{};
  std::array<std::size_t, kNumRealPredicates> total{};
};

/// Greedy at-most-once matching of the ranked top-k predictions against the
/// scene's gt triplets.
inline TripletTallies tally_scene(const EvalScene& scene, const EvalConfig& cfg) {
  TripletTallies t;
  for (const auto& gt : scene.gt->relations) {
    t.total[static_cast<std::size_t>(gt.predicate)] += 1;
  }
  const auto ranked = top_k_triplets(scene.pred_triplets, cfg.k);
  std::vector<bool> taken(scene.gt->relations.size(), false);
  for (const auto& pred : ranked) {
    for (std::size_t gi = 0; gi < scene.gt->relations.size(); ++gi) {
      if (taken[gi]) continue;
      if (triplet_match(pred, scene.gt->relations[gi], scene.pred_objects, *scene.gt,
                        cfg.iou_threshold)) {
        taken[gi] = true;
        t.matched[static_cast<std::size_t>(scene.gt->relations[gi].predicate)] += 1;
        break;
      }
    }
  }
  return t;
}

}  // namespace metricdetail

struct RecallResult {
  std::optional<double> r_at_k;
  std::optional<double> mr_at_k;
};

/// Pooled Recall@K and class-mean Recall@K in percent. Classes without any
/// ground truth are excluded from the mean rather than counted as 0.
inline RecallResult recall_at_k(const std::vector<EvalScene>& scenes, const EvalConfig& cfg) {
  std::array<std::size_t, kNumRealPredicates> matched{}, total{};
  for (const auto& scene : scenes) {
    const auto t = metricdetail::tally_scene(scene, cfg);
    for (int c = 0; c < kNumRealPredicates; ++c) {
      matched[static_cast<std::size_t>(c)] += t.matched[static_cast<std::size_t>(c)];
      total[static_cast<std::size_t>(c)] += t.total[static_cast<std::size_t>(c)];
    }
  }
  std::size_t m = 0, n = 0;
  double class_sum = 0.0;
  int class_count = 0;
  for (int c = 0; c < kNumRealPredicates; ++c) {
    m += matched[static_cast<std::size_t>(c)];
    n += total[static_cast<std::size_t>(c)];
    if (total[static_cast<std::size_t>(c)] > 0) {
      class_sum += 100.0 * static_cast<double>(matched[static_cast<std::size_t>(c)]) /
                   static_cast<double>(total[static_cast<std::size_t>(c)]);
      ++class_count;
    }
  }
  RecallResult out;
  if (n > 0) out.r_at_k = 100.0 * static_cast<double>(m) / static_cast<double>(n);
  if (class_count > 0) out.mr_at_k = class_sum / class_count;
  return out;
}

/// Class-mean AP over the per-scene top-K predictions, pooled per predicate
/// class and ranked by score; 101-point interpolation. Classes without
/// ground truth are excluded from the mean.
inline std::optional<double> map_at_k(const std::vector<EvalScene>& scenes, const EvalConfig& cfg) {
  double ap_sum = 0.0;
  int n_classes = 0;
  for (int c = 0; c < kNumRealPredicates; ++c) {
    const auto predicate = static_cast<PredicateClass>(c);
    std::size_t n_gt = 0;
    std::vector<std::pair<double, bool>> ranked;
    // Rank predictions of this class across the pool; greedy per pooled
    // rank order, each gt matchable once.
    struct Candidate {
      double score;
      std::size_t scene;
      RelationTriplet triplet;
    };
    std::vector<Candidate> candidates;
    for (std::size_t si = 0; si < scenes.size(); ++si) {
      for (const auto& gt : scenes[si].gt->relations) {
        if (gt.predicate == predicate) ++n_gt;
      }
      for (const auto& pred : metricdetail::top_k_triplets(scenes[si].pred_triplets, cfg.k)) {
        if (pred.predicate == predicate) candidates.push_back({pred.score, si, pred});
      }
    }
    if (n_gt == 0) continue;
    std::stable_sort(candidates.begin(), candidates.end(),
                     [](const Candidate& a, const Candidate& b) { return a.score > b.score; });
    std::vector<std::vector<bool>> taken(scenes.size());
    for (std::size_t si = 0; si < scenes.size(); ++si) {
      taken[si].assign(scenes[si].gt->relations.size(), false);
    }
    for (const auto& cand : candidates) {
      const auto& scene = scenes[cand.scene];
      bool is_tp = false;
      for (std::size_t gi = 0; gi < scene.gt->relations.size(); ++gi) {
        if (taken[cand.scene][gi]) continue;
        if (scene.gt->relations[gi].predicate != predicate) continue;
        if (triplet_match(cand.triplet, scene.gt->relations[gi], scene.pred_objects, *scene.gt,
                          cfg.iou_threshold)) {
          taken[cand.scene][gi] = true;
          is_tp = true;
          break;
        }
      }
      ranked.push_back({cand.score, is_tp});
    }
    ap_sum += metricdetail::interpolated_ap(std::move(ranked), n_gt);
    ++n_classes;
  }
  if (n_classes == 0) return std::nullopt;
  return ap_sum / n_classes;
}

/// Best achievable R@K/mR@K given the detected objects: a gt triplet is
/// recoverable iff both endpoints have a detected box of the right class at
/// IoU >= threshold.
inline RecallResult relation_upper_bounds(const std::vector<EvalScene>& scenes,
                                          const EvalConfig& cfg) {
  std::array<std::size_t, kNumRealPredicates> recoverable{}, total{};
  for (const auto& scene : scenes) {
    for (const auto& gt : scene.gt->relations) {
      total[static_cast<std::size_t>(gt.predicate)] += 1;
      const SceneObject* gs = scene.gt->find_object(gt.subject_id);
      const SceneObject* go = scene.gt->find_object(gt.object_id);
      if (gs == nullptr || go == nullptr) throw Error(Errc::DanglingId, "gt triplet endpoint");
      auto covered = [&](const SceneObject& g) {
        for (const auto& p : scene.pred_objects) {
          if (p.cls == g.cls && iou3d(p.box, g.box) >= cfg.iou_threshold) return true;
        }
        return false;
      };
      if (covered(*gs) && covered(*go)) {
        recoverable[static_cast<std::size_t>(gt.predicate)] += 1;
      }
    }
  }
  std::size_t m = 0, n = 0;
  double class_sum = 0.0;
  int class_count = 0;
  for (int c = 0; c < kNumRealPredicates; ++c) {
    m += recoverable[static_cast<std::size_t>(c)];
    n += total[static_cast<std::size_t>(c)];
    if (total[static_cast<std::size_t>(c)] > 0) {
      class_sum += 100.0 * static_cast<double>(recoverable[static_cast<std::size_t>(c)]) /
                   static_cast<double>(total[static_cast<std::size_t>(c)]);
      ++class_count;
    }
  }
  RecallResult out;
  if (n > 0) out.r_at_k = 100.0 * static_cast<double>(m) / static_cast<double>(n);
  if (class_count > 0) out.mr_at_k = class_sum / class_count;
  return out;
}

/// Detection recall partitioned by ground-truth bleeding subtype. Subtypes
/// without ground truth are reported absent, not 0.
inline std::array<std::optional<double>, kNumBleedingSubtypes> per_subtype_recall(
    const std::vector<EvalScene>& scenes, double iou_thr) {
  std::array<std::size_t, kNumBleedingSubtypes> matched{}, total{};
  for (const auto& scene : scenes) {
    std::vector<SceneObject> preds, gts;
    for (const auto& p : scene.pred_objects) {
      if (p.cls == ObjectClass::Bleeding) preds.push_back(p);
    }
    for (const auto& g : scene.gt->objects) {
      if (g.cls == ObjectClass::Bleeding) gts.push_back(g);
    }
    const auto match = match_detections(preds, gts, iou_thr);
    std::vector<bool> gt_matched(gts.size(), false);
    for (std::size_t pi = 0; pi < preds.size(); ++pi) {
      if (match[pi] >= 0) gt_matched[static_cast<std::size_t>(match[pi])] = true;
    }
    for (std::size_t gi = 0; gi < gts.size(); ++gi) {
      if (!gts[gi].subtype) continue;
      const auto st = static_cast<std::size_t>(*gts[gi].subtype - 1);
      total[st] += 1;
      if (gt_matched[gi]) matched[st] += 1;
    }
  }
  std::array<std::optional<double>, kNumBleedingSubtypes> out{};
  for (std::size_t st = 0; st < kNumBleedingSubtypes; ++st) {
    if (total[st] > 0) {
      out[st] = 100.0 * static_cast<double>(matched[st]) / static_cast<double>(total[st]);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Whole-task evaluation

/// Run one evaluation task over (volume, ground truth) scenes with a
/// trained store. PredicateClassification predicts over ground-truth
/// objects; SceneGraphGeneration runs detection first and also reports
/// detection metrics and relation upper bounds.
inline EvalReport evaluate(const ParamStore& params, const std::vector<const Scene*>& scenes,
                           const EvalConfig& cfg, bool bias_enabled, int k_detections = 8) {
  if (scenes.empty()) throw Error(Errc::EmptyInput, "no scenes to evaluate");
  std::vector<EvalScene> eval_scenes;
  eval_scenes.reserve(scenes.size());
  for (const Scene* scene : scenes) {
    EvalScene es;
    es.gt = &scene->graph;
    if (cfg.task == EvalTask::PredicateClassification) {
      es.pred_objects = scene->graph.objects;
    } else {
      es.pred_objects = detect_objects(scene->volume, params, k_detections);
    }
    for (const auto& [subj, obj] : select_pairs(es.pred_objects)) {
      const auto logits = relation_forward(params, scene->volume, *subj, *obj, bias_enabled);
      for (int c = 0; c < kNumRealPredicates; ++c) {
        es.pred_triplets.push_back(RelationTriplet{
            subj->id, obj->id, static_cast<PredicateClass>(c),
            modeldetail::sigmoid(logits[static_cast<std::size_t>(c)])});
      }
    }
    eval_scenes.push_back(std::move(es));
  }

  EvalReport report;
  report.task = cfg.task == EvalTask::PredicateClassification ? "predcls" : "sgg";
  report.n_scenes = static_cast<int>(eval_scenes.size());

  const auto recall = recall_at_k(eval_scenes, cfg);
  report.r_at_k = recall.r_at_k;
  report.mr_at_k = recall.mr_at_k;
  report.map_at_k = map_at_k(eval_scenes, cfg);

  if (cfg.task == EvalTask::SceneGraphGeneration) {
    const auto vent = detection_ar_ap(eval_scenes, ObjectClass::VentricleSystem, cfg.iou_threshold);
    const auto mid = detection_ar_ap(eval_scenes, ObjectClass::Midline, cfg.iou_threshold);
    const auto bleed = detection_ar_ap(eval_scenes, ObjectClass::Bleeding, cfg.iou_threshold);
    report.ar_ventricle = vent.ar;
    report.ar_midline = mid.ar;
    report.ar_bleeding = bleed.ar;
    report.ap_bleeding = bleed.ap;
    const auto ub = relation_upper_bounds(eval_scenes, cfg);
    report.ub_r_at_k = ub.r_at_k;
    report.ub_mr_at_k = ub.mr_at_k;
    report.subtype_recall = per_subtype_recall(eval_scenes, cfg.iou_threshold);
    if (report.r_at_k && report.ub_r_at_k && *report.r_at_k > *report.ub_r_at_k + 1e-9) {
      throw Error(Errc::AssertionFailure, "R@K exceeded its detection upper bound");
    }
  }
  return report;
}

}  // namespace fedgraph
