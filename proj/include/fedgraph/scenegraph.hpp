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
#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <tuple>
#include <vector>

namespace fedgraph {

/// Volume shape in voxels, (nz, ny, nx).
struct Extent {
  std::int64_t nz = 0, ny = 0, nx = 0;

  std::int64_t voxels() const { return nz * ny * nx; }
  bool operator==(const Extent&) const = default;
};

/// Axis-aligned box on the integer voxel grid, half-open [lo, hi) per axis.
struct Box3D {
  std::int64_t z0 = 0, y0 = 0, x0 = 0;
  std::int64_t z1 = 0, y1 = 0, x1 = 0;

  bool valid() const { return z0 < z1 && y0 < y1 && x0 < x1; }
  std::int64_t volume() const { return (z1 - z0) * (y1 - y0) * (x1 - x0); }
  bool inside(const Extent& e) const {
    return z0 >= 0 && y0 >= 0 && x0 >= 0 && z1 <= e.nz && y1 <= e.ny && x1 <= e.nx;
  }
  bool contains(std::int64_t z, std::int64_t y, std::int64_t x) const {
    return z >= z0 && z < z1 && y >= y0 && y < y1 && x >= x0 && x < x1;
  }
  double center_z() const { return 0.5 * static_cast<double>(z0 + z1); }
  double center_y() const { return 0.5 * static_cast<double>(y0 + y1); }
  double center_x() const { return 0.5 * static_cast<double>(x0 + x1); }
  Box3D dilated(std::int64_t d) const {
    return Box3D{z0 - d, y0 - d, x0 - d, z1 + d, y1 + d, x1 + d};
  }
  bool operator==(const Box3D&) const = default;
};

inline std::int64_t intersection_volume(const Box3D& a, const Box3D& b) {
  const std::int64_t dz = std::min(a.z1, b.z1) - std::max(a.z0, b.z0);
  const std::int64_t dy = std::min(a.y1, b.y1) - std::max(a.y0, b.y0);
  const std::int64_t dx = std::min(a.x1, b.x1) - std::max(a.x0, b.x0);
  if (dz <= 0 || dy <= 0 || dx <= 0) return 0;
  return dz * dy * dx;
}

/// Intersection over union in voxel counts; exact, since boxes live on the
/// integer grid. 0 for disjoint boxes.
inline double iou3d(const Box3D& a, const Box3D& b) {
  const std::int64_t inter = intersection_volume(a, b);
  if (inter == 0) return 0.0;
  const std::int64_t uni = a.volume() + b.volume() - inter;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

enum class ObjectClass : std::uint8_t { Bleeding = 0, VentricleSystem = 1, Midline = 2 };

enum class PredicateClass : std::uint8_t {
  MidlineShift = 0,
  BloodFlowToVentricle = 1,
  VentricleAsymmetry = 2,
  NoRelation = 3,  // background; never stored in ground-truth triplets
};

constexpr int kNumObjectClasses = 3;
constexpr int kNumPredicates = 4;      // including NoRelation
constexpr int kNumRealPredicates = 3;  // excluding NoRelation
constexpr int kNumBleedingSubtypes = 5;

inline const char* object_class_name(ObjectClass c) {
  switch (c) {
    case ObjectClass::Bleeding: return "bleeding";
    case ObjectClass::VentricleSystem: return "ventricle_system";
    case ObjectClass::Midline: return "midline";
  }
  return "?";
}

inline const char* predicate_name(PredicateClass p) {
  switch (p) {
    case PredicateClass::MidlineShift: return "midline_shift";
    case PredicateClass::BloodFlowToVentricle: return "blood_flow_to_ventricle";
    case PredicateClass::VentricleAsymmetry: return "ventricle_asymmetry";
    case PredicateClass::NoRelation: return "no_relation";
  }
  return "?";
}

struct SceneObject {
  int id = 0;
  ObjectClass cls = ObjectClass::Bleeding;
  std::optional<int> subtype;  // 1..5, present iff cls == Bleeding
  Box3D box;
  double score = 1.0;  // 1.0 for ground truth
  std::optional<int> mask_label;
};

struct RelationTriplet {
  int subject_id = 0;
  int object_id = 0;
  PredicateClass predicate = PredicateClass::NoRelation;
  double score = 1.0;
};

struct SceneGraph {
  std::vector<SceneObject> objects;
  std::vector<RelationTriplet> relations;

  const SceneObject* find_object(int id) const {
    for (const auto& o : objects) {
      if (o.id == id) return &o;
    }
    return nullptr;
  }
};

/// Predicates the schema admits for an ordered (subject, object) class pair.
/// Only bleeding-induced relations exist; everything else is empty.
inline std::set<PredicateClass> allowed_predicates(ObjectClass subject, ObjectClass object) {
  if (subject != ObjectClass::Bleeding) return {};
  switch (object) {
    case ObjectClass::Midline:
      return {PredicateClass::MidlineShift};
    case ObjectClass::VentricleSystem:
      return {PredicateClass::BloodFlowToVentricle, PredicateClass::VentricleAsymmetry};
    default:
      return {};
  }
}

/// One schema violation: the broken rule plus the ids involved.
struct Violation {
  std::string rule;
  std::vector<int> ids;
};

/// Check a scene against the schema. Violations are data, not errors; an
/// empty result means the scene is well-formed. Ground-truth scenes are
/// additionally held to the singleton and uniqueness rules.
inline std::vector<Violation> validate_scene(const SceneGraph& g, const Extent& extent,
                                             bool ground_truth) {
  std::vector<Violation> out;
  std::set<int> ids;
  int n_ventricle = 0, n_midline = 0;
  for (const auto& o : g.objects) {
    if (!ids.insert(o.id).second) out.push_back({"duplicate object id", {o.id}});
    if (!o.box.valid()) out.push_back({"degenerate box", {o.id}});
    if (o.box.valid() && !o.box.inside(extent)) out.push_back({"box outside extent", {o.id}});
    if (!(o.score >= 0.0 && o.score <= 1.0)) out.push_back({"score out of range", {o.id}});
    if (ground_truth && o.score != 1.0) out.push_back({"ground-truth score must be 1", {o.id}});
    if (o.cls == ObjectClass::Bleeding) {
      if (!o.subtype || *o.subtype < 1 || *o.subtype > kNumBleedingSubtypes) {
        out.push_back({"bleeding requires subtype in 1..5", {o.id}});
      }
    } else if (o.subtype) {
      out.push_back({"subtype on non-bleeding object", {o.id}});
    }
    if (o.cls == ObjectClass::VentricleSystem) ++n_ventricle;
    if (o.cls == ObjectClass::Midline) ++n_midline;
  }
  if (ground_truth) {
    if (n_ventricle != 1) out.push_back({"singleton violated: ventricle system", {}});
    if (n_midline != 1) out.push_back({"singleton violated: midline", {}});
  }

  std::set<std::tuple<int, int, int>> seen_triplets;
  for (const auto& r : g.relations) {
    const SceneObject* s = g.find_object(r.subject_id);
    const SceneObject* o = g.find_object(r.object_id);
    if (s == nullptr || o == nullptr) {
      out.push_back({"relation endpoint does not exist", {r.subject_id, r.object_id}});
      continue;
    }
    if (r.subject_id == r.object_id) {
      out.push_back({"relation endpoints must differ", {r.subject_id}});
    }
    if (s->cls != ObjectClass::Bleeding) {
      out.push_back({"subject must be bleeding", {r.subject_id}});
    } else if (!allowed_predicates(s->cls, o->cls).count(r.predicate)) {
      out.push_back({"predicate not allowed for class pair", {r.subject_id, r.object_id}});
    }
    if (!(r.score >= 0.0 && r.score <= 1.0)) {
      out.push_back({"relation score out of range", {r.subject_id, r.object_id}});
    }
    if (ground_truth) {
      if (r.predicate == PredicateClass::NoRelation) {
        out.push_back({"background predicate stored in ground truth", {r.subject_id, r.object_id}});
      }
      if (!seen_triplets.insert({r.subject_id, static_cast<int>(r.predicate), r.object_id}).second) {
        out.push_back({"duplicate triplet", {r.subject_id, r.object_id}});
      }
    }
  }
  return out;
}

}  // namespace fedgraph
