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

#include <array>
#include <cmath>
#include <cstdint>
#include <deque>
#include <string>
#include <vector>

#include <json.hpp>

#include "fedgraph/errors.hpp"
#include "fedgraph/rng.hpp"
#include "fedgraph/scenegraph.hpp"

namespace fedgraph {

constexpr std::uint8_t kLabelBackground = 0;
constexpr std::uint8_t kLabelBleeding = 1;
constexpr std::uint8_t kLabelVentricle = 2;
constexpr std::uint8_t kLabelMidline = 3;

/// One synthetic head volume: intensity grid plus label map, z-major.
struct Volume {
  Extent extent;
  std::vector<float> intensities;
  std::vector<std::uint8_t> labels;

  std::size_t index(std::int64_t z, std::int64_t y, std::int64_t x) const {
    return static_cast<std::size_t>((z * extent.ny + y) * extent.nx + x);
  }
  float intensity(std::int64_t z, std::int64_t y, std::int64_t x) const {
    return intensities[index(z, y, x)];
  }
  std::uint8_t label(std::int64_t z, std::int64_t y, std::int64_t x) const {
    return labels[index(z, y, x)];
  }
};

struct SizeRange {
  double min_vol = 0;
  double max_vol = 0;
};

struct IntensityParams {
  double background_mean = 0.15;
  double bleeding_mean = 0.85;
  double ventricle_mean = 0.05;
  double midline_mean = 0.40;
  double noise_sigma = 0.05;
};

/// Thresholds of the three geometric relation rules.
struct RelationThresholds {
  double flow_overlap_frac = 0.45;
  double shift_displacement_vox = 2.0;
  double asym_volume_frac = 0.22;
};

/// Generative parameters of one client's data distribution.
struct CohortSpec {
  std::string client_id;
  Extent volume_extent{16, 64, 64};
  std::array<double, 7> bleed_count_dist{};              // over 0..6 bleedings
  std::array<double, kNumBleedingSubtypes> subtype_mix{};  // over subtypes 1..5
  std::array<SizeRange, kNumBleedingSubtypes> size_range{};
  IntensityParams intensity;
  RelationThresholds thresholds;
  std::uint64_t seed_base = 0;

  void validate() const {
    auto check_sum = [](const double* p, std::size_t n, const char* what) {
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (p[i] < 0.0) throw Error(Errc::InvalidConfig, std::string(what) + " has negative entry");
        s += p[i];
      }
      if (std::abs(s - 1.0) > 1e-9) {
        throw Error(Errc::InvalidConfig, std::string(what) + " must sum to 1");
      }
    };
    check_sum(bleed_count_dist.data(), bleed_count_dist.size(), "bleed_count_dist");
    check_sum(subtype_mix.data(), subtype_mix.size(), "subtype_mix");
    if (!(thresholds.flow_overlap_frac > 0.0 && thresholds.shift_displacement_vox > 0.0 &&
          thresholds.asym_volume_frac > 0.0)) {
      throw Error(Errc::InvalidConfig, "relation thresholds must be positive");
    }
    for (const auto& r : size_range) {
      if (!(r.min_vol > 0.0 && r.max_vol >= r.min_vol)) {
        throw Error(Errc::InvalidConfig, "size ranges must be positive and ordered");
      }
    }
    if (volume_extent.nz < 12 || volume_extent.ny < 48 || volume_extent.nx < 48) {
      throw Error(Errc::InvalidConfig, "volume extent too small for scene layout");
    }
  }
};

struct Scene {
  Volume volume;
  SceneGraph graph;
};

enum class Split : std::uint8_t { Train = 0, Val = 1, Test = 2 };

/// One client's local data: all scenes, plus the relation subset and a
/// deterministic train/val/test partition.
struct Dataset {
  std::vector<Scene> scenes;
  std::vector<std::size_t> obj_indices;  // every scene
  std::vector<std::size_t> rel_indices;  // scenes with at least one relation
  std::vector<Split> split;              // per scene

  std::vector<std::size_t> indices_of(Split s, bool relations_only) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < scenes.size(); ++i) {
      if (split[i] != s) continue;
      if (relations_only && scenes[i].graph.relations.empty()) continue;
      out.push_back(i);
    }
    return out;
  }
};

namespace synthdetail {

// Scene layout around the mid-sagittal plane. The central corridor is
// reserved for the midline slab (including its maximal lateral excursion);
// bleedings never enter it, so the slab never collides with a bleeding.
constexpr std::int64_t kCorridorHalfWidth = 6;
constexpr std::int64_t kMaxShift = 4;
constexpr double kShiftTriggerVolume = 650.0;
constexpr double kAsymTriggerVolume = 500.0;
constexpr std::int64_t kAsymAdjacency = 2;  // box dilation for attribution

struct VoxelSet {
  std::vector<std::uint32_t> flat;  // flat volume indices
  Box3D bbox;
};

inline double gaussian_at(std::uint64_t key, std::uint64_t i) {
  double u1 = static_cast<double>(counter_hash(key, 2 * i) >> 11) * 0x1.0p-53;
  double u2 = static_cast<double>(counter_hash(key, 2 * i + 1) >> 11) * 0x1.0p-53;
  if (u1 < 0x1.0p-60) u1 = 0x1.0p-60;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
}

/// Voxels of an axis-aligned ellipsoid, clipped to the extent.
inline VoxelSet ellipsoid_voxels(const Extent& e, double cz, double cy, double cx, double rz,
                                 double ry, double rx) {
  VoxelSet out;
  out.bbox = Box3D{e.nz, e.ny, e.nx, 0, 0, 0};
  const std::int64_t z_lo = std::max<std::int64_t>(0, static_cast<std::int64_t>(std::floor(cz - rz)));
  const std::int64_t z_hi = std::min<std::int64_t>(e.nz - 1, static_cast<std::int64_t>(std::ceil(cz + rz)));
  const std::int64_t y_lo = std::max<std::int64_t>(0, static_cast<std::int64_t>(std::floor(cy - ry)));
  const std::int64_t y_hi = std::min<std::int64_t>(e.ny - 1, static_cast<std::int64_t>(std::ceil(cy + ry)));
  const std::int64_t x_lo = std::max<std::int64_t>(0, static_cast<std::int64_t>(std::floor(cx - rx)));
  const std::int64_t x_hi = std::min<std::int64_t>(e.nx - 1, static_cast<std::int64_t>(std::ceil(cx + rx)));
  for (std::int64_t z = z_lo; z <= z_hi; ++z) {
    const double fz = (static_cast<double>(z) - cz) / rz;
    for (std::int64_t y = y_lo; y <= y_hi; ++y) {
      const double fy = (static_cast<double>(y) - cy) / ry;
      for (std::int64_t x = x_lo; x <= x_hi; ++x) {
        const double fx = (static_cast<double>(x) - cx) / rx;
        if (fz * fz + fy * fy + fx * fx <= 1.0) {
          out.flat.push_back(static_cast<std::uint32_t>((z * e.ny + y) * e.nx + x));
          out.bbox.z0 = std::min(out.bbox.z0, z);
          out.bbox.y0 = std::min(out.bbox.y0, y);
          out.bbox.x0 = std::min(out.bbox.x0, x);
          out.bbox.z1 = std::max(out.bbox.z1, z + 1);
          out.bbox.y1 = std::max(out.bbox.y1, y + 1);
          out.bbox.x1 = std::max(out.bbox.x1, x + 1);
        }
      }
    }
  }
  return out;
}

inline Box3D label_bbox(const Volume& v, std::uint8_t label) {
  Box3D b{v.extent.nz, v.extent.ny, v.extent.nx, 0, 0, 0};
  bool any = false;
  std::size_t i = 0;
  for (std::int64_t z = 0; z < v.extent.nz; ++z) {
    for (std::int64_t y = 0; y < v.extent.ny; ++y) {
      for (std::int64_t x = 0; x < v.extent.nx; ++x, ++i) {
        if (v.labels[i] != label) continue;
        any = true;
        b.z0 = std::min(b.z0, z);
        b.y0 = std::min(b.y0, y);
        b.x0 = std::min(b.x0, x);
        b.z1 = std::max(b.z1, z + 1);
        b.y1 = std::max(b.y1, y + 1);
        b.x1 = std::max(b.x1, x + 1);
      }
    }
  }
  return any ? b : Box3D{};
}

/// 6-connected component count for one label value.
inline int count_components(const Volume& v, std::uint8_t label) {
  const auto& e = v.extent;
  std::vector<std::uint8_t> seen(v.labels.size(), 0);
  int components = 0;
  std::deque<std::size_t> queue;
  for (std::size_t start = 0; start < v.labels.size(); ++start) {
    if (v.labels[start] != label || seen[start]) continue;
    ++components;
    seen[start] = 1;
    queue.push_back(start);
    while (!queue.empty()) {
      const std::size_t i = queue.front();
      queue.pop_front();
      const std::int64_t x = static_cast<std::int64_t>(i) % e.nx;
      const std::int64_t y = (static_cast<std::int64_t>(i) / e.nx) % e.ny;
      const std::int64_t z = static_cast<std::int64_t>(i) / (e.nx * e.ny);
      const std::int64_t dz[6] = {-1, 1, 0, 0, 0, 0};
      const std::int64_t dy[6] = {0, 0, -1, 1, 0, 0};
      const std::int64_t dx[6] = {0, 0, 0, 0, -1, 1};
      for (int d = 0; d < 6; ++d) {
        const std::int64_t nz2 = z + dz[d], ny2 = y + dy[d], nx2 = x + dx[d];
        if (nz2 < 0 || nz2 >= e.nz || ny2 < 0 || ny2 >= e.ny || nx2 < 0 || nx2 >= e.nx) continue;
        const std::size_t j = v.index(nz2, ny2, nx2);
        if (v.labels[j] != label || seen[j]) continue;
        seen[j] = 1;
        queue.push_back(j);
      }
    }
  }
  return components;
}

}  // namespace synthdetail

/// Apply the three geometric relation rules to a painted label map and its
/// object boxes, returning the implied ground-truth triplets.
///
/// Rules (all measured on the emitted label map):
///  - blood flow: fraction of a bleeding's voxels lying inside the union of
///    the two ventricle half bounding boxes (label-2 voxels split at the
///    mid-sagittal plane) >= flow_overlap_frac
///  - midline shift: max over the bleeding's z-range of |per-slice midline
///    x-centroid - (nx-1)/2| >= shift_displacement_vox
///  - ventricle asymmetry: |volL - volR| / max(volL, volR) >=
///    asym_volume_frac, attributed to every bleeding whose box dilated by 2
///    voxels touches the smaller half's bounding box
inline std::vector<RelationTriplet> derive_relations(const Volume& vol,
                                                     const std::vector<SceneObject>& objects,
                                                     const RelationThresholds& thr) {
  const auto& e = vol.extent;
  const SceneObject* ventricle = nullptr;
  const SceneObject* midline = nullptr;
  for (const auto& o : objects) {
    if (o.cls == ObjectClass::VentricleSystem) ventricle = &o;
    if (o.cls == ObjectClass::Midline) midline = &o;
  }

  // Ventricle halves split at the mid-sagittal plane.
  std::int64_t vol_left = 0, vol_right = 0;
  Box3D box_left{e.nz, e.ny, e.nx, 0, 0, 0}, box_right{e.nz, e.ny, e.nx, 0, 0, 0};
  const std::int64_t half_x = e.nx / 2;
  // Per-slice midline displacement.
  std::vector<double> disp(static_cast<std::size_t>(e.nz), 0.0);
  std::vector<std::int64_t> mid_sum(static_cast<std::size_t>(e.nz), 0);
  std::vector<std::int64_t> mid_cnt(static_cast<std::size_t>(e.nz), 0);

  std::size_t i = 0;
  for (std::int64_t z = 0; z < e.nz; ++z) {
    for (std::int64_t y = 0; y < e.ny; ++y) {
      for (std::int64_t x = 0; x < e.nx; ++x, ++i) {
        const std::uint8_t lab = vol.labels[i];
        if (lab == kLabelVentricle) {
          auto& box = (x < half_x) ? box_left : box_right;
          auto& count = (x < half_x) ? vol_left : vol_right;
          ++count;
          box.z0 = std::min(box.z0, z);
          box.y0 = std::min(box.y0, y);
          box.x0 = std::min(box.x0, x);
          box.z1 = std::max(box.z1, z + 1);
          box.y1 = std::max(box.y1, y + 1);
          box.x1 = std::max(box.x1, x + 1);
        } else if (lab == kLabelMidline) {
          mid_sum[static_cast<std::size_t>(z)] += x;
          mid_cnt[static_cast<std::size_t>(z)] += 1;
        }
      }
    }
  }
  const double base_x = 0.5 * static_cast<double>(e.nx - 1);
  for (std::int64_t z = 0; z < e.nz; ++z) {
    const auto zi = static_cast<std::size_t>(z);
    if (mid_cnt[zi] > 0) {
      disp[zi] = std::abs(static_cast<double>(mid_sum[zi]) / static_cast<double>(mid_cnt[zi]) -
                          base_x);
    }
  }

  const bool asym = vol_left > 0 && vol_right > 0 &&
                    static_cast<double>(std::abs(vol_left - vol_right)) /
                            static_cast<double>(std::max(vol_left, vol_right)) >=
                        thr.asym_volume_frac;
  const Box3D& smaller_half = (vol_left <= vol_right) ? box_left : box_right;

  std::vector<RelationTriplet> out;
  for (const auto& o : objects) {
    if (o.cls != ObjectClass::Bleeding) continue;

    if (ventricle != nullptr && vol_left + vol_right > 0) {
      std::int64_t total = 0, inside = 0;
      for (std::int64_t z = o.box.z0; z < o.box.z1; ++z) {
        for (std::int64_t y = o.box.y0; y < o.box.y1; ++y) {
          for (std::int64_t x = o.box.x0; x < o.box.x1; ++x) {
            if (vol.label(z, y, x) != kLabelBleeding) continue;
            ++total;
            if ((vol_left > 0 && box_left.contains(z, y, x)) ||
                (vol_right > 0 && box_right.contains(z, y, x))) {
              ++inside;
            }
          }
        }
      }
      if (total > 0 &&
          static_cast<double>(inside) / static_cast<double>(total) >= thr.flow_overlap_frac) {
        out.push_back({o.id, ventricle->id, PredicateClass::BloodFlowToVentricle, 1.0});
      }
      if (asym && intersection_volume(o.box.dilated(synthdetail::kAsymAdjacency), smaller_half) > 0) {
        out.push_back({o.id, ventricle->id, PredicateClass::VentricleAsymmetry, 1.0});
      }
    }

    if (midline != nullptr) {
      double max_disp = 0.0;
      for (std::int64_t z = o.box.z0; z < o.box.z1; ++z) {
        max_disp = std::max(max_disp, disp[static_cast<std::size_t>(z)]);
      }
      if (max_disp >= thr.shift_displacement_vox) {
        out.push_back({o.id, midline->id, PredicateClass::MidlineShift, 1.0});
      }
    }
  }
  std::sort(out.begin(), out.end(), [](const RelationTriplet& a, const RelationTriplet& b) {
    return std::tie(a.subject_id, a.predicate, a.object_id) <
           std::tie(b.subject_id, b.predicate, b.object_id);
  });
  return out;
}

namespace synthdetail {

struct PlannedBleed {
  int subtype = 0;
  VoxelSet voxels;
  double volume_target = 0.0;
};

/// One generation attempt; throws PlacementFailure if a constraint cannot be
/// met so the caller can retry with a different sub-key.
inline Scene build_scene(const CohortSpec& spec, std::uint64_t attempt_key) {
  const Extent e = spec.volume_extent;
  const std::int64_t cx_lo = e.nx / 2 - kCorridorHalfWidth;
  const std::int64_t cx_hi = e.nx / 2 + kCorridorHalfWidth;

  RngStream draw(fold(attempt_key, "draw"));

  // --- bleed count and subtypes ---
  const int n_bleeds =
      static_cast<int>(draw.next_categorical(spec.bleed_count_dist.data(), spec.bleed_count_dist.size()));
  std::vector<int> subtypes(static_cast<std::size_t>(n_bleeds));
  for (auto& st : subtypes) {
    st = 1 + static_cast<int>(draw.next_categorical(spec.subtype_mix.data(), spec.subtype_mix.size()));
  }

  // --- nominal ventricle lobes ---
  const std::int64_t jz = draw.next_in(-1, 1);
  const std::int64_t jy = draw.next_in(-2, 2);
  std::int64_t lobe_z0 = std::max<std::int64_t>(1, e.nz / 4 + jz);
  std::int64_t lobe_z1 = std::min<std::int64_t>(e.nz - 1, lobe_z0 + e.nz / 2);
  std::int64_t lobe_y0 = std::max<std::int64_t>(2, (e.ny * 28) / 100 + jy);
  std::int64_t lobe_y1 = std::min<std::int64_t>(e.ny - 2, lobe_y0 + (e.ny * 44) / 100);
  double width_left = static_cast<double>(draw.next_in(9, 12));
  double width_right = static_cast<double>(draw.next_in(9, 12));

  // --- peripheral bleedings first (they shape the ventricle and midline) ---
  std::vector<PlannedBleed> bleeds(static_cast<std::size_t>(n_bleeds));
  std::vector<Box3D> placed;  // dilated separation boxes
  auto separated = [&placed](const Box3D& b) {
    for (const auto& p : placed) {
      if (intersection_volume(p, b.dilated(1)) > 0) return false;
    }
    return true;
  };

  auto sample_radii = [&](int subtype, double target_vol) {
    const double r = std::cbrt(target_vol * 3.0 / (4.0 * 3.14159265358979323846));
    double rz = r, ry = r, rx = r;
    switch (subtype) {
      case 2:  // epidural/subdural: flat against the lateral boundary
        rx = std::max(2.1, r * 0.5);
        ry = r * 1.7;
        rz = r * 1.15;
        break;
      case 3:  // intraventricular: modest, nearly isotropic
        rx = r * 0.85;
        ry = r * 1.1;
        rz = r * 0.95;
        break;
      case 4:  // basal subarachnoidal: small and flat in z
        rz = r * 0.8;
        ry = r * 1.15;
        break;
      default: {
        const double j = 0.85 + 0.3 * draw.next_double();
        ry = r * j;
        rx = r / j;
        break;
      }
    }
    rz = std::min(rz, static_cast<double>(e.nz) / 2.0 - 2.0);
    rx = std::min(rx, 6.0);
    ry = std::min(ry, static_cast<double>(e.ny) * 0.42);
    return std::array<double, 3>{std::max(1.2, rz), std::max(1.6, ry), std::max(1.4, rx)};
  };

  for (int pass = 0; pass < 2; ++pass) {
    for (int bi = 0; bi < n_bleeds; ++bi) {
      const int st = subtypes[static_cast<std::size_t>(bi)];
      const bool intraventricular = st == 3;
      if ((pass == 0) == intraventricular) continue;  // pass 0: everything else

      const auto& range = spec.size_range[static_cast<std::size_t>(st - 1)];
      bool done = false;
      for (int tries = 0; tries < 60 && !done; ++tries) {
        const double target = range.min_vol + (range.max_vol - range.min_vol) * draw.next_double();
        auto radii = sample_radii(st, target);
        double rz = radii[0], ry = radii[1], rx = radii[2];
        double cz = 0, cy = 0, cx = 0;
        if (intraventricular) {
          // Strictly interior to a lobe so the lobe's painted shell stays
          // connected and its bounding box intact. A compressed lobe can be
          // too narrow to host a bleeding; use the other one then.
          bool left = draw.next_double() < 0.5;
          if ((left ? width_left : width_right) < 8.0) left = !left;
          const double w = left ? width_left : width_right;
          const std::int64_t lx0 = left ? cx_lo - static_cast<std::int64_t>(w) : cx_hi;
          const std::int64_t lx1 = left ? cx_lo : cx_hi + static_cast<std::int64_t>(w);
          rx = std::min(rx, (w - 3.0) / 2.0);
          ry = std::min(ry, static_cast<double>(lobe_y1 - lobe_y0 - 3) / 2.0);
          rz = std::min(rz, static_cast<double>(lobe_z1 - lobe_z0 - 3) / 2.0);
          if (rx < 0.8 || ry < 0.8 || rz < 0.8) continue;
          cz = static_cast<double>(lobe_z0) + 1.0 + rz +
               (static_cast<double>(lobe_z1 - lobe_z0) - 2.0 - 2.0 * rz) * draw.next_double();
          cy = static_cast<double>(lobe_y0) + 1.0 + ry +
               (static_cast<double>(lobe_y1 - lobe_y0) - 2.0 - 2.0 * ry) * draw.next_double();
          cx = static_cast<double>(lx0) + 1.0 + rx +
               (static_cast<double>(lx1 - lx0) - 2.0 - 2.0 * rx) * draw.next_double();
        } else {
          const bool left_side = draw.next_double() < 0.5;
          const double x_inner = left_side ? static_cast<double>(cx_lo) - rx - 1.0
                                           : static_cast<double>(cx_hi) + rx + 1.0;
          const double x_outer = left_side ? rx + 1.0 : static_cast<double>(e.nx - 1) - rx - 1.0;
          if ((left_side && x_outer > x_inner) || (!left_side && x_inner > x_outer)) continue;
          double x_lo = std::min(x_inner, x_outer), x_hi = std::max(x_inner, x_outer);
          if (st == 2) {
            // hug the lateral boundary
            x_hi = left_side ? std::min(x_hi, x_lo + 3.0) : x_hi;
            x_lo = left_side ? x_lo : std::max(x_lo, x_hi - 3.0);
          }
          cx = x_lo + (x_hi - x_lo) * draw.next_double();
          const double z_lo = rz + 1.0, z_hi = static_cast<double>(e.nz - 1) - rz - 1.0;
          if (z_hi < z_lo) continue;
          if (st == 4) {
            cz = std::min(z_lo + 1.5, z_hi);  // basal: low slices
          } else {
            cz = z_lo + (z_hi - z_lo) * draw.next_double();
          }
          const double y_lo = ry + 1.0, y_hi = static_cast<double>(e.ny - 1) - ry - 1.0;
          if (y_hi < y_lo) continue;
          cy = y_lo + (y_hi - y_lo) * draw.next_double();
        }
        VoxelSet v = ellipsoid_voxels(e, cz, cy, cx, rz, ry, rx);
        if (v.flat.empty()) continue;
        // Corridor is off limits so the slab can move freely.
        if (!(v.bbox.x1 <= cx_lo || v.bbox.x0 >= cx_hi)) continue;
        if (!v.bbox.inside(e)) continue;
        if (!separated(v.bbox)) continue;
        placed.push_back(v.bbox);
        bleeds[static_cast<std::size_t>(bi)] =
            PlannedBleed{st, std::move(v), target};
        done = true;
      }
      if (!done) {
        throw Error(Errc::PlacementFailure, "could not place bleeding (subtype " +
                                                std::to_string(st) + ", attempt key " +
                                                std::to_string(attempt_key) + ")");
      }

      // After the non-intraventricular pass, compress and shift.
      if (pass == 0 && bi == n_bleeds - 1) {}
    }

    if (pass == 0) {
      // Ventricle compression: the heaviest adjacent mass wins per side.
      double press_left = 0.0, press_right = 0.0;
      for (const auto& b : bleeds) {
        if (b.voxels.flat.empty()) continue;
        const double v = static_cast<double>(b.voxels.flat.size());
        if (v < kAsymTriggerVolume) continue;
        Box3D lobe_left{lobe_z0, lobe_y0, cx_lo - static_cast<std::int64_t>(width_left),
                        lobe_z1, lobe_y1, cx_lo};
        Box3D lobe_right{lobe_z0, lobe_y0, cx_hi, lobe_z1, lobe_y1,
                         cx_hi + static_cast<std::int64_t>(width_right)};
        if (intersection_volume(b.voxels.bbox.dilated(3), lobe_left) > 0) {
          press_left = std::max(press_left, v);
        }
        if (intersection_volume(b.voxels.bbox.dilated(3), lobe_right) > 0) {
          press_right = std::max(press_right, v);
        }
      }
      const double squeeze = 1.0 - (spec.thresholds.asym_volume_frac + 0.13);
      if (press_left > press_right) {
        width_left = std::max(5.0, std::floor(width_left * squeeze));
      } else if (press_right > press_left && press_right > 0.0) {
        width_right = std::max(5.0, std::floor(width_right * squeeze));
      }
    }
  }

  // --- midline displacement profile ---
  std::vector<std::int64_t> shift(static_cast<std::size_t>(e.nz), 0);
  {
    double best_vol = 0.0;
    int sign = 0;
    std::vector<std::uint8_t> trigger(static_cast<std::size_t>(e.nz), 0);
    for (const auto& b : bleeds) {
      const double v = static_cast<double>(b.voxels.flat.size());
      if (v < kShiftTriggerVolume) continue;
      for (std::int64_t z = b.voxels.bbox.z0; z < b.voxels.bbox.z1; ++z) {
        trigger[static_cast<std::size_t>(z)] = 1;
      }
      if (v > best_vol) {
        best_vol = v;
        sign = (b.voxels.bbox.center_x() < static_cast<double>(e.nx) / 2.0) ? 1 : -1;
      }
    }
    if (sign != 0) {
      const std::int64_t mag = std::min<std::int64_t>(
          kMaxShift,
          static_cast<std::int64_t>(std::ceil(spec.thresholds.shift_displacement_vox)) +
              (best_vol >= 1500.0 ? 2 : 1));
      for (std::int64_t z = 0; z < e.nz; ++z) {
        std::int64_t nearest = e.nz;
        for (std::int64_t q = 0; q < e.nz; ++q) {
          if (trigger[static_cast<std::size_t>(q)]) nearest = std::min(nearest, std::abs(z - q));
        }
        // ramp down by one voxel per slice so the slab stays 6-connected
        const std::int64_t d = std::max<std::int64_t>(0, mag - nearest);
        shift[static_cast<std::size_t>(z)] = sign * d;
      }
    }
  }
  bool any_shift = false;
  for (auto s : shift) any_shift = any_shift || s != 0;

  const std::int64_t slab_thickness = any_shift ? 2 : draw.next_in(1, 2);
  const std::int64_t slab_x0 = (e.nx - slab_thickness) / 2;
  const std::int64_t slab_y0 = std::max<std::int64_t>(2, (e.ny * 10) / 100);
  const std::int64_t slab_y1 = lobe_y1 - 8;  // stops above the bridge span

  // --- bridge keeps the two lobes one connected component ---
  const std::int64_t bridge_y0 = slab_y1;
  const std::int64_t bridge_y1 = lobe_y1;
  const std::int64_t bridge_z0 = std::max(lobe_z0, (lobe_z0 + lobe_z1) / 2 - 2);
  const std::int64_t bridge_z1 = std::min(lobe_z1, bridge_z0 + 4);

  // --- paint ---
  Volume vol;
  vol.extent = e;
  vol.labels.assign(static_cast<std::size_t>(e.voxels()), kLabelBackground);
  vol.intensities.assign(static_cast<std::size_t>(e.voxels()), 0.0f);

  auto paint_box = [&vol, &e](const Box3D& b, std::uint8_t label) {
    for (std::int64_t z = b.z0; z < b.z1; ++z) {
      for (std::int64_t y = b.y0; y < b.y1; ++y) {
        for (std::int64_t x = b.x0; x < b.x1; ++x) {
          vol.labels[vol.index(z, y, x)] = label;
        }
      }
    }
  };

  const Box3D lobe_left{lobe_z0, lobe_y0, cx_lo - static_cast<std::int64_t>(width_left),
                        lobe_z1, lobe_y1, cx_lo};
  const Box3D lobe_right{lobe_z0, lobe_y0, cx_hi, lobe_z1, lobe_y1,
                         cx_hi + static_cast<std::int64_t>(width_right)};
  const Box3D bridge{bridge_z0, bridge_y0, cx_lo, bridge_z1, bridge_y1, cx_hi};
  paint_box(lobe_left, kLabelVentricle);
  paint_box(lobe_right, kLabelVentricle);
  paint_box(bridge, kLabelVentricle);

  for (const auto& b : bleeds) {
    for (auto fi : b.voxels.flat) vol.labels[fi] = kLabelBleeding;
  }

  Box3D midline_box{e.nz, slab_y0, e.nx, 0, slab_y1, 0};
  for (std::int64_t z = 0; z < e.nz; ++z) {
    const std::int64_t x0 = slab_x0 + shift[static_cast<std::size_t>(z)];
    paint_box(Box3D{z, slab_y0, x0, z + 1, slab_y1, x0 + slab_thickness}, kLabelMidline);
    midline_box.z0 = std::min(midline_box.z0, z);
    midline_box.z1 = std::max(midline_box.z1, z + 1);
    midline_box.x0 = std::min(midline_box.x0, x0);
    midline_box.x1 = std::max(midline_box.x1, x0 + slab_thickness);
  }

  // --- intensities: class mean + seeded noise, independent per voxel ---
  const std::uint64_t noise_key = fold(attempt_key, "noise");
  const double means[4] = {spec.intensity.background_mean, spec.intensity.bleeding_mean,
                           spec.intensity.ventricle_mean, spec.intensity.midline_mean};
  for (std::size_t fi = 0; fi < vol.labels.size(); ++fi) {
    vol.intensities[fi] = static_cast<float>(
        means[vol.labels[fi]] + spec.intensity.noise_sigma * gaussian_at(noise_key, fi));
  }

  // --- objects ---
  SceneGraph graph;
  {
    Box3D vent_box = lobe_left;
    vent_box.z0 = std::min({lobe_left.z0, lobe_right.z0, bridge.z0});
    vent_box.y0 = std::min({lobe_left.y0, lobe_right.y0, bridge.y0});
    vent_box.x0 = std::min({lobe_left.x0, lobe_right.x0, bridge.x0});
    vent_box.z1 = std::max({lobe_left.z1, lobe_right.z1, bridge.z1});
    vent_box.y1 = std::max({lobe_left.y1, lobe_right.y1, bridge.y1});
    vent_box.x1 = std::max({lobe_left.x1, lobe_right.x1, bridge.x1});
    graph.objects.push_back(SceneObject{0, ObjectClass::VentricleSystem, std::nullopt, vent_box,
                                        1.0, kLabelVentricle});
    graph.objects.push_back(
        SceneObject{1, ObjectClass::Midline, std::nullopt, midline_box, 1.0, kLabelMidline});
    int id = 2;
    for (const auto& b : bleeds) {
      graph.objects.push_back(
          SceneObject{id++, ObjectClass::Bleeding, b.subtype, b.voxels.bbox, 1.0, kLabelBleeding});
    }
  }

  // --- invariant enforcement: painted regions must match the object boxes ---
  if (label_bbox(vol, kLabelVentricle) != graph.objects[0].box ||
      count_components(vol, kLabelVentricle) != 1) {
    throw Error(Errc::PlacementFailure,
                "ventricle region clipped by a bleeding (attempt key " +
                    std::to_string(attempt_key) + ")");
  }
  if (label_bbox(vol, kLabelMidline) != graph.objects[1].box) {
    throw Error(Errc::PlacementFailure, "midline slab clipped");
  }
  if (n_bleeds > 0 && count_components(vol, kLabelBleeding) != n_bleeds) {
    throw Error(Errc::PlacementFailure, "bleeding components merged");
  }

  graph.relations = derive_relations(vol, graph.objects, spec.thresholds);
  return Scene{std::move(vol), std::move(graph)};
}

}  // namespace synthdetail

/// Deterministic scene generation: a pure function of (spec, index).
inline Scene generate_scene(const CohortSpec& spec, std::uint64_t index) {
  spec.validate();
  const std::uint64_t key = fold(fold(fold(spec.seed_base, spec.client_id), "scene"), index);
  std::string last_error;
  for (std::uint64_t attempt = 0; attempt < 20; ++attempt) {
    try {
      return synthdetail::build_scene(spec, fold(key, attempt));
    } catch (const Error& err) {
      if (err.code() != Errc::PlacementFailure) throw;
      last_error = err.what();
    }
  }
  throw Error(Errc::PlacementFailure,
              "scene " + std::to_string(index) + " of cohort '" + spec.client_id +
                  "' failed after 20 attempts; last: " + last_error);
}

/// n scenes indexed 0..n-1, with the relation subset and a 60/10/30
/// train/val/test partition by index hash.
inline Dataset generate_cohort(const CohortSpec& spec, std::size_t n) {
  if (n < 1) throw Error(Errc::InvalidConfig, "cohort size must be >= 1");
  Dataset ds;
  ds.scenes.reserve(n);
  const std::uint64_t split_key = fold(fold(spec.seed_base, spec.client_id), "split");
  for (std::size_t i = 0; i < n; ++i) {
    ds.scenes.push_back(generate_scene(spec, i));
    ds.obj_indices.push_back(i);
    if (!ds.scenes.back().graph.relations.empty()) ds.rel_indices.push_back(i);
    const double u = static_cast<double>(counter_hash(split_key, i) >> 11) * 0x1.0p-53;
    ds.split.push_back(u < 0.6 ? Split::Train : (u < 0.7 ? Split::Val : Split::Test));
  }
  return ds;
}

/// The four named preset cohorts. Same relation rules everywhere; the shift
/// lives in subtype mix, bleeding size, count and intensity distributions.
inline std::vector<CohortSpec> preset_cohorts(std::uint64_t seed_base = 0) {
  std::vector<CohortSpec> specs(4);

  auto common = [&](CohortSpec& s, const std::string& name) {
    s.client_id = name;
    s.volume_extent = Extent{16, 64, 64};
    s.thresholds = RelationThresholds{0.45, 2.0, 0.22};
    s.seed_base = seed_base;
  };

  // A: intraventricular-heavy, bright bleedings on a dark background.
  common(specs[0], "A");
  specs[0].bleed_count_dist = {0.04, 0.22, 0.28, 0.24, 0.14, 0.06, 0.02};
  specs[0].subtype_mix = {0.12, 0.10, 0.53, 0.10, 0.15};
  specs[0].size_range = {SizeRange{220, 780}, SizeRange{520, 1500}, SizeRange{130, 420},
                         SizeRange{36, 110}, SizeRange{40, 130}};
  specs[0].intensity = IntensityParams{0.16, 0.86, 0.05, 0.46, 0.050};

  // B: subdural/epidural-heavy with large bleedings; flatter contrast.
  common(specs[1], "B");
  specs[1].bleed_count_dist = {0.06, 0.30, 0.30, 0.20, 0.10, 0.03, 0.01};
  specs[1].subtype_mix = {0.16, 0.52, 0.10, 0.06, 0.16};
  specs[1].size_range = {SizeRange{260, 900}, SizeRange{800, 2400}, SizeRange{150, 450},
                         SizeRange{36, 110}, SizeRange{40, 140}};
  specs[1].intensity = IntensityParams{0.22, 0.70, 0.09, 0.50, 0.070};

  // C: many small subarachnoidal bleedings; low contrast.
  common(specs[2], "C");
  specs[2].bleed_count_dist = {0.02, 0.08, 0.16, 0.24, 0.24, 0.16, 0.10};
  specs[2].subtype_mix = {0.11, 0.07, 0.12, 0.29, 0.41};
  specs[2].size_range = {SizeRange{170, 650}, SizeRange{600, 1500}, SizeRange{120, 380},
                         SizeRange{30, 95}, SizeRange{34, 115}};
  specs[2].intensity = IntensityParams{0.26, 0.64, 0.11, 0.52, 0.055};

  // D: balanced mix.
  common(specs[3], "D");
  specs[3].bleed_count_dist = {0.05, 0.20, 0.27, 0.23, 0.15, 0.07, 0.03};
  specs[3].subtype_mix = {0.30, 0.20, 0.20, 0.10, 0.20};
  specs[3].size_range = {SizeRange{200, 800}, SizeRange{600, 1900}, SizeRange{140, 430},
                         SizeRange{34, 105}, SizeRange{38, 125}};
  specs[3].intensity = IntensityParams{0.19, 0.78, 0.07, 0.48, 0.060};

  for (const auto& s : specs) s.validate();
  return specs;
}

inline nlohmann::ordered_json cohort_spec_to_json(const CohortSpec& s) {
  nlohmann::ordered_json j;
  j["client_id"] = s.client_id;
  j["volume_extent"] = {s.volume_extent.nz, s.volume_extent.ny, s.volume_extent.nx};
  j["bleed_count_dist"] = s.bleed_count_dist;
  j["subtype_mix"] = s.subtype_mix;
  auto ranges = nlohmann::ordered_json::array();
  for (const auto& r : s.size_range) ranges.push_back({r.min_vol, r.max_vol});
  j["size_range"] = std::move(ranges);
  j["intensity_params"] = {{"background_mean", s.intensity.background_mean},
                           {"bleeding_mean", s.intensity.bleeding_mean},
                           {"ventricle_mean", s.intensity.ventricle_mean},
                           {"midline_mean", s.intensity.midline_mean},
                           {"noise_sigma", s.intensity.noise_sigma}};
  j["relation_thresholds"] = {{"flow_overlap_frac", s.thresholds.flow_overlap_frac},
                              {"shift_displacement_vox", s.thresholds.shift_displacement_vox},
                              {"asym_volume_frac", s.thresholds.asym_volume_frac}};
  j["seed_base"] = s.seed_base;
  return j;
}

/// FNV-1a hash of the spec's canonical JSON form, for sidecar provenance.
inline std::uint64_t cohort_spec_hash(const CohortSpec& s) {
  const std::string text = cohort_spec_to_json(s).dump();
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return h;
}

}  // namespace fedgraph
