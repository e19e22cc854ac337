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
#include <cstdint>
#include <map>
#include <mutex>
#include <numeric>
#include <vector>

#include "fedgraph/errors.hpp"
#include "fedgraph/params.hpp"
#include "fedgraph/rng.hpp"
#include "fedgraph/scenegraph.hpp"
#include "fedgraph/synth.hpp"

namespace fedgraph {

constexpr int kDefaultFeatureDim = 64;
constexpr int kPairFeatureDim = 16;
constexpr double kBiasEpsilon = 1e-6;

// Contractual parameter group names.
inline const char* kGroupDetectorLoc = "detector.loc";
inline const char* kGroupDetectorBox = "detector.box";
inline const char* kGroupDetectorSeg = "detector.seg";
inline const char* kGroupRelationLinear = "relation.linear";
inline const char* kGroupRelationBias = "relation.bias";

/// Per (subject class, object class) distribution over the four predicate
/// outputs (three relations plus the background class).
struct FrequencyBias {
  std::array<double, kNumObjectClasses * kNumObjectClasses * kNumPredicates> table{};
  std::uint64_t count = 0;

  static std::size_t cell_index(ObjectClass s, ObjectClass o) {
    return (static_cast<std::size_t>(s) * kNumObjectClasses + static_cast<std::size_t>(o)) *
           kNumPredicates;
  }
  const double* cell(ObjectClass s, ObjectClass o) const { return table.data() + cell_index(s, o); }
  double* cell(ObjectClass s, ObjectClass o) { return table.data() + cell_index(s, o); }

  static FrequencyBias uniform() {
    FrequencyBias b;
    b.table.fill(1.0 / kNumPredicates);
    return b;
  }
};

/// The model's parameter layout. Feature dimension F is recoverable from
/// the detector.loc group (length F+1).
inline ParamStore make_initial_params(int feature_dim, std::uint64_t seed) {
  if (feature_dim < 8) throw Error(Errc::InvalidConfig, "feature dimension must be >= 8");
  const std::uint64_t key = fold(seed, "init");
  ParamStore store;
  int group_index = 0;
  auto gaussian_group = [&](const char* name, std::vector<std::uint32_t> shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    std::vector<double> values(n);
    RngStream rng(fold(key, static_cast<std::uint64_t>(group_index++)));
    for (auto& v : values) v = 0.01 * rng.next_gaussian();
    store.add(name, std::move(shape), std::move(values));
  };
  const auto f = static_cast<std::uint32_t>(feature_dim);
  gaussian_group(kGroupDetectorLoc, {f + 1});
  gaussian_group(kGroupDetectorBox, {6, f});
  gaussian_group(kGroupDetectorSeg, {4, f});
  gaussian_group(kGroupRelationLinear, {kNumPredicates, kPairFeatureDim + 1});
  const FrequencyBias uniform = FrequencyBias::uniform();
  store.add(kGroupRelationBias, {kNumObjectClasses, kNumObjectClasses, kNumPredicates},
            std::vector<double>(uniform.table.begin(), uniform.table.end()));
  return store;
}

inline int feature_dim_of(const ParamStore& store) {
  const ParamGroup* loc = store.find(kGroupDetectorLoc);
  if (loc == nullptr) throw Error(Errc::UnknownGroup, "missing detector.loc");
  return static_cast<int>(loc->size()) - 1;
}

inline FrequencyBias bias_from_params(const ParamStore& store) {
  const ParamGroup* g = store.find(kGroupRelationBias);
  if (g == nullptr) throw Error(Errc::UnknownGroup, "missing relation.bias");
  FrequencyBias b;
  std::copy(g->values.begin(), g->values.end(), b.table.begin());
  return b;
}

inline void bias_into_params(ParamStore& store, const FrequencyBias& bias) {
  ParamGroup* g = store.find(kGroupRelationBias);
  if (g == nullptr) throw Error(Errc::UnknownGroup, "missing relation.bias");
  g->values.assign(bias.table.begin(), bias.table.end());
}

// ---------------------------------------------------------------------------
// Anchors

struct AnchorSet {
  Extent extent;
  std::vector<Box3D> anchors;
};

namespace modeldetail {

struct AnchorTemplate {
  std::int64_t dz, dy, dx;
};

struct AnchorScale {
  std::int64_t stride_z, stride_y, stride_x;
  std::array<AnchorTemplate, 3> templates;
};

inline const std::array<AnchorScale, 2>& anchor_scales() {
  static const std::array<AnchorScale, 2> scales = {
      AnchorScale{2, 2, 2, {AnchorTemplate{3, 5, 4}, {4, 6, 6}, {6, 9, 8}}},
      AnchorScale{4, 6, 6, {AnchorTemplate{8, 13, 10}, {10, 22, 7}, {12, 28, 10}}},
  };
  return scales;
}

}  // namespace modeldetail

/// Deterministic anchor grid: 2 scales, 3 size templates per cell, clipped
/// to the extent.
inline AnchorSet build_anchors(const Extent& extent) {
  if (extent.nz < 8 || extent.ny < 8 || extent.nx < 8) {
    throw Error(Errc::ExtentTooSmall, "anchor grid needs extent >= 8 per axis");
  }
  AnchorSet set;
  set.extent = extent;
  for (const auto& scale : modeldetail::anchor_scales()) {
    for (std::int64_t cz = 0; cz < extent.nz; cz += scale.stride_z) {
      for (std::int64_t cy = 0; cy < extent.ny; cy += scale.stride_y) {
        for (std::int64_t cx = 0; cx < extent.nx; cx += scale.stride_x) {
          const double center_z = static_cast<double>(cz) + static_cast<double>(scale.stride_z) / 2.0;
          const double center_y = static_cast<double>(cy) + static_cast<double>(scale.stride_y) / 2.0;
          const double center_x = static_cast<double>(cx) + static_cast<double>(scale.stride_x) / 2.0;
          for (const auto& t : scale.templates) {
            Box3D b;
            b.z0 = static_cast<std::int64_t>(std::llround(center_z - static_cast<double>(t.dz) / 2.0));
            b.y0 = static_cast<std::int64_t>(std::llround(center_y - static_cast<double>(t.dy) / 2.0));
            b.x0 = static_cast<std::int64_t>(std::llround(center_x - static_cast<double>(t.dx) / 2.0));
            b.z1 = b.z0 + t.dz;
            b.y1 = b.y0 + t.dy;
            b.x1 = b.x0 + t.dx;
            b.z0 = std::max<std::int64_t>(0, b.z0);
            b.y0 = std::max<std::int64_t>(0, b.y0);
            b.x0 = std::max<std::int64_t>(0, b.x0);
            b.z1 = std::min(extent.nz, b.z1);
            b.y1 = std::min(extent.ny, b.y1);
            b.x1 = std::min(extent.nx, b.x1);
            if (b.valid()) set.anchors.push_back(b);
          }
        }
      }
    }
  }
  return set;
}

/// Shared per-extent anchor sets (they are pure functions of the extent).
inline const AnchorSet& anchors_for(const Extent& extent) {
  static std::mutex mu;
  static std::map<std::tuple<std::int64_t, std::int64_t, std::int64_t>, AnchorSet> cache;
  std::lock_guard<std::mutex> lock(mu);
  auto key = std::make_tuple(extent.nz, extent.ny, extent.nx);
  auto it = cache.find(key);
  if (it == cache.end()) it = cache.emplace(key, build_anchors(extent)).first;
  return it->second;
}

// ---------------------------------------------------------------------------
// Features (float pipeline; model arithmetic stays double)

namespace modeldetail {

/// Fixed seeded projection matrix, rows x cols, entries N(0, 1/cols).
inline const std::vector<float>& projection_matrix(const char* tag, int rows, int cols) {
  static std::mutex mu;
  static std::map<std::tuple<std::string, int, int>, std::vector<float>> cache;
  std::lock_guard<std::mutex> lock(mu);
  auto key = std::make_tuple(std::string(tag), rows, cols);
  auto it = cache.find(key);
  if (it == cache.end()) {
    RngStream rng(fold(fold(0x5EEDF00DULL, tag), static_cast<std::uint64_t>(rows * 131 + cols)));
    std::vector<float> m(static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols));
    const double scale = 1.0 / std::sqrt(static_cast<double>(cols));
    for (auto& v : m) v = static_cast<float>(rng.next_gaussian() * scale);
    it = cache.emplace(key, std::move(m)).first;
  }
  return it->second;
}

constexpr int kAnchorStatDims = 6;  // mean, var, max + 3 extent ratios
constexpr int kAnchorPatch = 3;     // 3x3x3 nearest-sampled patch
constexpr int kVoxelStatDims = 8;   // constant, intensity, mean, var, max + 3 positions
// Acts as the segmentation head's step size relative to the anchor heads;
// the shared learning rate stays small enough for the anchor classifier.
constexpr float kVoxelFeatureScale = 6.0f;

}  // namespace modeldetail

/// Anchor descriptor: region intensity stats, size ratios, and a fixed
/// random projection of the nearest-downsampled 4x4x4 patch.
inline void anchor_features(const Volume& vol, const Box3D& box, int feature_dim, float* out) {
  const std::int64_t dz = box.z1 - box.z0, dy = box.y1 - box.y0, dx = box.x1 - box.x0;
  double sum = 0.0, sum_sq = 0.0;
  float maxv = -3.0e38f;
  for (std::int64_t z = box.z0; z < box.z1; ++z) {
    for (std::int64_t y = box.y0; y < box.y1; ++y) {
      const float* row = vol.intensities.data() + vol.index(z, y, 0);
      for (std::int64_t x = box.x0; x < box.x1; ++x) {
        const float v = row[x];
        sum += v;
        sum_sq += static_cast<double>(v) * v;
        maxv = std::max(maxv, v);
      }
    }
  }
  const double n = static_cast<double>(box.volume());
  const double mean = sum / n;
  const double var = std::max(0.0, sum_sq / n - mean * mean);
  out[0] = static_cast<float>(mean);
  out[1] = static_cast<float>(var);
  out[2] = maxv;
  out[3] = static_cast<float>(dz) / static_cast<float>(vol.extent.nz);
  out[4] = static_cast<float>(dy) / static_cast<float>(vol.extent.ny);
  out[5] = static_cast<float>(dx) / static_cast<float>(vol.extent.nx);

  constexpr int P = modeldetail::kAnchorPatch;
  float patch[P * P * P];
  int pi = 0;
  for (int i = 0; i < P; ++i) {
    const std::int64_t z = box.z0 + ((2 * i + 1) * dz) / (2 * P);
    for (int j = 0; j < P; ++j) {
      const std::int64_t y = box.y0 + ((2 * j + 1) * dy) / (2 * P);
      for (int k = 0; k < P; ++k) {
        const std::int64_t x = box.x0 + ((2 * k + 1) * dx) / (2 * P);
        patch[pi++] = vol.intensity(z, y, x);
      }
    }
  }
  const int proj_rows = feature_dim - modeldetail::kAnchorStatDims;
  const auto& m = modeldetail::projection_matrix("anchor_patch", proj_rows, P * P * P);
  for (int r = 0; r < proj_rows; ++r) {
    const float* row = m.data() + static_cast<std::size_t>(r) * (P * P * P);
    float acc = 0.0f;
    for (int c = 0; c < P * P * P; ++c) acc += row[c] * patch[c];
    out[modeldetail::kAnchorStatDims + r] = acc;
  }
}

/// Per-voxel descriptor: local 3x3x3 stats, normalized position, and a
/// fixed random projection of the (border-clamped) neighborhood.
inline void voxel_features(const Volume& vol, std::int64_t z, std::int64_t y, std::int64_t x,
                           int feature_dim, float* out) {
  float nb[27];
  if (z > 0 && z < vol.extent.nz - 1 && y > 0 && y < vol.extent.ny - 1 && x > 0 &&
      x < vol.extent.nx - 1) {
    const float* base = vol.intensities.data();
    const std::int64_t sy = vol.extent.nx;
    const std::int64_t sz = vol.extent.nx * vol.extent.ny;
    int ni = 0;
    for (std::int64_t iz = z - 1; iz <= z + 1; ++iz) {
      for (std::int64_t iy = y - 1; iy <= y + 1; ++iy) {
        const float* p = base + iz * sz + iy * sy + (x - 1);
        nb[ni++] = p[0];
        nb[ni++] = p[1];
        nb[ni++] = p[2];
      }
    }
  } else {
    int ni = 0;
    for (std::int64_t iz = z - 1; iz <= z + 1; ++iz) {
      const std::int64_t cz = std::clamp<std::int64_t>(iz, 0, vol.extent.nz - 1);
      for (std::int64_t iy = y - 1; iy <= y + 1; ++iy) {
        const std::int64_t cy = std::clamp<std::int64_t>(iy, 0, vol.extent.ny - 1);
        for (std::int64_t ix = x - 1; ix <= x + 1; ++ix) {
          const std::int64_t cx = std::clamp<std::int64_t>(ix, 0, vol.extent.nx - 1);
          nb[ni++] = vol.intensity(cz, cy, cx);
        }
      }
    }
  }
  double sum = 0.0, sum_sq = 0.0;
  float maxv = nb[0];
  for (float v : nb) {
    sum += v;
    sum_sq += static_cast<double>(v) * v;
    maxv = std::max(maxv, v);
  }
  const double mean = sum / 27.0;
  constexpr float kScale = modeldetail::kVoxelFeatureScale;
  out[0] = kScale;  // constant term; the segmentation head has no separate bias
  out[1] = kScale * vol.intensity(z, y, x);
  out[2] = kScale * static_cast<float>(mean);
  out[3] = kScale * static_cast<float>(std::max(0.0, sum_sq / 27.0 - mean * mean));
  out[4] = kScale * maxv;
  out[5] = kScale * static_cast<float>(z) / static_cast<float>(vol.extent.nz);
  out[6] = kScale * static_cast<float>(y) / static_cast<float>(vol.extent.ny);
  out[7] = kScale * static_cast<float>(x) / static_cast<float>(vol.extent.nx);

  const int proj_rows = feature_dim - modeldetail::kVoxelStatDims;
  const auto& m = modeldetail::projection_matrix("voxel_patch", proj_rows, 27);
  for (int r = 0; r < proj_rows; ++r) {
    const float* row = m.data() + static_cast<std::size_t>(r) * 27;
    float acc = 0.0f;
    for (int c = 0; c < 27; ++c) acc += row[c] * nb[c];
    out[modeldetail::kVoxelStatDims + r] = kScale * acc;
  }
}

// ---------------------------------------------------------------------------
// Anchor matching

struct AnchorAssignment {
  // +1 positive, -1 negative, 0 ignored
  std::vector<std::int8_t> label;
  std::vector<int> gt_index;  // valid where label == +1
};

/// Positive at IoU >= 0.5 or as a ground-truth box's best anchor (IoU > 0);
/// negative below 0.3; ignored in between. Ties break toward the lower
/// anchor/gt index.
inline AnchorAssignment match_anchors(const AnchorSet& anchors, const std::vector<Box3D>& gt_boxes) {
  const std::size_t n = anchors.anchors.size();
  AnchorAssignment out;
  out.label.assign(n, -1);
  out.gt_index.assign(n, -1);
  if (gt_boxes.empty()) return out;

  std::vector<double> best_iou(n, 0.0);
  std::vector<double> gt_best_iou(gt_boxes.size(), 0.0);
  std::vector<std::int64_t> gt_best_anchor(gt_boxes.size(), -1);
  for (std::size_t ai = 0; ai < n; ++ai) {
    for (std::size_t gi = 0; gi < gt_boxes.size(); ++gi) {
      const double iou = iou3d(anchors.anchors[ai], gt_boxes[gi]);
      if (iou > best_iou[ai]) {
        best_iou[ai] = iou;
        out.gt_index[ai] = static_cast<int>(gi);
      }
      if (iou > gt_best_iou[gi]) {
        gt_best_iou[gi] = iou;
        gt_best_anchor[gi] = static_cast<std::int64_t>(ai);
      }
    }
    if (best_iou[ai] >= 0.5) {
      out.label[ai] = 1;
    } else if (best_iou[ai] < 0.3) {
      out.label[ai] = -1;
    } else {
      out.label[ai] = 0;
    }
  }
  for (std::size_t gi = 0; gi < gt_boxes.size(); ++gi) {
    const std::int64_t ai = gt_best_anchor[gi];
    if (ai < 0) continue;
    if (out.label[static_cast<std::size_t>(ai)] != 1) {
      out.label[static_cast<std::size_t>(ai)] = 1;
      out.gt_index[static_cast<std::size_t>(ai)] = static_cast<int>(gi);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Detector loss

struct ObjBatchItem {
  const Volume* volume = nullptr;
  std::vector<Box3D> gt_bleedings;
};

struct ObjBatch {
  std::vector<ObjBatchItem> items;
  std::uint64_t sample_key = 0;  // drives negative sampling and the voxel subsample
};

enum class DetectorLossPart : unsigned { Loc = 1, Box = 2, Seg = 4, All = 7 };

struct DetectorLoss {
  double total = 0.0;
  double loc = 0.0, box = 0.0, seg = 0.0;
  GradStore grads;
};

namespace modeldetail {

inline double sigmoid(double z) { return z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z)); }

/// log(1 + e^z), overflow-safe.
inline double softplus(double z) { return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

constexpr double kNegativeRatio = 3.0;   // negatives sampled per positive
constexpr double kSegSampleRate = 0.25;  // voxel subsample for the seg loss

struct BoxTargets {
  std::array<double, 6> t;
};

inline BoxTargets box_regression_targets(const Box3D& anchor, const Box3D& gt) {
  const double az = static_cast<double>(anchor.z1 - anchor.z0);
  const double ay = static_cast<double>(anchor.y1 - anchor.y0);
  const double ax = static_cast<double>(anchor.x1 - anchor.x0);
  BoxTargets out;
  out.t[0] = (gt.center_z() - anchor.center_z()) / az;
  out.t[1] = (gt.center_y() - anchor.center_y()) / ay;
  out.t[2] = (gt.center_x() - anchor.center_x()) / ax;
  out.t[3] = std::log(static_cast<double>(gt.z1 - gt.z0) / az);
  out.t[4] = std::log(static_cast<double>(gt.y1 - gt.y0) / ay);
  out.t[5] = std::log(static_cast<double>(gt.x1 - gt.x0) / ax);
  return out;
}

}  // namespace modeldetail

/// Sum of anchor-classification BCE, smooth-L1 box regression on positive
/// anchors, and 4-class segmentation cross-entropy on a deterministic 25%
/// voxel subsample. Gradients are closed-form; groups outside the detector
/// get zero blocks.
inline DetectorLoss detector_loss_and_grad(const ParamStore& params, const ObjBatch& batch,
                                           DetectorLossPart parts = DetectorLossPart::All) {
  if (batch.items.empty()) throw Error(Errc::EmptyInput, "empty batch");
  const int F = feature_dim_of(params);
  const auto& w_loc = params.find(kGroupDetectorLoc)->values;
  const auto& w_box = params.find(kGroupDetectorBox)->values;
  const auto& w_seg = params.find(kGroupDetectorSeg)->values;
  const bool want_loc = static_cast<unsigned>(parts) & static_cast<unsigned>(DetectorLossPart::Loc);
  const bool want_box = static_cast<unsigned>(parts) & static_cast<unsigned>(DetectorLossPart::Box);
  const bool want_seg = static_cast<unsigned>(parts) & static_cast<unsigned>(DetectorLossPart::Seg);

  DetectorLoss out;
  out.grads = GradStore::zeros_like(params);
  auto& g_loc = out.grads.find(kGroupDetectorLoc)->values;
  auto& g_box = out.grads.find(kGroupDetectorBox)->values;
  auto& g_seg = out.grads.find(kGroupDetectorSeg)->values;

  std::vector<float> feat(static_cast<std::size_t>(F));
  std::size_t n_loc = 0, n_pos = 0, n_vox = 0;

  for (std::size_t item_i = 0; item_i < batch.items.size(); ++item_i) {
    const auto& item = batch.items[item_i];
    const Volume& vol = *item.volume;
    const AnchorSet& anchors = anchors_for(vol.extent);
    const AnchorAssignment assign = match_anchors(anchors, item.gt_bleedings);

    if (want_loc || want_box) {
      std::vector<std::size_t> positives, negatives;
      for (std::size_t ai = 0; ai < anchors.anchors.size(); ++ai) {
        if (assign.label[ai] == 1) positives.push_back(ai);
        else if (assign.label[ai] == -1) negatives.push_back(ai);
      }
      // all positives plus a 3x sample of negatives (without replacement)
      std::vector<std::size_t> sampled_neg;
      {
        const std::size_t want = std::min(
            negatives.size(),
            static_cast<std::size_t>(modeldetail::kNegativeRatio * static_cast<double>(positives.size())));
        RngStream rng(fold(fold(batch.sample_key, "neg"), item_i));
        for (std::size_t k = 0; k < want; ++k) {
          const std::size_t j = k + static_cast<std::size_t>(rng.next_below(negatives.size() - k));
          std::swap(negatives[k], negatives[j]);
          sampled_neg.push_back(negatives[k]);
        }
        std::sort(sampled_neg.begin(), sampled_neg.end());
      }

      auto accumulate_loc = [&](std::size_t ai, double label) {
        anchor_features(vol, anchors.anchors[ai], F, feat.data());
        double logit = w_loc[static_cast<std::size_t>(F)];
        for (int c = 0; c < F; ++c) logit += w_loc[static_cast<std::size_t>(c)] * feat[c];
        out.loc += modeldetail::softplus(logit) - label * logit;
        const double dlogit = modeldetail::sigmoid(logit) - label;
        for (int c = 0; c < F; ++c) g_loc[static_cast<std::size_t>(c)] += dlogit * feat[c];
        g_loc[static_cast<std::size_t>(F)] += dlogit;
        ++n_loc;
      };

      for (std::size_t ai : positives) {
        if (want_loc) accumulate_loc(ai, 1.0);
        if (want_box) {
          anchor_features(vol, anchors.anchors[ai], F, feat.data());
          const auto targets = modeldetail::box_regression_targets(
              anchors.anchors[ai], item.gt_bleedings[static_cast<std::size_t>(assign.gt_index[ai])]);
          for (int d = 0; d < 6; ++d) {
            double pred = 0.0;
            const double* row = w_box.data() + static_cast<std::size_t>(d) * F;
            for (int c = 0; c < F; ++c) pred += row[c] * feat[c];
            const double r = pred - targets.t[d];
            double dr;
            if (std::abs(r) < 1.0) {
              out.box += 0.5 * r * r;
              dr = r;
            } else {
              out.box += std::abs(r) - 0.5;
              dr = (r > 0.0) ? 1.0 : -1.0;
            }
            double* grow = g_box.data() + static_cast<std::size_t>(d) * F;
            for (int c = 0; c < F; ++c) grow[c] += dr * feat[c];
          }
          ++n_pos;
        }
      }
      if (want_loc) {
        for (std::size_t ai : sampled_neg) accumulate_loc(ai, 0.0);
      }
    }

    if (want_seg) {
      const std::uint64_t seg_key = fold(fold(batch.sample_key, "seg"), item_i);
      const std::size_t total = vol.labels.size();
      for (std::size_t vi = 0; vi < total; ++vi) {
        const double u = static_cast<double>(counter_hash(seg_key, vi) >> 11) * 0x1.0p-53;
        if (u >= modeldetail::kSegSampleRate) continue;
        const std::int64_t x = static_cast<std::int64_t>(vi) % vol.extent.nx;
        const std::int64_t y = (static_cast<std::int64_t>(vi) / vol.extent.nx) % vol.extent.ny;
        const std::int64_t z = static_cast<std::int64_t>(vi) / (vol.extent.nx * vol.extent.ny);
        voxel_features(vol, z, y, x, F, feat.data());
        double logits[4];
        double max_logit = -1.0e300;
        for (int c = 0; c < 4; ++c) {
          const double* row = w_seg.data() + static_cast<std::size_t>(c) * F;
          double acc = 0.0;
          for (int k = 0; k < F; ++k) acc += row[k] * feat[k];
          logits[c] = acc;
          max_logit = std::max(max_logit, acc);
        }
        double denom = 0.0;
        for (int c = 0; c < 4; ++c) denom += std::exp(logits[c] - max_logit);
        const int label = vol.labels[vi];
        out.seg += -(logits[label] - max_logit) + std::log(denom);
        for (int c = 0; c < 4; ++c) {
          const double p = std::exp(logits[c] - max_logit) / denom;
          const double d = p - (c == label ? 1.0 : 0.0);
          double* grow = g_seg.data() + static_cast<std::size_t>(c) * F;
          for (int k = 0; k < F; ++k) grow[k] += d * feat[k];
        }
        ++n_vox;
      }
    }
  }

  if (n_loc > 0) {
    out.loc /= static_cast<double>(n_loc);
    for (auto& v : g_loc) v /= static_cast<double>(n_loc);
  }
  if (n_pos > 0) {
    out.box /= static_cast<double>(n_pos);
    for (auto& v : g_box) v /= static_cast<double>(n_pos);
  }
  if (n_vox > 0) {
    out.seg /= static_cast<double>(n_vox);
    for (auto& v : g_seg) v /= static_cast<double>(n_vox);
  }
  out.total = out.loc + out.box + out.seg;
  if (!std::isfinite(out.total)) throw Error(Errc::NonFinite, "detector loss overflow");
  return out;
}

// ---------------------------------------------------------------------------
// Detection

/// Per-voxel predicted class map plus the winning-class probability.
struct SegPrediction {
  Extent extent;
  std::vector<std::uint8_t> argmax;
  std::vector<float> prob;  // softmax probability of the argmax class
};

inline SegPrediction predict_segmentation(const Volume& vol, const ParamStore& params) {
  const int F = feature_dim_of(params);
  const auto& w_seg = params.find(kGroupDetectorSeg)->values;
  SegPrediction seg;
  seg.extent = vol.extent;
  seg.argmax.resize(vol.labels.size());
  seg.prob.resize(vol.labels.size());
  std::vector<float> feat(static_cast<std::size_t>(F));
  std::size_t vi = 0;
  for (std::int64_t z = 0; z < vol.extent.nz; ++z) {
    for (std::int64_t y = 0; y < vol.extent.ny; ++y) {
      for (std::int64_t x = 0; x < vol.extent.nx; ++x, ++vi) {
        voxel_features(vol, z, y, x, F, feat.data());
        double logits[4];
        double max_logit = -1.0e300;
        int best = 0;
        for (int c = 0; c < 4; ++c) {
          const double* row = w_seg.data() + static_cast<std::size_t>(c) * F;
          double acc = 0.0;
          for (int k = 0; k < F; ++k) acc += row[k] * feat[k];
          logits[c] = acc;
          if (acc > max_logit) {
            max_logit = acc;
            best = c;
          }
        }
        double denom = 0.0;
        for (int c = 0; c < 4; ++c) denom += std::exp(logits[c] - max_logit);
        seg.argmax[vi] = static_cast<std::uint8_t>(best);
        seg.prob[vi] = static_cast<float>(1.0 / denom);  // exp(0)/denom for the argmax class
      }
    }
  }
  return seg;
}

/// Bounding box and mean probability of the largest connected component of
/// `cls` in a segmentation; absent when no voxel predicts the class.
inline std::optional<SceneObject> extract_singleton(const SegPrediction& seg, ObjectClass cls) {
  const std::uint8_t want = (cls == ObjectClass::VentricleSystem) ? kLabelVentricle : kLabelMidline;
  const Extent& e = seg.extent;
  std::vector<std::uint8_t> seen(seg.argmax.size(), 0);
  std::vector<std::size_t> best_component;
  std::vector<std::size_t> stack, current;
  for (std::size_t start = 0; start < seg.argmax.size(); ++start) {
    if (seg.argmax[start] != want || seen[start]) continue;
    current.clear();
    stack.assign(1, start);
    seen[start] = 1;
    while (!stack.empty()) {
      const std::size_t i = stack.back();
      stack.pop_back();
      current.push_back(i);
      const std::int64_t x = static_cast<std::int64_t>(i) % e.nx;
      const std::int64_t y = (static_cast<std::int64_t>(i) / e.nx) % e.ny;
      const std::int64_t z = static_cast<std::int64_t>(i) / (e.nx * e.ny);
      const std::int64_t dz[6] = {-1, 1, 0, 0, 0, 0};
      const std::int64_t dy[6] = {0, 0, -1, 1, 0, 0};
      const std::int64_t dx[6] = {0, 0, 0, 0, -1, 1};
      for (int d = 0; d < 6; ++d) {
        const std::int64_t z2 = z + dz[d], y2 = y + dy[d], x2 = x + dx[d];
        if (z2 < 0 || z2 >= e.nz || y2 < 0 || y2 >= e.ny || x2 < 0 || x2 >= e.nx) continue;
        const std::size_t j = static_cast<std::size_t>((z2 * e.ny + y2) * e.nx + x2);
        if (seg.argmax[j] != want || seen[j]) continue;
        seen[j] = 1;
        stack.push_back(j);
      }
    }
    if (current.size() > best_component.size()) best_component = current;
  }
  if (best_component.empty()) return std::nullopt;

  Box3D box{e.nz, e.ny, e.nx, 0, 0, 0};
  double prob_sum = 0.0;
  for (std::size_t i : best_component) {
    const std::int64_t x = static_cast<std::int64_t>(i) % e.nx;
    const std::int64_t y = (static_cast<std::int64_t>(i) / e.nx) % e.ny;
    const std::int64_t z = static_cast<std::int64_t>(i) / (e.nx * e.ny);
    box.z0 = std::min(box.z0, z);
    box.y0 = std::min(box.y0, y);
    box.x0 = std::min(box.x0, x);
    box.z1 = std::max(box.z1, z + 1);
    box.y1 = std::max(box.y1, y + 1);
    box.x1 = std::max(box.x1, x + 1);
    prob_sum += seg.prob[i];
  }
  SceneObject obj;
  obj.cls = cls;
  obj.box = box;
  obj.score = std::clamp(prob_sum / static_cast<double>(best_component.size()), 0.0, 1.0);
  return obj;
}

namespace modeldetail {

constexpr std::size_t kPreNmsCandidates = 128;
constexpr double kNmsIou = 0.3;
constexpr double kDeltaClamp = 1.0;

struct ScoredBox {
  Box3D box;
  double score;
  std::size_t anchor_index;
};

/// Greedy NMS, highest score first, anchor index breaking ties.
inline std::vector<ScoredBox> greedy_nms(std::vector<ScoredBox> boxes, double iou_thr) {
  std::sort(boxes.begin(), boxes.end(), [](const ScoredBox& a, const ScoredBox& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.anchor_index < b.anchor_index;
  });
  std::vector<ScoredBox> kept;
  for (const auto& cand : boxes) {
    bool suppressed = false;
    for (const auto& k : kept) {
      if (iou3d(cand.box, k.box) >= iou_thr) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(cand);
  }
  return kept;
}

}  // namespace modeldetail

/// Up to K objects: the ventricle and midline from segmentation components,
/// bleedings from scored, refined anchors after NMS. Object classes are
/// final here; nothing downstream reclassifies them.
inline std::vector<SceneObject> detect_objects(const Volume& vol, const ParamStore& params, int k_max) {
  if (k_max < 1) throw Error(Errc::InvalidConfig, "K must be >= 1");
  const int F = feature_dim_of(params);
  const auto& w_loc = params.find(kGroupDetectorLoc)->values;
  const auto& w_box = params.find(kGroupDetectorBox)->values;
  const AnchorSet& anchors = anchors_for(vol.extent);

  // Score every anchor, keep the best pre-NMS pool.
  std::vector<modeldetail::ScoredBox> pool;
  pool.reserve(anchors.anchors.size());
  std::vector<float> feat(static_cast<std::size_t>(F));
  for (std::size_t ai = 0; ai < anchors.anchors.size(); ++ai) {
    anchor_features(vol, anchors.anchors[ai], F, feat.data());
    double logit = w_loc[static_cast<std::size_t>(F)];
    for (int c = 0; c < F; ++c) logit += w_loc[static_cast<std::size_t>(c)] * feat[c];
    pool.push_back({anchors.anchors[ai], modeldetail::sigmoid(logit), ai});
  }
  std::sort(pool.begin(), pool.end(), [](const auto& a, const auto& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.anchor_index < b.anchor_index;
  });
  if (pool.size() > modeldetail::kPreNmsCandidates) pool.resize(modeldetail::kPreNmsCandidates);

  // Refine the surviving candidates.
  for (auto& cand : pool) {
    anchor_features(vol, anchors.anchors[cand.anchor_index], F, feat.data());
    const auto& f = feat;
    double d[6];
    for (int di = 0; di < 6; ++di) {
      const double* row = w_box.data() + static_cast<std::size_t>(di) * F;
      double acc = 0.0;
      for (int c = 0; c < F; ++c) acc += row[c] * f[c];
      d[di] = std::clamp(acc, -modeldetail::kDeltaClamp, modeldetail::kDeltaClamp);
    }
    const Box3D& a = cand.box;
    const double az = static_cast<double>(a.z1 - a.z0), ay = static_cast<double>(a.y1 - a.y0),
                 ax = static_cast<double>(a.x1 - a.x0);
    const double cz = a.center_z() + d[0] * az, cy = a.center_y() + d[1] * ay,
                 cx = a.center_x() + d[2] * ax;
    const double sz = az * std::exp(d[3]), sy = ay * std::exp(d[4]), sx = ax * std::exp(d[5]);
    Box3D b;
    b.z0 = std::llround(cz - sz / 2.0);
    b.y0 = std::llround(cy - sy / 2.0);
    b.x0 = std::llround(cx - sx / 2.0);
    b.z1 = std::max(b.z0 + 1, static_cast<std::int64_t>(std::llround(cz + sz / 2.0)));
    b.y1 = std::max(b.y0 + 1, static_cast<std::int64_t>(std::llround(cy + sy / 2.0)));
    b.x1 = std::max(b.x0 + 1, static_cast<std::int64_t>(std::llround(cx + sx / 2.0)));
    b.z0 = std::clamp<std::int64_t>(b.z0, 0, vol.extent.nz - 1);
    b.y0 = std::clamp<std::int64_t>(b.y0, 0, vol.extent.ny - 1);
    b.x0 = std::clamp<std::int64_t>(b.x0, 0, vol.extent.nx - 1);
    b.z1 = std::clamp<std::int64_t>(b.z1, b.z0 + 1, vol.extent.nz);
    b.y1 = std::clamp<std::int64_t>(b.y1, b.y0 + 1, vol.extent.ny);
    b.x1 = std::clamp<std::int64_t>(b.x1, b.x0 + 1, vol.extent.nx);
    cand.box = b;
  }
  const auto kept = modeldetail::greedy_nms(std::move(pool), modeldetail::kNmsIou);

  // Singletons come from segmentation.
  const SegPrediction seg = predict_segmentation(vol, params);
  std::vector<SceneObject> out;
  int next_id = 0;
  for (ObjectClass cls : {ObjectClass::VentricleSystem, ObjectClass::Midline}) {
    if (static_cast<int>(out.size()) >= k_max) break;
    if (auto obj = extract_singleton(seg, cls)) {
      obj->id = next_id++;
      out.push_back(*obj);
    }
  }
  for (const auto& cand : kept) {
    if (static_cast<int>(out.size()) >= k_max) break;
    SceneObject obj;
    obj.id = next_id++;
    obj.cls = ObjectClass::Bleeding;
    obj.box = cand.box;
    obj.score = cand.score;
    out.push_back(obj);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Relation prediction

/// All ordered (bleeding subject, singleton object) pairs, sorted by
/// (subject id, object id).
inline std::vector<std::pair<const SceneObject*, const SceneObject*>> select_pairs(
    const std::vector<SceneObject>& objects) {
  std::vector<std::pair<const SceneObject*, const SceneObject*>> out;
  for (const auto& s : objects) {
    if (s.cls != ObjectClass::Bleeding) continue;
    for (const auto& o : objects) {
      if (o.cls != ObjectClass::VentricleSystem && o.cls != ObjectClass::Midline) continue;
      if (s.id == o.id) continue;
      out.push_back({&s, &o});
    }
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
    return std::tie(a.first->id, a.second->id) < std::tie(b.first->id, b.second->id);
  });
  return out;
}

/// Geometric pair descriptor; deterministic in (volume, boxes, classes).
inline std::array<double, kPairFeatureDim> pair_features(const Volume& vol, const SceneObject& subj,
                                                         const SceneObject& obj) {
  std::array<double, kPairFeatureDim> f{};
  const Box3D& s = subj.box;
  const Box3D& o = obj.box;
  const double oz = static_cast<double>(o.z1 - o.z0), oy = static_cast<double>(o.y1 - o.y0),
               ox = static_cast<double>(o.x1 - o.x0);
  const double sz = static_cast<double>(s.z1 - s.z0), sy = static_cast<double>(s.y1 - s.y0),
               sx = static_cast<double>(s.x1 - s.x0);
  f[0] = (s.center_z() - o.center_z()) / oz;
  f[1] = (s.center_y() - o.center_y()) / oy;
  f[2] = (s.center_x() - o.center_x()) / ox;
  f[3] = std::log(sz / oz);
  f[4] = std::log(sy / oy);
  f[5] = std::log(sx / ox);
  f[6] = iou3d(s, o);
  f[7] = static_cast<double>(intersection_volume(s, o)) / static_cast<double>(s.volume());
  f[8] = obj.cls == ObjectClass::VentricleSystem ? 1.0 : 0.0;
  f[9] = obj.cls == ObjectClass::Midline ? 1.0 : 0.0;
  if (subj.subtype && *subj.subtype >= 1 && *subj.subtype <= kNumBleedingSubtypes) {
    f[9 + *subj.subtype] = 1.0;
  }
  double sum = 0.0;
  for (std::int64_t z = s.z0; z < s.z1; ++z) {
    for (std::int64_t y = s.y0; y < s.y1; ++y) {
      for (std::int64_t x = s.x0; x < s.x1; ++x) sum += vol.intensity(z, y, x);
    }
  }
  f[15] = sum / static_cast<double>(s.volume());
  return f;
}

/// Linear head over pair features plus (optionally) the log frequency
/// prior for the pair's class cell.
inline std::array<double, kNumPredicates> relation_forward(const ParamStore& params,
                                                           const Volume& vol,
                                                           const SceneObject& subj,
                                                           const SceneObject& obj,
                                                           bool bias_enabled) {
  const auto& w = params.find(kGroupRelationLinear)->values;
  const auto feats = pair_features(vol, subj, obj);
  std::array<double, kNumPredicates> logits{};
  for (int c = 0; c < kNumPredicates; ++c) {
    const double* row = w.data() + static_cast<std::size_t>(c) * (kPairFeatureDim + 1);
    double acc = row[kPairFeatureDim];
    for (int i = 0; i < kPairFeatureDim; ++i) acc += row[i] * feats[i];
    logits[static_cast<std::size_t>(c)] = acc;
  }
  if (bias_enabled) {
    const FrequencyBias bias = bias_from_params(params);
    const double* cell = bias.cell(subj.cls, obj.cls);
    for (int c = 0; c < kNumPredicates; ++c) {
      logits[static_cast<std::size_t>(c)] += std::log(cell[c] + kBiasEpsilon);
    }
  }
  return logits;
}

struct RelBatchItem {
  const Volume* volume = nullptr;
  std::vector<SceneObject> objects;  // detected (or ground-truth) objects
  const SceneGraph* gt = nullptr;
};

struct RelationLoss {
  double total = 0.0;
  std::size_t n_pairs = 0;
  GradStore grads;
};

/// Multi-label sigmoid BCE over the four predicate outputs. Pair labels
/// come from matching both endpoints to ground truth at IoU >= iou_thr with
/// class equality; unmatched pairs are labeled NoRelation. Only
/// relation.linear receives gradient; relation.bias is a statistics group.
inline RelationLoss relation_loss_and_grad(const ParamStore& params,
                                           const std::vector<RelBatchItem>& items,
                                           bool bias_enabled, double iou_thr = 0.3) {
  RelationLoss out;
  out.grads = GradStore::zeros_like(params);
  auto& g_rel = out.grads.find(kGroupRelationLinear)->values;

  for (const auto& item : items) {
    const auto pairs = select_pairs(item.objects);
    for (const auto& [subj, obj] : pairs) {
      std::array<double, kNumPredicates> label{};
      bool any = false;
      for (const auto& r : item.gt->relations) {
        const SceneObject* gs = item.gt->find_object(r.subject_id);
        const SceneObject* go = item.gt->find_object(r.object_id);
        if (gs == nullptr || go == nullptr) continue;
        if (gs->cls != subj->cls || go->cls != obj->cls) continue;
        if (iou3d(gs->box, subj->box) < iou_thr || iou3d(go->box, obj->box) < iou_thr) continue;
        label[static_cast<std::size_t>(r.predicate)] = 1.0;
        any = true;
      }
      if (!any) label[static_cast<std::size_t>(PredicateClass::NoRelation)] = 1.0;

      const auto feats = pair_features(*item.volume, *subj, *obj);
      const auto logits = relation_forward(params, *item.volume, *subj, *obj, bias_enabled);
      for (int c = 0; c < kNumPredicates; ++c) {
        out.total += modeldetail::softplus(logits[static_cast<std::size_t>(c)]) -
                     label[static_cast<std::size_t>(c)] * logits[static_cast<std::size_t>(c)];
        const double d = modeldetail::sigmoid(logits[static_cast<std::size_t>(c)]) -
                         label[static_cast<std::size_t>(c)];
        double* row = g_rel.data() + static_cast<std::size_t>(c) * (kPairFeatureDim + 1);
        for (int i = 0; i < kPairFeatureDim; ++i) row[i] += d * feats[i];
        row[kPairFeatureDim] += d;
      }
      ++out.n_pairs;
    }
  }
  if (out.n_pairs > 0) {
    out.total /= static_cast<double>(out.n_pairs);
    for (auto& v : g_rel) v /= static_cast<double>(out.n_pairs);
  }
  if (!std::isfinite(out.total)) throw Error(Errc::NonFinite, "relation loss overflow");
  return out;
}

/// Predicate frequency table over the scenes' ground truth: for every
/// schema-valid object pair, count realized predicates, or NoRelation when
/// the pair carries no triplet. Zero-count cells become uniform.
inline FrequencyBias compute_frequency_stats(const std::vector<const SceneGraph*>& scenes) {
  if (scenes.empty()) throw Error(Errc::EmptyDataset, "no scenes with relations");
  std::array<double, kNumObjectClasses * kNumObjectClasses * kNumPredicates> counts{};
  std::uint64_t total_pairs = 0;
  for (const SceneGraph* g : scenes) {
    for (const auto& s : g->objects) {
      for (const auto& o : g->objects) {
        if (s.id == o.id) continue;
        if (allowed_predicates(s.cls, o.cls).empty()) continue;
        double* cell = counts.data() + FrequencyBias::cell_index(s.cls, o.cls);
        bool any = false;
        for (const auto& r : g->relations) {
          if (r.subject_id == s.id && r.object_id == o.id) {
            cell[static_cast<std::size_t>(r.predicate)] += 1.0;
            any = true;
          }
        }
        if (!any) cell[static_cast<std::size_t>(PredicateClass::NoRelation)] += 1.0;
        ++total_pairs;
      }
    }
  }
  FrequencyBias bias;
  bias.count = total_pairs;
  for (int s = 0; s < kNumObjectClasses; ++s) {
    for (int o = 0; o < kNumObjectClasses; ++o) {
      const std::size_t idx = FrequencyBias::cell_index(static_cast<ObjectClass>(s),
                                                        static_cast<ObjectClass>(o));
      double sum = 0.0;
      for (int c = 0; c < kNumPredicates; ++c) sum += counts[idx + static_cast<std::size_t>(c)];
      for (int c = 0; c < kNumPredicates; ++c) {
        bias.table[idx + static_cast<std::size_t>(c)] =
            sum > 0.0 ? counts[idx + static_cast<std::size_t>(c)] / sum : 1.0 / kNumPredicates;
      }
    }
  }
  return bias;
}

}  // namespace fedgraph
