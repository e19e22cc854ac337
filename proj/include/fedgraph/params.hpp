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
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <set>
#include <string>
#include <vector>

#include "fedgraph/errors.hpp"

namespace fedgraph {

/// One named, shaped block of 64-bit parameters.
struct ParamGroup {
  std::string name;
  std::vector<std::uint32_t> shape;
  std::vector<double> values;
  bool frozen = false;

  std::size_t size() const { return values.size(); }
};

/// Ordered collection of parameter groups plus a round counter.
/// Values are immutable by convention: operations return new stores.
struct ParamStore {
  std::vector<ParamGroup> groups;  // iteration order == insertion order
  std::uint32_t version = 0;

  const ParamGroup* find(const std::string& name) const {
    for (const auto& g : groups) {
      if (g.name == name) return &g;
    }
    return nullptr;
  }
  ParamGroup* find(const std::string& name) {
    for (auto& g : groups) {
      if (g.name == name) return &g;
    }
    return nullptr;
  }

  void add(std::string name, std::vector<std::uint32_t> shape, std::vector<double> values,
           bool frozen = false) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    if (n != values.size()) {
      throw Error(Errc::IncompatibleLayout,
                  "group '" + name + "' has " + std::to_string(values.size()) +
                      " values for shape product " + std::to_string(n));
    }
    if (find(name) != nullptr) {
      throw Error(Errc::IncompatibleLayout, "duplicate group name '" + name + "'");
    }
    groups.push_back(ParamGroup{std::move(name), std::move(shape), std::move(values), frozen});
  }
};

/// Gradient buffer mirroring a ParamStore's layout (no freeze flags).
struct GradStore {
  struct Group {
    std::string name;
    std::vector<std::uint32_t> shape;
    std::vector<double> values;
  };
  std::vector<Group> groups;

  static GradStore zeros_like(const ParamStore& store) {
    GradStore g;
    g.groups.reserve(store.groups.size());
    for (const auto& pg : store.groups) {
      g.groups.push_back({pg.name, pg.shape, std::vector<double>(pg.values.size(), 0.0)});
    }
    return g;
  }

  Group* find(const std::string& name) {
    for (auto& g : groups) {
      if (g.name == name) return &g;
    }
    return nullptr;
  }
  const Group* find(const std::string& name) const {
    for (const auto& g : groups) {
      if (g.name == name) return &g;
    }
    return nullptr;
  }
};

namespace detail {

inline bool same_layout(const ParamGroup& a, const ParamGroup& b, bool check_frozen) {
  return a.name == b.name && a.shape == b.shape && (!check_frozen || a.frozen == b.frozen);
}

inline void require_compatible(const ParamStore& a, const ParamStore& b) {
  if (a.groups.size() != b.groups.size()) {
    throw Error(Errc::IncompatibleLayout, "group count mismatch");
  }
  for (std::size_t i = 0; i < a.groups.size(); ++i) {
    if (!same_layout(a.groups[i], b.groups[i], /*check_frozen=*/true)) {
      throw Error(Errc::IncompatibleLayout, "group '" + a.groups[i].name + "' differs");
    }
  }
}

inline void require_compatible(const ParamStore& store, const GradStore& grads) {
  if (store.groups.size() != grads.groups.size()) {
    throw Error(Errc::IncompatibleLayout, "group count mismatch");
  }
  for (std::size_t i = 0; i < store.groups.size(); ++i) {
    const auto& p = store.groups[i];
    const auto& g = grads.groups[i];
    if (p.name != g.name || p.shape != g.shape) {
      throw Error(Errc::IncompatibleLayout, "group '" + p.name + "' differs");
    }
  }
}

/// Monotonic total order on doubles via their bit patterns; used to give
/// floating-point reductions a canonical, permutation-invariant order.
inline std::uint64_t sortable_bits(double v) {
  std::uint64_t b = std::bit_cast<std::uint64_t>(v);
  return (b & 0x8000000000000000ULL) ? ~b : (b | 0x8000000000000000ULL);
}

inline double canonical_sum(std::vector<double>& terms) {
  std::sort(terms.begin(), terms.end(),
            [](double a, double b) { return sortable_bits(a) < sortable_bits(b); });
  double s = 0.0;
  for (double t : terms) s += t;
  return s;
}

}  // namespace detail

/// v - lr*g elementwise on non-frozen groups; frozen groups pass through
/// bit-identically. version is untouched.
inline ParamStore sgd_step(const ParamStore& store, const GradStore& grads, double lr) {
  if (!(lr >= 0.0)) throw Error(Errc::InvalidConfig, "learning rate must be non-negative");
  detail::require_compatible(store, grads);
  ParamStore out = store;
  for (std::size_t i = 0; i < out.groups.size(); ++i) {
    auto& g = out.groups[i];
    if (g.frozen) continue;
    const auto& dv = grads.groups[i].values;
    for (std::size_t k = 0; k < g.values.size(); ++k) {
      g.values[k] -= lr * dv[k];
      if (!std::isfinite(g.values[k])) {
        throw Error(Errc::NonFinite, "group '" + g.name + "' element " + std::to_string(k));
      }
    }
  }
  return out;
}

/// Mark the named groups frozen. Values are untouched. Idempotent.
inline ParamStore freeze_groups(const ParamStore& store, const std::set<std::string>& names) {
  for (const auto& n : names) {
    if (store.find(n) == nullptr) throw Error(Errc::UnknownGroup, "no group named '" + n + "'");
  }
  ParamStore out = store;
  for (auto& g : out.groups) {
    if (names.count(g.name)) g.frozen = true;
  }
  return out;
}

/// Names of groups matching a "prefix.*" filter (prefix plus a dot).
inline std::set<std::string> groups_with_prefix(const ParamStore& store, const std::string& prefix) {
  std::set<std::string> out;
  for (const auto& g : store.groups) {
    if (g.name.rfind(prefix + ".", 0) == 0) out.insert(g.name);
  }
  return out;
}

/// Weighted mean of compatible stores.
///
/// Reduction order is canonical (terms sorted by bit pattern before
/// summation), so permuting the (store, weight) pairs yields bit-identical
/// results. A single input store is returned verbatim: the mean of one store
/// is that store, and going through (w*v)/w would perturb values. Frozen
/// groups are copied bit-identically from the first store. version is the
/// max of the inputs' versions plus one.
inline ParamStore weighted_mean(const std::vector<ParamStore>& stores,
                                const std::vector<double>& weights) {
  if (stores.empty()) throw Error(Errc::EmptyInput, "no stores to average");
  if (stores.size() != weights.size()) {
    throw Error(Errc::IncompatibleLayout, "weight count != store count");
  }
  for (double w : weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) {
      throw Error(Errc::InvalidConfig, "weights must be finite and non-negative");
    }
  }
  for (std::size_t i = 1; i < stores.size(); ++i) {
    detail::require_compatible(stores[0], stores[i]);
  }

  std::uint32_t version = 0;
  for (const auto& s : stores) version = std::max(version, s.version);
  version += 1;

  ParamStore out = stores[0];
  out.version = version;
  if (stores.size() == 1) {
    if (weights[0] <= 0.0) throw Error(Errc::ZeroWeightSum, "weights sum to zero");
    return out;
  }

  std::vector<double> wsorted = weights;
  const double wsum = detail::canonical_sum(wsorted);
  if (!(wsum > 0.0)) throw Error(Errc::ZeroWeightSum, "weights sum to zero");

  std::vector<double> terms(stores.size());
  for (std::size_t gi = 0; gi < out.groups.size(); ++gi) {
    auto& g = out.groups[gi];
    if (g.frozen) continue;  // frozen values pass through from stores[0]
    for (std::size_t k = 0; k < g.values.size(); ++k) {
      for (std::size_t si = 0; si < stores.size(); ++si) {
        terms[si] = weights[si] * stores[si].groups[gi].values[k];
      }
      g.values[k] = detail::canonical_sum(terms) / wsum;
      if (!std::isfinite(g.values[k])) {
        throw Error(Errc::NonFinite, "mean of group '" + g.name + "' element " + std::to_string(k));
      }
    }
  }
  return out;
}

/// Equality of layout, freeze flags and values (bitwise). version is
/// metadata and deliberately excluded.
inline bool values_bitwise_equal(const ParamStore& a, const ParamStore& b) {
  if (a.groups.size() != b.groups.size()) return false;
  for (std::size_t i = 0; i < a.groups.size(); ++i) {
    const auto& ga = a.groups[i];
    const auto& gb = b.groups[i];
    if (!detail::same_layout(ga, gb, /*check_frozen=*/true)) return false;
    if (ga.values.size() != gb.values.size()) return false;
    if (!ga.values.empty() &&
        std::memcmp(ga.values.data(), gb.values.data(), ga.values.size() * sizeof(double)) != 0) {
      return false;
    }
  }
  return true;
}

/// FNV-1a hash over the named groups' names and raw value bytes.
/// Used to pin down frozen groups across protocol rounds.
inline std::uint64_t hash_groups(const ParamStore& store, const std::set<std::string>& names) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  auto feed = [&h](const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= p[i];
      h *= 0x100000001B3ULL;
    }
  };
  for (const auto& g : store.groups) {
    if (!names.count(g.name)) continue;
    feed(g.name.data(), g.name.size());
    feed(g.values.data(), g.values.size() * sizeof(double));
  }
  return h;
}

}  // namespace fedgraph
