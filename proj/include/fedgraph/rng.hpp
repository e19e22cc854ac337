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

#include <cmath>
#include <cstdint>
#include <string_view>

namespace fedgraph {

// Counter-based RNG: every draw is a pure function of (key, counter), so
// streams can be split per (seed, client, scene, step) and consumed in any
// order without coupling results to execution order.

constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

/// SplitMix64 finalizer applied to an arbitrary 64-bit state.
inline std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// Fold one word into a stream key.
inline std::uint64_t fold(std::uint64_t key, std::uint64_t word) {
  return mix64(key + kGolden + word);
}

/// Fold a string (FNV-1a, then mixed) into a stream key.
inline std::uint64_t fold(std::uint64_t key, std::string_view s) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return fold(key, h);
}

/// The i-th value of the stream identified by `key`.
inline std::uint64_t counter_hash(std::uint64_t key, std::uint64_t counter) {
  return mix64(key + (counter + 1) * kGolden);
}

/// Sequential view over one keyed stream.
class RngStream {
 public:
  explicit RngStream(std::uint64_t key) : key_(key) {}

  std::uint64_t next_u64() { return counter_hash(key_, counter_++); }

  /// Uniform in [0, 1) with 53 random bits.
  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform integer in [0, n). n must be > 0.
  std::uint64_t next_below(std::uint64_t n) {
    return static_cast<std::uint64_t>(
        (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

  /// Uniform integer in [lo, hi] inclusive.
  std::int64_t next_in(std::int64_t lo, std::int64_t hi) {
    return lo + static_cast<std::int64_t>(next_below(static_cast<std::uint64_t>(hi - lo + 1)));
  }

  /// Standard normal via Box-Muller; consumes two uniforms per pair.
  double next_gaussian() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = next_double();
    double u2 = next_double();
    // Avoid log(0).
    if (u1 < 0x1.0p-60) u1 = 0x1.0p-60;
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  /// Sample an index from a categorical distribution given as weights.
  std::size_t next_categorical(const double* probs, std::size_t n) {
    double u = next_double();
    double acc = 0.0;
    for (std::size_t i = 0; i + 1 < n; ++i) {
      acc += probs[i];
      if (u < acc) return i;
    }
    return n - 1;
  }

  std::uint64_t key() const { return key_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace fedgraph
