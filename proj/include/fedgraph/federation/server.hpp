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

// Server side of the two-phase protocol. Everything visible here is a
// ParamStore or a loss scalar; client data never reaches this layer.

#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "fedgraph/errors.hpp"
#include "fedgraph/federation/transport.hpp"
#include "fedgraph/params.hpp"

namespace fedgraph {

enum class AggregatorKind : std::uint8_t { FedAvg = 0, FedSGD = 1 };

struct AggregatorConfig {
  AggregatorKind kind = AggregatorKind::FedAvg;
  double server_lr = 1.0;  // FedSGD only
};

enum class BiasMode : std::uint8_t { Federated = 0, Disabled = 1, Global = 2 };

struct RoundConfig {
  int n_clients = 4;
  int T_obj = 640;
  int T_rel = 40;
  int E_obj = 25;
  int E_rel = 5;
  double eta_obj = 0.05;
  double eta_rel = 0.5;
  int K = 8;
  int batch_obj = 1;
  int batch_rel = 13;
  AggregatorConfig aggregator;
  BiasMode bias_mode = BiasMode::Federated;

  void validate() const {
    if (n_clients < 1 || T_obj < 1 || T_rel < 1 || E_obj < 1 || E_rel < 1 || K < 1 ||
        batch_obj < 1 || batch_rel < 1) {
      throw Error(Errc::InvalidConfig, "all round counts must be >= 1");
    }
    if (!(eta_obj >= 0.0 && eta_rel >= 0.0)) {
      throw Error(Errc::InvalidConfig, "learning rates must be non-negative");
    }
  }
};

enum class ServerPhase : std::uint8_t { ObjDetection = 0, StatsInit = 1, RelPrediction = 2, Done = 3 };

struct ServerState {
  ServerPhase phase = ServerPhase::ObjDetection;
  std::uint32_t t = 0;
  ParamStore global;
  RoundConfig config;
  std::vector<double> history;  // per client step, in (round, client, step) order
};

/// One aggregation step. FedAvg is the equal-weight mean; FedSGD applies a
/// server-side step on the mean client pseudo-gradient. server_lr == 1
/// takes the FedAvg path so the algebraic identity holds bit-for-bit.
/// Results must arrive sorted by client id; frozen groups pass through from
/// the global store bit-identically.
inline ParamStore aggregate(const AggregatorConfig& cfg, const ParamStore& w_global,
                            const std::vector<ParamStore>& results) {
  if (results.empty()) throw Error(Errc::EmptyInput, "no client results");
  if (cfg.kind == AggregatorKind::FedAvg || cfg.server_lr == 1.0) {
    return weighted_mean(results, std::vector<double>(results.size(), 1.0));
  }
  for (const auto& r : results) detail::require_compatible(w_global, r);
  std::uint32_t version = w_global.version;
  for (const auto& r : results) version = std::max(version, r.version);
  ParamStore out = w_global;
  out.version = version + 1;
  std::vector<double> terms(results.size());
  for (std::size_t gi = 0; gi < out.groups.size(); ++gi) {
    auto& g = out.groups[gi];
    if (g.frozen) continue;
    for (std::size_t k = 0; k < g.values.size(); ++k) {
      for (std::size_t ri = 0; ri < results.size(); ++ri) {
        terms[ri] = w_global.groups[gi].values[k] - results[ri].groups[gi].values[k];
      }
      const double mean_delta = detail::canonical_sum(terms) / static_cast<double>(results.size());
      g.values[k] = w_global.groups[gi].values[k] - cfg.server_lr * mean_delta;
      if (!std::isfinite(g.values[k])) {
        throw Error(Errc::NonFinite, "aggregate produced a non-finite value");
      }
    }
  }
  return out;
}

/// Merge the clients' relation statistics: equal-weight mean of the bias
/// tables, each cell renormalized to sum 1. Every other group must be
/// bit-identical across the inputs (they are broadcast copies). A single
/// reporting client passes through verbatim.
inline ParamStore aggregate_stats(const std::vector<ParamStore>& stores) {
  if (stores.empty()) throw Error(Errc::EmptyInput, "no stats to merge");
  const std::string bias_name = "relation.bias";
  if (stores[0].find(bias_name) == nullptr) {
    throw Error(Errc::UnknownGroup, "stats store lacks relation.bias");
  }
  std::uint32_t version = 0;
  for (const auto& s : stores) version = std::max(version, s.version);

  ParamStore out = stores[0];
  out.version = version + 1;
  if (stores.size() == 1) return out;

  for (std::size_t si = 1; si < stores.size(); ++si) {
    detail::require_compatible(stores[0], stores[si]);
    for (std::size_t gi = 0; gi < stores[0].groups.size(); ++gi) {
      if (stores[0].groups[gi].name == bias_name) continue;
      if (std::memcmp(stores[0].groups[gi].values.data(), stores[si].groups[gi].values.data(),
                      stores[0].groups[gi].values.size() * sizeof(double)) != 0) {
        throw Error(Errc::AssertionFailure,
                    "non-bias group '" + stores[0].groups[gi].name + "' differs across clients");
      }
    }
  }

  ParamGroup* bias = out.find(bias_name);
  std::vector<double> terms(stores.size());
  for (std::size_t k = 0; k < bias->values.size(); ++k) {
    for (std::size_t si = 0; si < stores.size(); ++si) {
      terms[si] = stores[si].find(bias_name)->values[k];
    }
    bias->values[k] = detail::canonical_sum(terms) / static_cast<double>(stores.size());
  }
  // renormalize each 4-entry predicate cell
  for (std::size_t base = 0; base + 4 <= bias->values.size(); base += 4) {
    double sum = 0.0;
    for (std::size_t c = 0; c < 4; ++c) sum += bias->values[base + c];
    if (sum > 0.0) {
      for (std::size_t c = 0; c < 4; ++c) bias->values[base + c] /= sum;
    }
  }
  return out;
}

namespace serverdetail {

inline std::vector<ClientReply> round_with_retry(Transport& transport, MsgType type,
                                                 std::uint32_t round, const ParamStore& store) {
  for (int attempt = 0; attempt < 2; ++attempt) {
    transport.broadcast(type, round, store);
    auto replies = transport.collect(round);
    bool all_ok = replies.size() == transport.n_clients();
    for (const auto& r : replies) all_ok = all_ok && r.ok();
    if (all_ok) return replies;
    if (attempt == 1) {
      for (const auto& r : replies) {
        if (!r.ok()) {
          const bool timeout = r.error.find("ClientTimeout") != std::string::npos;
          throw Error(timeout ? Errc::ClientTimeout : Errc::ClientError,
                      "client " + std::to_string(r.client_id) + ", round " +
                          std::to_string(round) + ": " + r.error);
        }
      }
      throw Error(Errc::ClientError, "missing replies for round " + std::to_string(round));
    }
  }
  return {};
}

}  // namespace serverdetail

/// The full two-phase training protocol: T_obj detection rounds, detector
/// freeze, one statistics round (unless the bias is disabled), then T_rel
/// relation rounds. The frozen detector's hash is checked on every client
/// result and every aggregate; any drift fails the run.
inline ParamStore run_training(ServerState& state, Transport& transport) {
  state.config.validate();
  if (state.phase != ServerPhase::ObjDetection || state.t != 0) {
    throw Error(Errc::InvalidConfig, "run_training needs a fresh server state");
  }
  if (state.config.bias_mode == BiasMode::Global) {
    throw Error(Errc::InvalidConfig, "global bias statistics are a centralized baseline mode");
  }
  const auto t_obj = static_cast<std::uint32_t>(state.config.T_obj);
  const auto t_rel = static_cast<std::uint32_t>(state.config.T_rel);

  auto append_losses = [&state](const std::vector<ClientReply>& replies) {
    for (const auto& r : replies) {
      state.history.insert(state.history.end(), r.losses.begin(), r.losses.end());
    }
  };

  for (std::uint32_t t = 0; t < t_obj; ++t) {
    auto replies = serverdetail::round_with_retry(transport, MsgType::WEIGHTS, t, state.global);
    std::vector<ParamStore> results;
    for (auto& r : replies) results.push_back(std::move(r.store));
    append_losses(replies);
    state.global = aggregate(state.config.aggregator, state.global, results);
    state.t = t + 1;
  }

  const std::set<std::string> detector_groups = groups_with_prefix(state.global, "detector");
  state.global = freeze_groups(state.global, detector_groups);
  const std::uint64_t freeze_hash = hash_groups(state.global, detector_groups);
  auto check_frozen = [&](const ParamStore& store, const char* where) {
    if (hash_groups(store, detector_groups) != freeze_hash) {
      throw Error(Errc::FreezeViolation,
                  std::string("frozen detector groups changed (") + where + ")");
    }
  };

  state.phase = ServerPhase::StatsInit;
  if (state.config.bias_mode == BiasMode::Federated) {
    auto replies = serverdetail::round_with_retry(transport, MsgType::STATS_REQ, t_obj, state.global);
    std::vector<ParamStore> reporting;
    for (auto& r : replies) {
      if (r.has_store) {
        check_frozen(r.store, "stats");
        reporting.push_back(std::move(r.store));
      }
    }
    // clients without relation data contribute nothing to the mean
    if (!reporting.empty()) {
      state.global = aggregate_stats(reporting);
      check_frozen(state.global, "stats aggregate");
    }
  }

  state.phase = ServerPhase::RelPrediction;
  for (std::uint32_t t = t_obj; t < t_obj + t_rel; ++t) {
    auto replies = serverdetail::round_with_retry(transport, MsgType::WEIGHTS, t, state.global);
    std::vector<ParamStore> results;
    for (auto& r : replies) {
      check_frozen(r.store, "client result");
      results.push_back(std::move(r.store));
    }
    append_losses(replies);
    state.global = aggregate(state.config.aggregator, state.global, results);
    check_frozen(state.global, "aggregate");
    state.t = t + 1;
  }

  state.phase = ServerPhase::Done;
  transport.shutdown();
  return state.global;
}

}  // namespace fedgraph
