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

// Experiment front-end shared by the CLI and the acceptance suite: the four
// training regimes, dataset/model/report files, and table rendering.

#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "fedgraph/errors.hpp"
#include "fedgraph/federation/client.hpp"
#include "fedgraph/federation/server.hpp"
#include "fedgraph/metrics.hpp"
#include "fedgraph/models.hpp"
#include "fedgraph/scene_json.hpp"
#include "fedgraph/synth.hpp"
#include "fedgraph/wire.hpp"

namespace fedgraph {

constexpr const char* kCodeVersion = "fedgraph-0.1.0";

enum class Regime : std::uint8_t { Single = 0, CentralAll = 1, Fed = 2 };

inline const char* regime_name(Regime r) {
  switch (r) {
    case Regime::Single: return "single";
    case Regime::CentralAll: return "central_all";
    case Regime::Fed: return "fed";
  }
  return "?";
}

struct ExperimentConfig {
  Regime regime = Regime::Fed;
  std::vector<std::string> cohorts = {"A", "B", "C", "D"};
  RoundConfig round;
  int n_scenes = 200;
  int feature_dim = 24;
  int repeats = 5;
  std::uint64_t seed = 1;
  std::string output_dir = "out";
  std::string transport = "inproc";  // inproc | tcp

  void validate() const {
    round.validate();
    if (repeats < 1) throw Error(Errc::InvalidConfig, "repeats must be >= 1");
    if (n_scenes < 1) throw Error(Errc::InvalidConfig, "n_scenes must be >= 1");
    if (cohorts.empty()) throw Error(Errc::InvalidConfig, "at least one cohort required");
    if (regime == Regime::Single && cohorts.size() != 1) {
      throw Error(Errc::InvalidConfig, "single regime requires exactly one cohort");
    }
    if (transport != "inproc" && transport != "tcp") {
      throw Error(Errc::InvalidConfig, "transport must be inproc or tcp");
    }
  }
};

/// Desk-scale schedule: the paper-style round lengths with shortened totals
/// so the full suite runs in minutes.
inline RoundConfig desk_round_config() {
  RoundConfig cfg;
  cfg.T_obj = 80;  // 2000 detection steps at E_obj=25
  cfg.T_rel = 40;  // 200 relation steps at E_rel=5
  cfg.eta_obj = 0.1;
  cfg.eta_rel = 0.5;
  return cfg;
}

// ---------------------------------------------------------------------------
// Config JSON (field names mirror the structs; FEDGRAPH_SEED overrides seed)

inline nlohmann::ordered_json experiment_config_to_json(const ExperimentConfig& cfg) {
  nlohmann::ordered_json j;
  j["regime"] = regime_name(cfg.regime);
  j["cohorts"] = cfg.cohorts;
  j["n_clients"] = cfg.round.n_clients;
  j["T_obj"] = cfg.round.T_obj;
  j["T_rel"] = cfg.round.T_rel;
  j["E_obj"] = cfg.round.E_obj;
  j["E_rel"] = cfg.round.E_rel;
  j["eta_obj"] = cfg.round.eta_obj;
  j["eta_rel"] = cfg.round.eta_rel;
  j["K"] = cfg.round.K;
  j["batch_obj"] = cfg.round.batch_obj;
  j["batch_rel"] = cfg.round.batch_rel;
  j["aggregator"] = cfg.round.aggregator.kind == AggregatorKind::FedAvg ? "fedavg" : "fedsgd";
  j["server_lr"] = cfg.round.aggregator.server_lr;
  j["bias_mode"] = cfg.round.bias_mode == BiasMode::Federated
                       ? "federated"
                       : (cfg.round.bias_mode == BiasMode::Disabled ? "disabled" : "global");
  j["n_scenes"] = cfg.n_scenes;
  j["feature_dim"] = cfg.feature_dim;
  j["repeats"] = cfg.repeats;
  j["seed"] = cfg.seed;
  j["output_dir"] = cfg.output_dir;
  j["transport"] = cfg.transport;
  return j;
}

inline ExperimentConfig experiment_config_from_json(const nlohmann::json& j) {
  ExperimentConfig cfg;
  cfg.round = desk_round_config();
  try {
    if (j.contains("schedule")) {
      const std::string s = j.at("schedule").get<std::string>();
      if (s == "paper") {
        cfg.round = RoundConfig{};  // paper-faithful defaults
        cfg.round.eta_obj = desk_round_config().eta_obj;
        cfg.round.eta_rel = desk_round_config().eta_rel;
      } else if (s != "desk") {
        throw Error(Errc::InvalidConfig, "schedule must be desk or paper");
      }
    }
    if (j.contains("regime")) {
      const std::string r = j.at("regime").get<std::string>();
      if (r == "single") cfg.regime = Regime::Single;
      else if (r == "central_all") cfg.regime = Regime::CentralAll;
      else if (r == "fed") cfg.regime = Regime::Fed;
      else throw Error(Errc::InvalidConfig, "unknown regime '" + r + "'");
    }
    if (j.contains("cohorts")) cfg.cohorts = j.at("cohorts").get<std::vector<std::string>>();
    if (j.contains("n_clients")) cfg.round.n_clients = j.at("n_clients").get<int>();
    if (j.contains("T_obj")) cfg.round.T_obj = j.at("T_obj").get<int>();
    if (j.contains("T_rel")) cfg.round.T_rel = j.at("T_rel").get<int>();
    if (j.contains("E_obj")) cfg.round.E_obj = j.at("E_obj").get<int>();
    if (j.contains("E_rel")) cfg.round.E_rel = j.at("E_rel").get<int>();
    if (j.contains("eta_obj")) cfg.round.eta_obj = j.at("eta_obj").get<double>();
    if (j.contains("eta_rel")) cfg.round.eta_rel = j.at("eta_rel").get<double>();
    if (j.contains("K")) cfg.round.K = j.at("K").get<int>();
    if (j.contains("batch_obj")) cfg.round.batch_obj = j.at("batch_obj").get<int>();
    if (j.contains("batch_rel")) cfg.round.batch_rel = j.at("batch_rel").get<int>();
    if (j.contains("aggregator")) {
      const std::string a = j.at("aggregator").get<std::string>();
      if (a == "fedavg") cfg.round.aggregator.kind = AggregatorKind::FedAvg;
      else if (a == "fedsgd") cfg.round.aggregator.kind = AggregatorKind::FedSGD;
      else throw Error(Errc::InvalidConfig, "unknown aggregator '" + a + "'");
    }
    if (j.contains("server_lr")) cfg.round.aggregator.server_lr = j.at("server_lr").get<double>();
    if (j.contains("bias_mode")) {
      const std::string b = j.at("bias_mode").get<std::string>();
      if (b == "federated") cfg.round.bias_mode = BiasMode::Federated;
      else if (b == "disabled") cfg.round.bias_mode = BiasMode::Disabled;
      else if (b == "global") cfg.round.bias_mode = BiasMode::Global;
      else throw Error(Errc::InvalidConfig, "unknown bias_mode '" + b + "'");
    }
    if (j.contains("n_scenes")) cfg.n_scenes = j.at("n_scenes").get<int>();
    if (j.contains("feature_dim")) cfg.feature_dim = j.at("feature_dim").get<int>();
    if (j.contains("repeats")) cfg.repeats = j.at("repeats").get<int>();
    if (j.contains("seed")) cfg.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("output_dir")) cfg.output_dir = j.at("output_dir").get<std::string>();
    if (j.contains("transport")) cfg.transport = j.at("transport").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::InvalidConfig, std::string("bad config: ") + e.what());
  }
  if (const char* env = std::getenv("FEDGRAPH_SEED")) {
    cfg.seed = std::strtoull(env, nullptr, 10);
  }
  return cfg;
}

inline std::uint64_t config_hash(const ExperimentConfig& cfg) {
  const std::string text = experiment_config_to_json(cfg).dump();
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return h;
}

// ---------------------------------------------------------------------------
// Cohort construction

inline CohortSpec preset_by_name(const std::string& name, std::uint64_t seed_base) {
  for (auto& spec : preset_cohorts(seed_base)) {
    if (spec.client_id == name) return spec;
  }
  throw Error(Errc::InvalidConfig, "unknown preset cohort '" + name + "'");
}

/// Data for one run: cohorts are regenerated per run seed, so repeated runs
/// draw fresh datasets while staying bit-reproducible.
inline std::vector<Dataset> build_cohorts(const std::vector<std::string>& names, int n_scenes,
                                          std::uint64_t run_seed) {
  std::vector<Dataset> out;
  out.reserve(names.size());
  for (const auto& name : names) {
    CohortSpec spec = preset_by_name(name, fold(run_seed, "data"));
    out.push_back(generate_cohort(spec, static_cast<std::size_t>(n_scenes)));
  }
  return out;
}

inline Dataset pool_datasets(const std::vector<const Dataset*>& sources) {
  Dataset out;
  for (const Dataset* src : sources) {
    for (std::size_t i = 0; i < src->scenes.size(); ++i) {
      out.scenes.push_back(src->scenes[i]);
      out.split.push_back(src->split[i]);
      out.obj_indices.push_back(out.scenes.size() - 1);
      if (!src->scenes[i].graph.relations.empty()) out.rel_indices.push_back(out.scenes.size() - 1);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training regimes

struct TrainOutcome {
  ParamStore store;
  std::vector<double> loss_history;  // one entry per client step
};

/// The centralized step loop: identical client-side math, no aggregation.
/// With one cohort this is the "single" regime; with several, "central_all"
/// (pooled scenes, so sampling weights follow dataset length).
inline TrainOutcome train_centralized(const std::vector<const Dataset*>& sources,
                                      const RoundConfig& cfg, int feature_dim,
                                      std::uint64_t run_seed,
                                      const std::vector<const Dataset*>& bias_sources = {}) {
  cfg.validate();
  const Dataset pooled = pool_datasets(sources);
  ClientHandle client = make_client(0, pooled, run_seed);
  TrainOutcome out;
  out.store = make_initial_params(feature_dim, run_seed);
  for (int t = 0; t < cfg.T_obj; ++t) {
    out.store = client_update_obj_detec(
        client, out.store, cfg, static_cast<std::uint64_t>(t) * static_cast<std::uint64_t>(cfg.E_obj),
        &out.loss_history);
  }
  out.store = freeze_groups(out.store, groups_with_prefix(out.store, "detector"));
  if (cfg.bias_mode == BiasMode::Federated) {
    try {
      out.store = client_stats_update(client, out.store);
    } catch (const Error& e) {
      if (e.code() != Errc::EmptyDataset) throw;
      // no relation scenes; keep the uniform prior
    }
  } else if (cfg.bias_mode == BiasMode::Global) {
    std::vector<const SceneGraph*> graphs;
    const auto& pool = bias_sources.empty() ? sources : bias_sources;
    for (const Dataset* ds : pool) {
      for (std::size_t idx : ds->indices_of(Split::Train, /*relations_only=*/true)) {
        graphs.push_back(&ds->scenes[idx].graph);
      }
    }
    if (!graphs.empty()) bias_into_params(out.store, compute_frequency_stats(graphs));
  }
  for (int t = 0; t < cfg.T_rel; ++t) {
    out.store = client_update_rel_pred(
        client, out.store, cfg, static_cast<std::uint64_t>(t) * static_cast<std::uint64_t>(cfg.E_rel),
        &out.loss_history);
  }
  return out;
}

/// Federated training over one client per cohort, in-process transport.
inline TrainOutcome train_federated(const std::vector<const Dataset*>& cohorts, RoundConfig cfg,
                                    int feature_dim, std::uint64_t run_seed) {
  cfg.n_clients = static_cast<int>(cohorts.size());
  cfg.validate();
  std::vector<ClientHandle> clients;
  clients.reserve(cohorts.size());
  for (std::size_t i = 0; i < cohorts.size(); ++i) {
    clients.push_back(make_client(static_cast<std::uint16_t>(i), *cohorts[i], run_seed));
  }
  std::vector<ClientHandle*> ptrs;
  for (auto& c : clients) ptrs.push_back(&c);
  InprocTransport transport(ptrs, cfg);
  ServerState state;
  state.global = make_initial_params(feature_dim, run_seed);
  state.config = cfg;
  TrainOutcome out;
  out.store = run_training(state, transport);
  out.loss_history = std::move(state.history);
  return out;
}

/// Same protocol over loopback TCP: clients run in their own threads and
/// exchange length-prefixed frames with the server transport.
inline TrainOutcome train_federated_tcp(const std::vector<const Dataset*>& cohorts, RoundConfig cfg,
                                        int feature_dim, std::uint64_t run_seed,
                                        int timeout_ms = 60000) {
  cfg.n_clients = static_cast<int>(cohorts.size());
  cfg.validate();
  std::vector<ClientHandle> clients;
  clients.reserve(cohorts.size());
  for (std::size_t i = 0; i < cohorts.size(); ++i) {
    clients.push_back(make_client(static_cast<std::uint16_t>(i), *cohorts[i], run_seed));
  }
  TcpServerTransport transport(0, cohorts.size(), timeout_ms);
  const std::uint16_t port = transport.port();
  std::vector<std::thread> threads;
  std::vector<std::string> client_errors(clients.size());
  for (std::size_t i = 0; i < clients.size(); ++i) {
    threads.emplace_back([&, i] {
      try {
        run_client("127.0.0.1", port, clients[i], cfg);
      } catch (const std::exception& e) {
        client_errors[i] = e.what();
      }
    });
  }
  ServerState state;
  state.global = make_initial_params(feature_dim, run_seed);
  state.config = cfg;
  TrainOutcome out;
  try {
    out.store = run_training(state, transport);
  } catch (...) {
    transport.shutdown();
    for (auto& t : threads) t.join();
    throw;
  }
  for (auto& t : threads) t.join();
  out.loss_history = std::move(state.history);
  return out;
}

// ---------------------------------------------------------------------------
// Evaluation

inline EvalReport evaluate_on(const ParamStore& store, const Dataset& cohort, EvalTask task,
                              bool bias_enabled, const EvalConfig& base_cfg, int k_detections) {
  std::vector<const Scene*> scenes;
  for (std::size_t idx : cohort.indices_of(Split::Test, /*relations_only=*/false)) {
    scenes.push_back(&cohort.scenes[idx]);
  }
  EvalConfig cfg = base_cfg;
  cfg.task = task;
  return evaluate(store, scenes, cfg, bias_enabled, k_detections);
}

// ---------------------------------------------------------------------------
// Files: datasets, models, reports, manifests

namespace expdetail {

inline void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::IoError, "cannot write " + path.string());
  out << text;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::IoError, "cannot read " + path.string());
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline std::string scene_stem(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "scene_%05zu", index);
  return buf;
}

}  // namespace expdetail

/// Write one cohort: per scene a raw little-endian f32 intensity grid, a
/// raw u8 label grid, the scene JSON, and a sidecar with extent and spec
/// hash; plus one dataset.json with the spec and the split.
inline void save_dataset(const std::filesystem::path& dir, const CohortSpec& spec,
                         const Dataset& ds) {
  std::filesystem::create_directories(dir);
  const std::uint64_t spec_hash = cohort_spec_hash(spec);
  for (std::size_t i = 0; i < ds.scenes.size(); ++i) {
    const auto stem = expdetail::scene_stem(i);
    const Scene& scene = ds.scenes[i];
    {
      std::ofstream raw(dir / (stem + ".vol.raw"), std::ios::binary);
      raw.write(reinterpret_cast<const char*>(scene.volume.intensities.data()),
                static_cast<std::streamsize>(scene.volume.intensities.size() * sizeof(float)));
    }
    {
      std::ofstream raw(dir / (stem + ".labels.raw"), std::ios::binary);
      raw.write(reinterpret_cast<const char*>(scene.volume.labels.data()),
                static_cast<std::streamsize>(scene.volume.labels.size()));
    }
    nlohmann::ordered_json meta;
    meta["extent"] = {scene.volume.extent.nz, scene.volume.extent.ny, scene.volume.extent.nx};
    meta["spec_hash"] = spec_hash;
    expdetail::write_file(dir / (stem + ".meta.json"), meta.dump(2) + "\n");
    expdetail::write_file(dir / (stem + ".scene.json"),
                          scene_to_json(scene.graph, scene.volume.extent).dump(2) + "\n");
  }
  nlohmann::ordered_json manifest;
  manifest["spec"] = cohort_spec_to_json(spec);
  manifest["spec_hash"] = spec_hash;
  manifest["n_scenes"] = ds.scenes.size();
  auto splits = nlohmann::ordered_json::array();
  for (auto s : ds.split) {
    splits.push_back(s == Split::Train ? "train" : (s == Split::Val ? "val" : "test"));
  }
  manifest["split"] = std::move(splits);
  manifest["rel_indices"] = ds.rel_indices;
  expdetail::write_file(dir / "dataset.json", manifest.dump(2) + "\n");
}

inline Dataset load_dataset(const std::filesystem::path& dir) {
  const auto manifest = nlohmann::json::parse(expdetail::read_file(dir / "dataset.json"));
  Dataset ds;
  const std::size_t n = manifest.at("n_scenes").get<std::size_t>();
  for (std::size_t i = 0; i < n; ++i) {
    const auto stem = expdetail::scene_stem(i);
    auto [graph, extent] =
        scene_from_json(nlohmann::json::parse(expdetail::read_file(dir / (stem + ".scene.json"))));
    Scene scene;
    scene.graph = std::move(graph);
    scene.volume.extent = extent;
    const std::size_t voxels = static_cast<std::size_t>(extent.voxels());
    const std::string vol_bytes = expdetail::read_file(dir / (stem + ".vol.raw"));
    const std::string lab_bytes = expdetail::read_file(dir / (stem + ".labels.raw"));
    if (vol_bytes.size() != voxels * sizeof(float) || lab_bytes.size() != voxels) {
      throw Error(Errc::MalformedFrame, "raw grid size mismatch in " + dir.string());
    }
    scene.volume.intensities.resize(voxels);
    std::memcpy(scene.volume.intensities.data(), vol_bytes.data(), vol_bytes.size());
    scene.volume.labels.assign(lab_bytes.begin(), lab_bytes.end());
    ds.scenes.push_back(std::move(scene));
    ds.obj_indices.push_back(i);
    if (!ds.scenes.back().graph.relations.empty()) ds.rel_indices.push_back(i);
    const std::string s = manifest.at("split").at(i).get<std::string>();
    ds.split.push_back(s == "train" ? Split::Train : (s == "val" ? Split::Val : Split::Test));
  }
  return ds;
}

inline void save_model(const std::filesystem::path& path, const ParamStore& store) {
  const auto bytes = serialize(store);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::IoError, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

inline ParamStore load_model(const std::filesystem::path& path) {
  const std::string text = expdetail::read_file(path);
  return deserialize(std::vector<std::uint8_t>(text.begin(), text.end()));
}

inline nlohmann::ordered_json eval_report_to_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  j["task"] = r.task;
  j["n_scenes"] = r.n_scenes;
  auto put = [&j](const char* key, const std::optional<double>& v) {
    if (v) j[key] = *v;
    else j[key] = nullptr;
  };
  put("ar_ventricle", r.ar_ventricle);
  put("ar_midline", r.ar_midline);
  put("ar_bleeding", r.ar_bleeding);
  put("ap_bleeding", r.ap_bleeding);
  put("r_at_k", r.r_at_k);
  put("mr_at_k", r.mr_at_k);
  put("map_at_k", r.map_at_k);
  put("ub_r_at_k", r.ub_r_at_k);
  put("ub_mr_at_k", r.ub_mr_at_k);
  auto subtype = nlohmann::ordered_json::array();
  for (const auto& v : r.subtype_recall) {
    if (v) subtype.push_back(*v);
    else subtype.push_back(nullptr);
  }
  j["subtype_recall"] = std::move(subtype);
  return j;
}

inline EvalReport eval_report_from_json(const nlohmann::json& j) {
  EvalReport r;
  r.task = j.at("task").get<std::string>();
  r.n_scenes = j.at("n_scenes").get<int>();
  auto get = [&j](const char* key) -> std::optional<double> {
    if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
    return j.at(key).get<double>();
  };
  r.ar_ventricle = get("ar_ventricle");
  r.ar_midline = get("ar_midline");
  r.ar_bleeding = get("ar_bleeding");
  r.ap_bleeding = get("ap_bleeding");
  r.r_at_k = get("r_at_k");
  r.mr_at_k = get("mr_at_k");
  r.map_at_k = get("map_at_k");
  r.ub_r_at_k = get("ub_r_at_k");
  r.ub_mr_at_k = get("ub_mr_at_k");
  const auto& arr = j.at("subtype_recall");
  for (std::size_t i = 0; i < kNumBleedingSubtypes && i < arr.size(); ++i) {
    if (!arr.at(i).is_null()) r.subtype_recall[i] = arr.at(i).get<double>();
  }
  return r;
}

// ---------------------------------------------------------------------------
// Summary statistics and table rendering

struct MeanStd {
  double mean = 0.0;
  double stddev = 0.0;
  int n = 0;
};

/// Sample standard deviation; a single value reports 0.
inline MeanStd mean_std(const std::vector<double>& values) {
  MeanStd out;
  out.n = static_cast<int>(values.size());
  if (values.empty()) return out;
  double sum = 0.0;
  for (double v : values) sum += v;
  out.mean = sum / static_cast<double>(values.size());
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - out.mean) * (v - out.mean);
    out.stddev = std::sqrt(ss / static_cast<double>(values.size() - 1));
  }
  return out;
}

inline std::string format_mean_std(const MeanStd& ms) {
  if (ms.n == 0) return "-";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.1f±%.1f", ms.mean, ms.stddev);
  return buf;
}

/// One evaluated (model, cohort) pair as recorded on disk.
struct EvalRecord {
  std::string row_label;  // "Avg. seen", "Avg. unseen", "FedAvg", "FedSGD", "All seen"
  std::string eval_cohort;
  bool seen = false;
  int repeat = 0;
  EvalReport report;
};

inline nlohmann::ordered_json eval_record_to_json(const EvalRecord& rec) {
  nlohmann::ordered_json j;
  j["row_label"] = rec.row_label;
  j["eval_cohort"] = rec.eval_cohort;
  j["seen"] = rec.seen;
  j["repeat"] = rec.repeat;
  j["report"] = eval_report_to_json(rec.report);
  return j;
}

inline EvalRecord eval_record_from_json(const nlohmann::json& j) {
  EvalRecord rec;
  rec.row_label = j.at("row_label").get<std::string>();
  rec.eval_cohort = j.at("eval_cohort").get<std::string>();
  rec.seen = j.at("seen").get<bool>();
  rec.repeat = j.at("repeat").get<int>();
  rec.report = eval_report_from_json(j.at("report"));
  return rec;
}

namespace expdetail {

using Selector = std::function<std::optional<double>(const EvalRecord&)>;

inline MeanStd column_stat(const std::vector<EvalRecord>& records, const std::string& row,
                           const Selector& sel) {
  std::vector<double> values;
  for (const auto& r : records) {
    if (r.row_label != row) continue;
    if (auto v = sel(r)) values.push_back(*v);
  }
  return mean_std(values);
}

}  // namespace expdetail

/// Render the three result tables (detection + upper bounds, relation
/// prediction per task, per-subtype recall) as markdown, with a domain-gap
/// row when both single-model rows are present.
inline std::string render_report_tables(const std::vector<EvalRecord>& records) {
  std::vector<std::string> rows;
  for (const char* candidate : {"Avg. seen", "Avg. unseen", "FedAvg", "FedSGD", "All seen"}) {
    for (const auto& r : records) {
      if (r.row_label == candidate) {
        rows.push_back(candidate);
        break;
      }
    }
  }
  std::string out;
  auto emit_table = [&](const std::string& title, const std::vector<std::string>& columns,
                        const std::vector<std::pair<std::string, expdetail::Selector>>& cols) {
    out += "## " + title + "\n\n| Method |";
    for (const auto& c : columns) out += " " + c + " |";
    out += "\n|---|";
    for (std::size_t i = 0; i < columns.size(); ++i) out += "---|";
    out += "\n";
    std::vector<std::vector<MeanStd>> cells;
    for (const auto& row : rows) {
      out += "| " + row + " |";
      std::vector<MeanStd> row_cells;
      for (const auto& [name, sel] : cols) {
        const auto ms = expdetail::column_stat(records, row, sel);
        row_cells.push_back(ms);
        out += " " + format_mean_std(ms) + " |";
      }
      cells.push_back(std::move(row_cells));
      out += "\n";
    }
    // Domain gap: Avg. seen minus Avg. unseen
    std::ptrdiff_t seen_i = -1, unseen_i = -1;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (rows[i] == "Avg. seen") seen_i = static_cast<std::ptrdiff_t>(i);
      if (rows[i] == "Avg. unseen") unseen_i = static_cast<std::ptrdiff_t>(i);
    }
    if (seen_i >= 0 && unseen_i >= 0) {
      out += "| Domain gap |";
      for (std::size_t c = 0; c < cols.size(); ++c) {
        const auto& a = cells[static_cast<std::size_t>(seen_i)][c];
        const auto& b = cells[static_cast<std::size_t>(unseen_i)][c];
        if (a.n == 0 || b.n == 0) {
          out += " - |";
        } else {
          char buf[32];
          std::snprintf(buf, sizeof(buf), " %.1f |", a.mean - b.mean);
          out += buf;
        }
      }
      out += "\n";
    }
    out += "\n";
  };

  auto sgg_only = [](const EvalRecord& r) { return r.report.task == "sgg"; };
  auto predcls_only = [](const EvalRecord& r) { return r.report.task == "predcls"; };

  emit_table(
      "Object detection and relation upper bounds",
      {"Ventricle AR30", "Midline AR30", "Bleeding AR30", "Bleeding AP30", "UB R@8", "UB mR@8"},
      {{"v", [&](const EvalRecord& r) { return sgg_only(r) ? r.report.ar_ventricle : std::nullopt; }},
       {"m", [&](const EvalRecord& r) { return sgg_only(r) ? r.report.ar_midline : std::nullopt; }},
       {"b", [&](const EvalRecord& r) { return sgg_only(r) ? r.report.ar_bleeding : std::nullopt; }},
       {"ap", [&](const EvalRecord& r) { return sgg_only(r) ? r.report.ap_bleeding : std::nullopt; }},
       {"ubr", [&](const EvalRecord& r) { return sgg_only(r) ? r.report.ub_r_at_k : std::nullopt; }},
       {"ubm", [&](const EvalRecord& r) { return sgg_only(r) ? r.report.ub_mr_at_k : std::nullopt; }}});

  emit_table(
      "Relation prediction",
      {"PredCls R@8", "PredCls mR@8", "PredCls mAP@8", "SGG R@8", "SGG mR@8", "SGG mAP@8"},
      {{"pr", [&](const EvalRecord& r) { return predcls_only(r) ? r.report.r_at_k : std::nullopt; }},
       {"pm", [&](const EvalRecord& r) { return predcls_only(r) ? r.report.mr_at_k : std::nullopt; }},
       {"pa", [&](const EvalRecord& r) { return predcls_only(r) ? r.report.map_at_k : std::nullopt; }},
       {"sr", [&](const EvalRecord& r) { return sgg_only(r) ? r.report.r_at_k : std::nullopt; }},
       {"sm", [&](const EvalRecord& r) { return sgg_only(r) ? r.report.mr_at_k : std::nullopt; }},
       {"sa", [&](const EvalRecord& r) { return sgg_only(r) ? r.report.map_at_k : std::nullopt; }}});

  {
    std::vector<std::pair<std::string, expdetail::Selector>> cols;
    for (int st = 0; st < kNumBleedingSubtypes; ++st) {
      cols.push_back({"st", [st, &sgg_only](const EvalRecord& r) {
                        return sgg_only(r) ? r.report.subtype_recall[static_cast<std::size_t>(st)]
                                           : std::nullopt;
                      }});
    }
    emit_table("Bleeding detection recall per type", {"(1)", "(2)", "(3)", "(4)", "(5)"}, cols);
  }
  return out;
}

/// CSV flavor of the same records: one line per (row, cohort, repeat, task).
inline std::string render_report_csv(const std::vector<EvalRecord>& records) {
  std::string out =
      "row,eval_cohort,seen,repeat,task,ar_ventricle,ar_midline,ar_bleeding,ap_bleeding,"
      "r_at_k,mr_at_k,map_at_k,ub_r_at_k,ub_mr_at_k,st1,st2,st3,st4,st5\n";
  auto field = [](const std::optional<double>& v) {
    if (!v) return std::string();
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.4f", *v);
    return std::string(buf);
  };
  for (const auto& r : records) {
    out += r.row_label + "," + r.eval_cohort + "," + (r.seen ? "1" : "0") + "," +
           std::to_string(r.repeat) + "," + r.report.task;
    for (const auto& v :
         {r.report.ar_ventricle, r.report.ar_midline, r.report.ar_bleeding, r.report.ap_bleeding,
          r.report.r_at_k, r.report.mr_at_k, r.report.map_at_k, r.report.ub_r_at_k,
          r.report.ub_mr_at_k}) {
      out += "," + field(v);
    }
    for (const auto& v : r.report.subtype_recall) out += "," + field(v);
    out += "\n";
  }
  return out;
}

// ---------------------------------------------------------------------------
// Small worker pool for independent runs

inline void parallel_runs(std::size_t n_tasks, unsigned workers,
                          const std::function<void(std::size_t)>& fn) {
  if (workers <= 1 || n_tasks <= 1) {
    for (std::size_t i = 0; i < n_tasks; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  std::vector<std::string> errors(n_tasks);
  for (unsigned w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (;;) {
        const std::size_t i = next.fetch_add(1);
        if (i >= n_tasks) return;
        try {
          fn(i);
        } catch (const std::exception& e) {
          errors[i] = e.what();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  for (const auto& e : errors) {
    if (!e.empty()) throw Error(Errc::ClientError, "parallel run failed: " + e);
  }
}

}  // namespace fedgraph
