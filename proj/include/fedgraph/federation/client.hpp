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

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "fedgraph/errors.hpp"
#include "fedgraph/federation/server.hpp"
#include "fedgraph/federation/transport.hpp"
#include "fedgraph/models.hpp"
#include "fedgraph/params.hpp"
#include "fedgraph/rng.hpp"
#include "fedgraph/synth.hpp"

namespace fedgraph {

/// One client's local state. The dataset never crosses the client boundary;
/// only parameter stores and loss scalars do.
struct ClientHandle {
  std::uint16_t client_id = 0;
  const Dataset* dataset = nullptr;
  std::uint64_t stream_key = 0;

  std::vector<std::size_t> train_obj;  // training-split scene indices
  std::vector<std::size_t> train_rel;  // training-split scenes with relations

  // Detections are pure functions of (scene, frozen detector); cache them
  // for the relation phase.
  std::uint64_t cached_detector_hash = 0;
  std::map<std::size_t, std::vector<SceneObject>> detections;
};

inline ClientHandle make_client(std::uint16_t client_id, const Dataset& dataset,
                                std::uint64_t run_seed) {
  ClientHandle c;
  c.client_id = client_id;
  c.dataset = &dataset;
  c.stream_key = fold(fold(run_seed, "client"), client_id);
  c.train_obj = dataset.indices_of(Split::Train, /*relations_only=*/false);
  c.train_rel = dataset.indices_of(Split::Train, /*relations_only=*/true);
  return c;
}

/// E_obj local SGD steps on the summed detector loss. Batch sampling and
/// the loss's internal subsamples are keyed by the global step index, so a
/// round split T*E and a straight run of T*E steps draw identical batches.
inline ParamStore client_update_obj_detec(ClientHandle& client, const ParamStore& w0,
                                          const RoundConfig& cfg, std::uint64_t start_step,
                                          std::vector<double>* step_losses = nullptr) {
  if (client.train_obj.empty()) {
    throw Error(Errc::EmptyDataset, "client " + std::to_string(client.client_id) +
                                        " has no training scenes");
  }
  ParamStore w = w0;
  for (int e = 0; e < cfg.E_obj; ++e) {
    const std::uint64_t step = start_step + static_cast<std::uint64_t>(e);
    RngStream pick(fold(fold(client.stream_key, "obj_batch"), step));
    ObjBatch batch;
    batch.sample_key = fold(fold(client.stream_key, "obj_sample"), step);
    for (int b = 0; b < cfg.batch_obj; ++b) {
      const std::size_t idx = client.train_obj[pick.next_below(client.train_obj.size())];
      const Scene& scene = client.dataset->scenes[idx];
      ObjBatchItem item;
      item.volume = &scene.volume;
      for (const auto& o : scene.graph.objects) {
        if (o.cls == ObjectClass::Bleeding) item.gt_bleedings.push_back(o.box);
      }
      batch.items.push_back(std::move(item));
    }
    const DetectorLoss loss = detector_loss_and_grad(w, batch);
    w = sgd_step(w, loss.grads, cfg.eta_obj);
    if (step_losses != nullptr) step_losses->push_back(loss.total);
  }
  return w;
}

/// Relation statistics over the client's training scenes that carry
/// relations. Only relation.bias changes; everything else is bit-identical.
inline ParamStore client_stats_update(const ClientHandle& client, const ParamStore& w) {
  std::vector<const SceneGraph*> graphs;
  for (std::size_t idx : client.train_rel) graphs.push_back(&client.dataset->scenes[idx].graph);
  if (graphs.empty()) {
    throw Error(Errc::EmptyDataset,
                "client " + std::to_string(client.client_id) + " has no relation scenes");
  }
  const FrequencyBias bias = compute_frequency_stats(graphs);
  ParamStore out = w;
  bias_into_params(out, bias);
  return out;
}

namespace clientdetail {

inline const std::vector<SceneObject>& cached_detections(ClientHandle& client,
                                                         const ParamStore& w, std::size_t scene_idx,
                                                         int k_max) {
  const std::uint64_t h = hash_groups(w, groups_with_prefix(w, "detector"));
  if (h != client.cached_detector_hash) {
    client.detections.clear();
    client.cached_detector_hash = h;
  }
  auto it = client.detections.find(scene_idx);
  if (it == client.detections.end()) {
    it = client.detections
             .emplace(scene_idx, detect_objects(client.dataset->scenes[scene_idx].volume, w, k_max))
             .first;
  }
  return it->second;
}

}  // namespace clientdetail

/// E_rel local SGD steps on the relation loss over detected object pairs.
/// Detector groups are frozen and pass through bit-identically.
inline ParamStore client_update_rel_pred(ClientHandle& client, const ParamStore& w0,
                                         const RoundConfig& cfg, std::uint64_t start_step,
                                         std::vector<double>* step_losses = nullptr) {
  ParamStore w = w0;
  const bool bias_enabled = cfg.bias_mode != BiasMode::Disabled;
  for (int e = 0; e < cfg.E_rel; ++e) {
    const std::uint64_t step = start_step + static_cast<std::uint64_t>(e);
    std::vector<RelBatchItem> items;
    if (!client.train_rel.empty()) {
      RngStream pick(fold(fold(client.stream_key, "rel_batch"), step));
      for (int b = 0; b < cfg.batch_rel; ++b) {
        const std::size_t idx = client.train_rel[pick.next_below(client.train_rel.size())];
        const Scene& scene = client.dataset->scenes[idx];
        RelBatchItem item;
        item.volume = &scene.volume;
        item.objects = clientdetail::cached_detections(client, w, idx, cfg.K);
        item.gt = &scene.graph;
        items.push_back(std::move(item));
      }
    }
    const RelationLoss loss = relation_loss_and_grad(w, items, bias_enabled);
    w = sgd_step(w, loss.grads, cfg.eta_rel);
    if (step_losses != nullptr) step_losses->push_back(loss.total);
  }
  return w;
}

// ---------------------------------------------------------------------------
// In-process transport: direct handoff, clients executed in client-id order
// as the deterministic stand-in for parallel execution.

class InprocTransport : public Transport {
 public:
  InprocTransport(std::vector<ClientHandle*> clients, RoundConfig cfg)
      : clients_(std::move(clients)), cfg_(cfg) {
    std::sort(clients_.begin(), clients_.end(),
              [](const ClientHandle* a, const ClientHandle* b) { return a->client_id < b->client_id; });
  }

  std::size_t n_clients() const override { return clients_.size(); }

  void broadcast(MsgType type, std::uint32_t round, const ParamStore& store) override {
    pending_type_ = type;
    pending_round_ = round;
    pending_store_ = store;
  }

  std::vector<ClientReply> collect(std::uint32_t round) override {
    std::vector<ClientReply> replies;
    for (ClientHandle* client : clients_) {
      ClientReply reply;
      reply.client_id = client->client_id;
      try {
        if (pending_type_ == MsgType::WEIGHTS) {
          std::vector<double> losses;
          if (pending_round_ < static_cast<std::uint32_t>(cfg_.T_obj)) {
            const std::uint64_t start =
                static_cast<std::uint64_t>(pending_round_) * static_cast<std::uint64_t>(cfg_.E_obj);
            reply.store = client_update_obj_detec(*client, pending_store_, cfg_, start, &losses);
          } else {
            const std::uint64_t start =
                static_cast<std::uint64_t>(pending_round_ - static_cast<std::uint32_t>(cfg_.T_obj)) *
                static_cast<std::uint64_t>(cfg_.E_rel);
            reply.store = client_update_rel_pred(*client, pending_store_, cfg_, start, &losses);
          }
          reply.type = MsgType::RESULT;
          reply.has_store = true;
          reply.losses = std::move(losses);
        } else if (pending_type_ == MsgType::STATS_REQ) {
          reply.type = MsgType::STATS;
          try {
            reply.store = client_stats_update(*client, pending_store_);
            reply.has_store = true;
          } catch (const Error& e) {
            if (e.code() != Errc::EmptyDataset) throw;
            reply.has_store = false;  // declared "no stats"
          }
        } else {
          reply.type = MsgType::ERR;
          reply.error = "unexpected broadcast type";
        }
      } catch (const Error& e) {
        reply.type = MsgType::ERR;
        reply.error = "client " + std::to_string(client->client_id) + ", round " +
                      std::to_string(round) + ": " + e.what();
      }
      replies.push_back(std::move(reply));
    }
    return replies;
  }

  void shutdown() override {}

 private:
  std::vector<ClientHandle*> clients_;
  RoundConfig cfg_;
  MsgType pending_type_ = MsgType::DONE;
  std::uint32_t pending_round_ = 0;
  ParamStore pending_store_;
};

// ---------------------------------------------------------------------------
// Socket client loop

/// Connect to a server, handshake, and serve rounds until DONE. The round
/// number in each WEIGHTS message selects the phase.
inline void run_client(const std::string& host, std::uint16_t port, ClientHandle& client,
                       const RoundConfig& cfg) {
  const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd < 0) throw Error(Errc::IoError, "socket() failed");
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(port);
  if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
    ::close(fd);
    throw Error(Errc::InvalidConfig, "bad host address '" + host + "'");
  }
  if (::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
    ::close(fd);
    throw Error(Errc::IoError, std::string("connect failed: ") + std::strerror(errno));
  }
  int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));

  netdetail::Frame init;
  init.type = MsgType::INIT;
  init.client_id = client.client_id;
  netdetail::send_frame(fd, init);

  try {
    for (;;) {
      netdetail::Frame msg;
      if (!netdetail::recv_frame(fd, msg)) continue;  // no timeout set; retry on spurious wake
      if (msg.type == MsgType::DONE) break;
      netdetail::Frame reply;
      reply.client_id = client.client_id;
      reply.round = msg.round;
      try {
        const ParamStore incoming = deserialize(msg.payload);
        if (msg.type == MsgType::WEIGHTS) {
          std::vector<double> losses;
          ParamStore result;
          if (msg.round < static_cast<std::uint32_t>(cfg.T_obj)) {
            const std::uint64_t start =
                static_cast<std::uint64_t>(msg.round) * static_cast<std::uint64_t>(cfg.E_obj);
            result = client_update_obj_detec(client, incoming, cfg, start, &losses);
          } else {
            const std::uint64_t start =
                static_cast<std::uint64_t>(msg.round - static_cast<std::uint32_t>(cfg.T_obj)) *
                static_cast<std::uint64_t>(cfg.E_rel);
            result = client_update_rel_pred(client, incoming, cfg, start, &losses);
          }
          reply.type = MsgType::RESULT;
          reply.payload = netdetail::encode_result_payload(result, losses);
        } else if (msg.type == MsgType::STATS_REQ) {
          reply.type = MsgType::STATS;
          try {
            const ParamStore result = client_stats_update(client, incoming);
            reply.payload.push_back(1);
            const auto bytes = serialize(result);
            reply.payload.insert(reply.payload.end(), bytes.begin(), bytes.end());
          } catch (const Error& e) {
            if (e.code() != Errc::EmptyDataset) throw;
            reply.payload.push_back(0);
          }
        } else {
          reply.type = MsgType::ERR;
          const std::string err = "unexpected message type";
          reply.payload.assign(err.begin(), err.end());
        }
      } catch (const Error& e) {
        reply.type = MsgType::ERR;
        const std::string err = e.what();
        reply.payload.assign(err.begin(), err.end());
      }
      netdetail::send_frame(fd, reply);
    }
  } catch (...) {
    ::close(fd);
    throw;
  }
  ::close(fd);
}

}  // namespace fedgraph
