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

#include <string>

#include <json.hpp>

#include "fedgraph/errors.hpp"
#include "fedgraph/scenegraph.hpp"

namespace fedgraph {

// Scene interchange document:
//   {"extent": [nz,ny,nx],
//    "objects": [{"id", "class", "subtype"?, "box": [z0,y0,x0,z1,y1,x1], "score"}],
//    "relations": [{"subject", "predicate", "object", "score"}]}

inline ObjectClass object_class_from_name(const std::string& s) {
  if (s == "bleeding") return ObjectClass::Bleeding;
  if (s == "ventricle_system") return ObjectClass::VentricleSystem;
  if (s == "midline") return ObjectClass::Midline;
  throw Error(Errc::MalformedFrame, "unknown object class '" + s + "'");
}

inline PredicateClass predicate_from_name(const std::string& s) {
  if (s == "midline_shift") return PredicateClass::MidlineShift;
  if (s == "blood_flow_to_ventricle") return PredicateClass::BloodFlowToVentricle;
  if (s == "ventricle_asymmetry") return PredicateClass::VentricleAsymmetry;
  if (s == "no_relation") return PredicateClass::NoRelation;
  throw Error(Errc::MalformedFrame, "unknown predicate '" + s + "'");
}

inline nlohmann::ordered_json scene_to_json(const SceneGraph& g, const Extent& extent) {
  nlohmann::ordered_json doc;
  doc["extent"] = {extent.nz, extent.ny, extent.nx};
  doc["objects"] = nlohmann::ordered_json::array();
  for (const auto& o : g.objects) {
    nlohmann::ordered_json jo;
    jo["id"] = o.id;
    jo["class"] = object_class_name(o.cls);
    if (o.subtype) jo["subtype"] = *o.subtype;
    jo["box"] = {o.box.z0, o.box.y0, o.box.x0, o.box.z1, o.box.y1, o.box.x1};
    jo["score"] = o.score;
    doc["objects"].push_back(std::move(jo));
  }
  doc["relations"] = nlohmann::ordered_json::array();
  for (const auto& r : g.relations) {
    nlohmann::ordered_json jr;
    jr["subject"] = r.subject_id;
    jr["predicate"] = predicate_name(r.predicate);
    jr["object"] = r.object_id;
    jr["score"] = r.score;
    doc["relations"].push_back(std::move(jr));
  }
  return doc;
}

inline std::pair<SceneGraph, Extent> scene_from_json(const nlohmann::json& doc) {
  SceneGraph g;
  Extent extent;
  try {
    const auto& e = doc.at("extent");
    extent = Extent{e.at(0).get<std::int64_t>(), e.at(1).get<std::int64_t>(),
                    e.at(2).get<std::int64_t>()};
    for (const auto& jo : doc.at("objects")) {
      SceneObject o;
      o.id = jo.at("id").get<int>();
      o.cls = object_class_from_name(jo.at("class").get<std::string>());
      if (jo.contains("subtype")) o.subtype = jo.at("subtype").get<int>();
      const auto& b = jo.at("box");
      o.box = Box3D{b.at(0).get<std::int64_t>(), b.at(1).get<std::int64_t>(),
                    b.at(2).get<std::int64_t>(), b.at(3).get<std::int64_t>(),
                    b.at(4).get<std::int64_t>(), b.at(5).get<std::int64_t>()};
      o.score = jo.at("score").get<double>();
      g.objects.push_back(o);
    }
    for (const auto& jr : doc.at("relations")) {
      RelationTriplet r;
      r.subject_id = jr.at("subject").get<int>();
      r.predicate = predicate_from_name(jr.at("predicate").get<std::string>());
      r.object_id = jr.at("object").get<int>();
      r.score = jr.at("score").get<double>();
      g.relations.push_back(r);
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::MalformedFrame, std::string("bad scene document: ") + e.what());
  }
  return {std::move(g), extent};
}

}  // namespace fedgraph
