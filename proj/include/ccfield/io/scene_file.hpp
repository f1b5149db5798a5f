// Copyright 2026 The ccfield Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Scene description files:
//
//   {"background": [r, g, b],
//    "objects": [{"model": "a.ccnf", "translation": [x, y, z],
//                 "rotation": [w, x, y, z], "scale": [sx, sy, sz],
//                 "lod": {"vec": V, "mat": M}}]}
//
// Model paths are relative to the scene file. Unknown keys are rejected.

#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ccfield/common.hpp"
#include "ccfield/composer.hpp"
#include "ccfield/io/model_file.hpp"
#include "ccfield/io/synthetic.hpp"

namespace ccfield::io {

struct SceneObjectDesc {
  std::string model;
  AffineTransform transform;
  std::optional<RankCounts> lod;
};

struct SceneDesc {
  Vec3 background = Vec3::Ones();
  std::vector<SceneObjectDesc> objects;
};

inline SceneDesc parse_scene_desc(const nlohmann::json& j) {
  detail::reject_unknown(j, {"background", "objects"}, "scene");
  SceneDesc d;
  if (j.contains("background")) d.background = detail::json_vec3(j["background"], "background");
  if (!j.contains("objects") || !j["objects"].is_array() || j["objects"].empty()) {
    throw Error("scene needs a non-empty 'objects' array");
  }
  for (std::size_t i = 0; i < j["objects"].size(); ++i) {
    const auto& o = j["objects"][i];
    const std::string where = "object " + std::to_string(i);
    detail::reject_unknown(o, {"model", "translation", "rotation", "scale", "lod"}, where);
    SceneObjectDesc od;
    if (!o.contains("model") || !o["model"].is_string()) throw Error(where + ": 'model' path is required");
    od.model = o["model"].get<std::string>();
    if (o.contains("translation")) od.transform.translation = detail::json_vec3(o["translation"], "translation");
    if (o.contains("rotation")) {
      const auto& q = o["rotation"];
      if (!q.is_array() || q.size() != 4) throw Error(where + ": 'rotation' must be [w, x, y, z]");
      od.transform.rotation = Eigen::Quaterniond(q[0].get<double>(), q[1].get<double>(), q[2].get<double>(),
                                                 q[3].get<double>());
    }
    if (o.contains("scale")) od.transform.scale = detail::json_vec3(o["scale"], "scale");
    if (o.contains("lod")) {
      const auto& l = o["lod"];
      detail::reject_unknown(l, {"vec", "mat"}, where + " lod");
      od.lod = RankCounts{l.value("vec", 0), l.value("mat", 0)};
    }
    try {
      od.transform.validate();
    } catch (const Error& e) {
      throw Error(where + ": " + e.what());
    }
    d.objects.push_back(std::move(od));
  }
  return d;
}

inline nlohmann::json scene_desc_json(const SceneDesc& d) {
  nlohmann::json j;
  j["background"] = {d.background.x(), d.background.y(), d.background.z()};
  j["objects"] = nlohmann::json::array();
  for (const auto& o : d.objects) {
    const auto& t = o.transform;
    nlohmann::json oj = {{"model", o.model},
                         {"translation", {t.translation.x(), t.translation.y(), t.translation.z()}},
                         {"rotation", {t.rotation.w(), t.rotation.x(), t.rotation.y(), t.rotation.z()}},
                         {"scale", {t.scale.x(), t.scale.y(), t.scale.z()}}};
    if (o.lod) oj["lod"] = {{"vec", o.lod->vec}, {"mat", o.lod->mat}};
    j["objects"].push_back(oj);
  }
  return j;
}

inline SceneDesc load_scene_desc(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot open scene " + path.string());
  try {
    return parse_scene_desc(nlohmann::json::parse(is));
  } catch (const nlohmann::json::exception& e) {
    throw Error(path.string() + ": " + e.what());
  } catch (const Error& e) {
    throw Error(path.string() + ": " + e.what());
  }
}

/// Loads every referenced model (once per path) and applies LODs.
inline Scene<float> build_scene(const SceneDesc& d, const std::filesystem::path& base_dir) {
  Scene<float> scene;
  scene.background = d.background;
  std::map<std::string, std::shared_ptr<const FieldPair<float>>> cache;
  for (const auto& o : d.objects) {
    std::filesystem::path p = o.model;
    if (p.is_relative()) p = base_dir / p;
    auto& slot = cache[p.string()];
    if (!slot) slot = std::make_shared<const FieldPair<float>>(load_model(p));
    scene.add_instance(slot, o.transform, o.lod);
  }
  return scene;
}

inline Scene<float> load_scene(const std::filesystem::path& path) {
  return build_scene(load_scene_desc(path), path.parent_path());
}

/// Sum of the instances' serialized model sizes (after LOD).
template <typename T>
std::uint64_t scene_bytes(const Scene<T>& scene) {
  std::uint64_t total = 0;
  for (const auto& inst : scene.instances()) total += model_file_size(*inst.model);
  return total;
}

}  // namespace ccfield::io
