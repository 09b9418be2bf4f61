// Copyright 2026 The handteleop Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <fstream>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "handteleop/errors.hpp"
#include "handteleop/shading_mlp.hpp"
#include "handteleop/tactile.hpp"

namespace handteleop::tactile {

struct PipelineParams {
  double sigma_px = 3.0;
  double camera_height = 0.025;
  ShadingParams shading;
};

enum class ShadeMode { kAnalytic, kMlp };

inline HeightMap filtered_heightmap(const ContactScene& scene, const PipelineParams& p) {
  return elastomer_filter(render_heightmap(scene), p.sigma_px);
}

inline NormalMap scene_normals(const ContactScene& scene, const PipelineParams& p) {
  return normals_from_heightmap(filtered_heightmap(scene, p), scene.gel.pitch_x(), scene.gel.pitch_y());
}

/// heightmap -> elastomer filter -> normals -> shading.
inline TactileImage render(const ContactScene& scene, const PipelineParams& p, ShadeMode mode,
                           const ShadingMlp* mlp = nullptr) {
  const NormalMap nm = scene_normals(scene, p);
  const ViewMap vm = view_map(scene.gel, p.camera_height);
  if (mode == ShadeMode::kAnalytic) return shade_analytic(nm, vm, p.shading);
  if (mlp == nullptr) throw ValidationError("mlp mode needs trained weights");
  return shade_mlp(nm, vm, *mlp);
}

// --- scene JSON -------------------------------------------------------------
//
// {
//   "gel": {"width": 0.02, "height": 0.015, "res_x": 640, "res_y": 480},
//   "sigma_px": 3, "camera_height": 0.025,
//   "shading": {"ambient": 0.15, "diffuse_gain": 0.55, "specular_gain": 0.45, "shininess": 16},
//   "primitives": [
//     {"shape": "sphere", "radius": 0.005, "press_depth": 0.001,
//      "pose": {"p": [0, 0, 0], "q": [1, 0, 0, 0]}},
//     {"shape": "box", "size": [wx, wy, wz], ...},
//     {"shape": "cylinder", "radius": r, "height": h, ...}
//   ]
// }
//
// Everything except "primitives" entries' shape fields is optional.

struct SceneFile {
  ContactScene scene;
  PipelineParams pipeline;
};

namespace detail {

inline double json_number(const nlohmann::json& j, const char* key, double fallback) {
  if (!j.contains(key)) return fallback;
  if (!j[key].is_number()) throw ValidationError(std::string("'") + key + "' must be a number");
  return j[key].get<double>();
}

inline Vec3 json_vec3(const nlohmann::json& j, const char* what) {
  if (!j.is_array() || j.size() != 3) throw ValidationError(std::string(what) + " must be a 3-element array");
  Vec3 v;
  for (int i = 0; i < 3; ++i) {
    if (!j[i].is_number()) throw ValidationError(std::string(what) + " must contain numbers");
    v[i] = j[i].get<double>();
  }
  return v;
}

inline Pose json_pose(const nlohmann::json& j) {
  Pose p = Pose::identity();
  if (j.contains("p")) p.position = json_vec3(j["p"], "pose.p");
  if (j.contains("q")) {
    const auto& q = j["q"];
    if (!q.is_array() || q.size() != 4) throw ValidationError("pose.q must be [w, x, y, z]");
    for (const auto& c : q)
      if (!c.is_number()) throw ValidationError("pose.q must contain numbers");
    p = Pose::from_wxyz(p.position, q[0].get<double>(), q[1].get<double>(), q[2].get<double>(), q[3].get<double>());
  }
  return p;
}

inline Primitive json_primitive(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("shape") || !j["shape"].is_string())
    throw ValidationError("primitive needs a string 'shape'");
  const auto shape = j["shape"].get<std::string>();
  Primitive prim{Sphere{0.0}, Pose::identity(), json_number(j, "press_depth", 0.0)};
  if (shape == "sphere") {
    prim.shape = Sphere{json_number(j, "radius", -1.0)};
  } else if (shape == "box") {
    if (!j.contains("size")) throw ValidationError("box needs 'size'");
    const Vec3 s = json_vec3(j["size"], "box size");
    prim.shape = Box{s.x(), s.y(), s.z()};
  } else if (shape == "cylinder") {
    prim.shape = Cylinder{json_number(j, "radius", -1.0), json_number(j, "height", -1.0)};
  } else {
    throw ValidationError("unknown primitive shape '" + shape + "'");
  }
  if (j.contains("pose")) prim.pose = json_pose(j["pose"]);
  return prim;
}

}  // namespace detail

inline SceneFile parse_scene(const nlohmann::json& j) {
  if (!j.is_object()) throw ValidationError("scene must be a JSON object");
  SceneFile out;
  if (j.contains("gel")) {
    const auto& g = j["gel"];
    auto& gel = out.scene.gel;
    gel.width = detail::json_number(g, "width", gel.width);
    gel.height = detail::json_number(g, "height", gel.height);
    const double rx = detail::json_number(g, "res_x", static_cast<double>(gel.res_x));
    const double ry = detail::json_number(g, "res_y", static_cast<double>(gel.res_y));
    if (rx != std::floor(rx) || ry != std::floor(ry) || rx < 2 || ry < 2 || rx > 1 << 14 || ry > 1 << 14)
      throw ValidationError("gel resolution must be an integer in [2, 16384]");
    gel.res_x = static_cast<std::size_t>(rx);
    gel.res_y = static_cast<std::size_t>(ry);
  }
  auto& pp = out.pipeline;
  pp.sigma_px = detail::json_number(j, "sigma_px", pp.sigma_px);
  pp.camera_height = detail::json_number(j, "camera_height", pp.camera_height);
  if (j.contains("shading")) {
    const auto& s = j["shading"];
    pp.shading.ambient = detail::json_number(s, "ambient", pp.shading.ambient);
    pp.shading.diffuse_gain = detail::json_number(s, "diffuse_gain", pp.shading.diffuse_gain);
    pp.shading.specular_gain = detail::json_number(s, "specular_gain", pp.shading.specular_gain);
    pp.shading.shininess = detail::json_number(s, "shininess", pp.shading.shininess);
  }
  if (j.contains("primitives")) {
    if (!j["primitives"].is_array()) throw ValidationError("'primitives' must be an array");
    for (const auto& p : j["primitives"]) out.scene.primitives.push_back(detail::json_primitive(p));
  }
  out.scene.validate();
  pp.shading.validate();
  if (!(pp.sigma_px >= 0.0)) throw ValidationError("sigma_px must be >= 0");
  if (!(pp.camera_height > 0.0)) throw ValidationError("camera_height must be positive");
  return out;
}

inline SceneFile load_scene_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ValidationError("cannot open '" + path + "'");
  try {
    return parse_scene(nlohmann::json::parse(f));
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("scene '" + path + "': " + e.what());
  }
}

}  // namespace handteleop::tactile
