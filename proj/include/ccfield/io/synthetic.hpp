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

// Analytic scenes built from soft primitives, and a fine-step marcher
// that renders them directly. Used as ground truth for training data and
// for field-level comparisons.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ccfield/common.hpp"
#include "ccfield/renderer.hpp"

namespace ccfield::io {

enum class PrimitiveKind { kSphere, kBox, kGaussian };

struct Primitive {
  PrimitiveKind kind = PrimitiveKind::kSphere;
  Vec3 center = Vec3::Zero();
  Vec3 size = Vec3::Constant(0.5);  // sphere: radius in x; box: half extents; gaussian: std devs
  double density = 50.0;
  Vec3 color = Vec3::Constant(0.5);
  double tint = 0.0;      // color + tint * view_dir.z, clamped to [0,1]
  double softness = 0.02; // edge width for sphere and box

  /// Extinction at a point (>= 0).
  double sigma(const Vec3& p) const {
    auto ramp = [this](double inside) {
      const double x = std::clamp(inside / softness + 0.5, 0.0, 1.0);
      return x * x * (3.0 - 2.0 * x);
    };
    switch (kind) {
      case PrimitiveKind::kSphere:
        return density * ramp(size.x() - (p - center).norm());
      case PrimitiveKind::kBox: {
        double w = 1.0;
        for (int a = 0; a < 3; ++a) w *= ramp(size[a] - std::abs(p[a] - center[a]));
        return density * w;
      }
      case PrimitiveKind::kGaussian: {
        const Vec3 q = (p - center).cwiseQuotient(size);
        const double r2 = q.squaredNorm();
        return r2 > 16.0 ? 0.0 : density * std::exp(-0.5 * r2);
      }
    }
    return 0.0;
  }

  Vec3 shade(const Vec3& dir) const { return (color.array() + tint * dir.z()).cwiseMax(0.0).cwiseMin(1.0); }

  /// Conservative world box outside which sigma is zero.
  Aabb bounds() const {
    Vec3 r;
    switch (kind) {
      case PrimitiveKind::kSphere: r = Vec3::Constant(size.x() + softness); break;
      case PrimitiveKind::kBox: r = size + Vec3::Constant(softness); break;
      case PrimitiveKind::kGaussian: r = 4.0 * size; break;
    }
    return {center - r, center + r};
  }
};

struct OrbitSpec {
  double radius = 4.0;
  double camera_angle_x = 0.6911112;
  double elevation_min = -0.2;  // radians
  double elevation_max = 1.0;
};

struct AnalyticScene {
  std::vector<Primitive> primitives;
  Aabb bounds{Vec3::Constant(-1.5), Vec3::Constant(1.5)};
  OrbitSpec orbit;

  void validate() const {
    if (!bounds.valid()) throw Error("scene bounds are invalid");
    for (std::size_t i = 0; i < primitives.size(); ++i) {
      const auto& p = primitives[i];
      const std::string where = "primitive " + std::to_string(i);
      if (!(p.density >= 0.0)) throw Error(where + ": density must be >= 0");
      if ((p.color.array() < 0.0).any() || (p.color.array() > 1.0).any()) throw Error(where + ": color outside [0,1]");
      if (!(p.size.array() > 0.0).all()) throw Error(where + ": size must be positive");
      if (!(p.softness > 0.0)) throw Error(where + ": softness must be positive");
    }
  }

  double sigma(const Vec3& p) const {
    double s = 0.0;
    for (const auto& q : primitives) s += q.sigma(p);
    return s;
  }

  /// Total extinction and density-weighted color.
  std::pair<double, Vec3> sample(const Vec3& p, const Vec3& dir) const {
    double s = 0.0;
    Vec3 c = Vec3::Zero();
    for (const auto& q : primitives) {
      const double w = q.sigma(p);
      if (w <= 0.0) continue;
      s += w;
      c += w * q.shade(dir);
    }
    if (s > 0.0) c /= s;
    return {s, c};
  }

  /// The same scene with every primitive moved by `offset`.
  AnalyticScene translated(const Vec3& offset) const {
    AnalyticScene out = *this;
    for (auto& p : out.primitives) p.center += offset;
    out.bounds.min += offset;
    out.bounds.max += offset;
    return out;
  }

  /// Union of two scenes; bounds cover both.
  static AnalyticScene merge(const AnalyticScene& a, const AnalyticScene& b) {
    AnalyticScene out = a;
    out.primitives.insert(out.primitives.end(), b.primitives.begin(), b.primitives.end());
    out.bounds.min = a.bounds.min.cwiseMin(b.bounds.min);
    out.bounds.max = a.bounds.max.cwiseMax(b.bounds.max);
    return out;
  }
};

struct OracleOptions {
  double samples_per_diagonal = 4.0 * 512.0;
  double termination = 1e-4;
  Vec3 background = Vec3::Ones();
};

/// Premultiplied color and alpha of one ray through the analytic scene.
struct OracleSample {
  Vec3 premul = Vec3::Zero();
  double alpha = 0.0;

  Vec3 over(const Vec3& bg) const { return premul + (1.0 - alpha) * bg; }
};

inline OracleSample oracle_march(const AnalyticScene& scene, const Ray& ray, const OracleOptions& opts = {}) {
  OracleSample out;
  const auto hit = ray_aabb(ray, scene.bounds);
  if (!hit) return out;
  const double step = scene.bounds.diagonal() / opts.samples_per_diagonal;
  double trans = 1.0;
  for (long i = 0;; ++i) {
    const double t = hit->first + (static_cast<double>(i) + 0.5) * step;
    if (t >= hit->second) break;
    const auto [s, c] = scene.sample(ray.origin + t * ray.dir, ray.dir);
    if (s <= 0.0) continue;
    const double a = -std::expm1(-s * step);
    out.premul += trans * a * c;
    trans *= 1.0 - a;
    if (trans < opts.termination) break;
  }
  out.alpha = 1.0 - trans;
  return out;
}

/// Rendered view: colors over the background plus the alpha plane.
struct OracleImage {
  Image rgb;
  std::vector<float> alpha;
};

inline OracleImage oracle_render(const AnalyticScene& scene, const Camera& cam, const OracleOptions& opts = {},
                                 int workers = 0) {
  OracleImage out;
  out.rgb = Image(cam.width, cam.height);
  out.alpha.resize(static_cast<std::size_t>(cam.width) * cam.height);
  parallel_for(workers > 0 ? workers : default_thread_count(), static_cast<std::size_t>(cam.height),
               [&](int, std::size_t y0, std::size_t y1) {
                 for (std::size_t y = y0; y < y1; ++y) {
                   for (int x = 0; x < cam.width; ++x) {
                     const OracleSample s = oracle_march(scene, cam.ray(x, static_cast<int>(y)), opts);
                     const Vec3 c = s.over(opts.background);
                     float* px = out.rgb.pixel(x, static_cast<int>(y));
                     for (int k = 0; k < 3; ++k) px[k] = static_cast<float>(c[k]);
                     out.alpha[y * cam.width + x] = static_cast<float>(s.alpha);
                   }
                 }
               });
  return out;
}

namespace detail {

inline Vec3 json_vec3(const nlohmann::json& j, const std::string& key) {
  if (!j.is_array() || j.size() != 3) throw Error("'" + key + "' must be an array of 3 numbers");
  Vec3 v;
  for (int a = 0; a < 3; ++a) {
    if (!j[a].is_number()) throw Error("'" + key + "' must be an array of 3 numbers");
    v[a] = j[a].get<double>();
  }
  return v;
}

inline void reject_unknown(const nlohmann::json& obj, std::initializer_list<const char*> allowed,
                           const std::string& where) {
  if (!obj.is_object()) throw Error(where + " must be a JSON object");
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* k) { return it.key() == k; })) {
      throw Error(where + ": unknown key '" + it.key() + "'");
    }
  }
}

inline double json_number(const nlohmann::json& obj, const char* key, double fallback) {
  if (!obj.contains(key)) return fallback;
  if (!obj[key].is_number()) throw Error(std::string("'") + key + "' must be a number");
  return obj[key].get<double>();
}

}  // namespace detail

/// Scene spec JSON:
///   {"bounds": [[x,y,z],[x,y,z]],
///    "orbit": {"radius", "camera_angle_x", "elevation_min", "elevation_max"},
///    "primitives": [{"type": "sphere"|"box"|"gaussian", "center", "radius"
///                    | "half_size" | "sigma", "density", "color", "tint",
///                    "softness"}]}
inline AnalyticScene parse_analytic_scene(const nlohmann::json& j) {
  detail::reject_unknown(j, {"bounds", "orbit", "primitives"}, "scene spec");
  AnalyticScene s;
  if (j.contains("bounds")) {
    const auto& b = j["bounds"];
    if (!b.is_array() || b.size() != 2) throw Error("'bounds' must be [[min],[max]]");
    s.bounds = {detail::json_vec3(b[0], "bounds"), detail::json_vec3(b[1], "bounds")};
  }
  if (j.contains("orbit")) {
    const auto& o = j["orbit"];
    detail::reject_unknown(o, {"radius", "camera_angle_x", "elevation_min", "elevation_max"}, "orbit");
    s.orbit.radius = detail::json_number(o, "radius", s.orbit.radius);
    s.orbit.camera_angle_x = detail::json_number(o, "camera_angle_x", s.orbit.camera_angle_x);
    s.orbit.elevation_min = detail::json_number(o, "elevation_min", s.orbit.elevation_min);
    s.orbit.elevation_max = detail::json_number(o, "elevation_max", s.orbit.elevation_max);
  }
  if (!j.contains("primitives") || !j["primitives"].is_array()) throw Error("scene spec needs a 'primitives' array");
  for (const auto& pj : j["primitives"]) {
    detail::reject_unknown(pj, {"type", "center", "radius", "half_size", "sigma", "density", "color", "tint", "softness"},
                           "primitive");
    Primitive p;
    const std::string type = pj.value("type", "");
    if (type == "sphere") {
      p.kind = PrimitiveKind::kSphere;
      p.size = Vec3::Constant(detail::json_number(pj, "radius", 0.5));
    } else if (type == "box") {
      p.kind = PrimitiveKind::kBox;
      if (pj.contains("half_size")) p.size = detail::json_vec3(pj["half_size"], "half_size");
    } else if (type == "gaussian") {
      p.kind = PrimitiveKind::kGaussian;
      if (pj.contains("sigma")) p.size = detail::json_vec3(pj["sigma"], "sigma");
    } else {
      throw Error("primitive type must be sphere, box or gaussian (got '" + type + "')");
    }
    if (pj.contains("center")) p.center = detail::json_vec3(pj["center"], "center");
    if (pj.contains("color")) p.color = detail::json_vec3(pj["color"], "color");
    p.density = detail::json_number(pj, "density", p.density);
    p.tint = detail::json_number(pj, "tint", p.tint);
    p.softness = detail::json_number(pj, "softness", p.softness);
    s.primitives.push_back(p);
  }
  s.validate();
  return s;
}

inline AnalyticScene load_analytic_scene(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot open scene spec " + path.string());
  try {
    return parse_analytic_scene(nlohmann::json::parse(is));
  } catch (const nlohmann::json::exception& e) {
    throw Error(path.string() + ": " + e.what());
  } catch (const Error& e) {
    throw Error(path.string() + ": " + e.what());
  }
}

}  // namespace ccfield::io
