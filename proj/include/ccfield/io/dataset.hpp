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

// Posed-image datasets in the blender-synthetic layout:
//
//   DIR/transforms_{train,test}.json
//     {"camera_angle_x": rad, "frames": [{"file_path": "./train/r_0",
//       "transform_matrix": 4x4 camera-to-world, row-major}], "aabb": optional}
//   DIR/train/r_0.png ...   RGBA, composited over the background at load

#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "ccfield/common.hpp"
#include "ccfield/io/image_io.hpp"
#include "ccfield/io/model_file.hpp"
#include "ccfield/io/synthetic.hpp"
#include "ccfield/renderer.hpp"

namespace ccfield::io {

struct DatasetSplit {
  double camera_angle_x = 0.0;
  std::vector<Camera> cameras;
  std::vector<Image> images;
  std::vector<std::string> files;
  std::optional<Aabb> aabb;
};

inline std::string split_json_name(const std::string& split) { return "transforms_" + split + ".json"; }

/// Loads one split; images are composited over `background`.
inline DatasetSplit load_split(const std::filesystem::path& dir, const std::string& split,
                               const Vec3& background = Vec3::Ones()) {
  const std::filesystem::path json_path = dir / split_json_name(split);
  std::ifstream is(json_path);
  if (!is) throw Error("cannot open " + json_path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw Error(json_path.string() + ": malformed JSON: " + e.what());
  }
  DatasetSplit out;
  if (!j.contains("camera_angle_x") || !j["camera_angle_x"].is_number()) {
    throw Error(json_path.string() + ": missing camera_angle_x");
  }
  out.camera_angle_x = j["camera_angle_x"].get<double>();
  if (j.contains("aabb")) {
    const auto& b = j["aabb"];
    if (!b.is_array() || b.size() != 2) throw Error(json_path.string() + ": 'aabb' must be [[min],[max]]");
    out.aabb = Aabb{detail::json_vec3(b[0], "aabb"), detail::json_vec3(b[1], "aabb")};
  }
  if (!j.contains("frames") || !j["frames"].is_array() || j["frames"].empty()) {
    throw Error(json_path.string() + ": no frames");
  }
  int width = -1, height = -1;
  for (std::size_t f = 0; f < j["frames"].size(); ++f) {
    const auto& fr = j["frames"][f];
    const std::string where = json_path.string() + " frame " + std::to_string(f);
    try {
      if (!fr.contains("file_path") || !fr["file_path"].is_string()) throw Error("missing file_path");
      std::filesystem::path rel = fr["file_path"].get<std::string>();
      if (!rel.has_extension()) rel += ".png";
      const auto& tm = fr.at("transform_matrix");
      if (!tm.is_array() || tm.size() != 4) throw Error("transform_matrix must be 4x4");
      Mat4 c2w;
      for (int r = 0; r < 4; ++r) {
        if (!tm[r].is_array() || tm[r].size() != 4) throw Error("transform_matrix must be 4x4");
        for (int c = 0; c < 4; ++c) c2w(r, c) = tm[r][c].get<double>();
      }
      const Image img = read_image(dir / rel, background);
      if (width < 0) {
        width = img.width;
        height = img.height;
      } else if (img.width != width || img.height != height) {
        throw Error("image is " + std::to_string(img.width) + "x" + std::to_string(img.height) + ", expected " +
                    std::to_string(width) + "x" + std::to_string(height));
      }
      out.cameras.push_back(Camera::from_fov(img.width, img.height, out.camera_angle_x, c2w));
      out.images.push_back(img);
      out.files.push_back(rel.string());
    } catch (const nlohmann::json::exception& e) {
      throw Error(where + ": " + e.what());
    } catch (const Error& e) {
      throw Error(where + " (" + fr.value("file_path", std::string("?")) + "): " + e.what());
    }
  }
  return out;
}

/// Cameras of a transforms json without reading its images.
inline std::vector<Camera> load_poses(const std::filesystem::path& json_path, int width, int height) {
  std::ifstream is(json_path);
  if (!is) throw Error("cannot open " + json_path.string());
  try {
    const nlohmann::json j = nlohmann::json::parse(is);
    const double angle = j.at("camera_angle_x").get<double>();
    std::vector<Camera> cams;
    for (const auto& fr : j.at("frames")) {
      const auto& tm = fr.at("transform_matrix");
      Mat4 c2w;
      for (int r = 0; r < 4; ++r) {
        for (int c = 0; c < 4; ++c) c2w(r, c) = tm.at(r).at(c).get<double>();
      }
      cams.push_back(Camera::from_fov(width, height, angle, c2w));
    }
    if (cams.empty()) throw Error("no frames");
    return cams;
  } catch (const nlohmann::json::exception& e) {
    throw Error(json_path.string() + ": " + e.what());
  } catch (const Error& e) {
    throw Error(json_path.string() + ": " + e.what());
  }
}

/// Writes transforms_<split>.json; images are written by the caller.
inline void write_split_json(const std::filesystem::path& dir, const std::string& split, double camera_angle_x,
                             const std::vector<Camera>& cams, const std::vector<std::string>& files,
                             const std::optional<Aabb>& aabb) {
  nlohmann::json j;
  j["camera_angle_x"] = camera_angle_x;
  if (aabb) {
    j["aabb"] = {{aabb->min.x(), aabb->min.y(), aabb->min.z()}, {aabb->max.x(), aabb->max.y(), aabb->max.z()}};
  }
  j["frames"] = nlohmann::json::array();
  for (std::size_t i = 0; i < cams.size(); ++i) {
    nlohmann::json m = nlohmann::json::array();
    for (int r = 0; r < 4; ++r) m.push_back({cams[i].c2w(r, 0), cams[i].c2w(r, 1), cams[i].c2w(r, 2), cams[i].c2w(r, 3)});
    j["frames"].push_back({{"file_path", files[i]}, {"transform_matrix", m}});
  }
  std::ofstream os(dir / split_json_name(split));
  if (!os) throw Error("cannot write " + (dir / split_json_name(split)).string());
  os << j.dump(2) << '\n';
}

/// Cameras on a sphere around the origin; azimuth uniform, elevation
/// uniform in the orbit's range.
inline std::vector<Camera> random_orbit(const OrbitSpec& orbit, int count, int width, int height, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  constexpr double kTwoPi = 6.28318530717958647692;
  std::vector<Camera> cams;
  for (int i = 0; i < count; ++i) {
    const double az = kTwoPi * unit(rng);
    const double el = orbit.elevation_min + (orbit.elevation_max - orbit.elevation_min) * unit(rng);
    const Vec3 eye = orbit.radius * Vec3(std::cos(el) * std::cos(az), std::cos(el) * std::sin(az), std::sin(el));
    cams.push_back(Camera::from_fov(width, height, orbit.camera_angle_x, look_at(eye, Vec3::Zero())));
  }
  return cams;
}

/// Dense ground truth over the scene bounds (.ccgt): "CCGT", u16 version,
/// u32 res xyz, 6 x f64 box, then sigma and view-independent rgb as f32,
/// each x-major ((i * ny + j) * nz + k), rgb interleaved.
struct DenseTruth {
  GridSize res;
  Aabb box;
  std::vector<float> sigma;
  std::vector<float> rgb;
};

inline DenseTruth sample_dense_truth(const AnalyticScene& scene, GridSize res) {
  DenseTruth gt;
  gt.res = res;
  gt.box = scene.bounds;
  const auto n = static_cast<std::size_t>(res.cells());
  gt.sigma.resize(n);
  gt.rgb.resize(3 * n);
  std::size_t idx = 0;
  for (int i = 0; i < res.x; ++i) {
    for (int j = 0; j < res.y; ++j) {
      for (int k = 0; k < res.z; ++k, ++idx) {
        const Vec3 u(res.x > 1 ? static_cast<double>(i) / (res.x - 1) : 0.5,
                     res.y > 1 ? static_cast<double>(j) / (res.y - 1) : 0.5,
                     res.z > 1 ? static_cast<double>(k) / (res.z - 1) : 0.5);
        const auto [s, c] = scene.sample(scene.bounds.to_world(u), Vec3::UnitX());
        gt.sigma[idx] = static_cast<float>(s);
        for (int a = 0; a < 3; ++a) gt.rgb[3 * idx + a] = static_cast<float>(c[a]);
      }
    }
  }
  return gt;
}

inline void save_dense_truth(const std::filesystem::path& path, const DenseTruth& gt) {
  detail::Writer w;
  w.raw("CCGT", 4);
  w.put<std::uint16_t>(1);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(gt.res.x));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(gt.res.y));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(gt.res.z));
  detail::put_box(w, gt.box);
  w.raw(gt.sigma.data(), gt.sigma.size() * 4);
  w.raw(gt.rgb.data(), gt.rgb.size() * 4);
  detail::write_file(path, w.bytes);
}

inline DenseTruth load_dense_truth(const std::filesystem::path& path) {
  const auto bytes = detail::read_file(path);
  detail::Reader r(bytes, path.string());
  detail::check_magic(r, "CCGT", 1, path.string());
  DenseTruth gt;
  gt.res.x = static_cast<int>(r.get<std::uint32_t>());
  gt.res.y = static_cast<int>(r.get<std::uint32_t>());
  gt.res.z = static_cast<int>(r.get<std::uint32_t>());
  gt.box = detail::get_box(r);
  const auto n = static_cast<std::size_t>(gt.res.cells());
  if (bytes.size() != r.pos() + 16 * n) throw Error(path.string() + " has the wrong size for its header");
  gt.sigma.resize(n);
  gt.rgb.resize(3 * n);
  r.raw(gt.sigma.data(), 4 * n);
  r.raw(gt.rgb.data(), 12 * n);
  return gt;
}

struct GenerateOptions {
  int train_views = 40;
  int test_views = 8;
  int width = 128;
  int height = 128;
  std::uint64_t seed = 0;
  int truth_res = 64;
  int threads = 0;
};

/// Renders an analytic scene into a dataset directory with train and test
/// splits, plus gt.ccgt. The box written to the json is the scene bounds.
inline void generate_dataset(const AnalyticScene& scene, const GenerateOptions& opt, const std::filesystem::path& dir) {
  scene.validate();
  if (opt.train_views < 1 || opt.test_views < 0) throw Error("need at least one training view");
  if (opt.width < 1 || opt.height < 1) throw Error("image size must be positive");
  std::filesystem::create_directories(dir);
  const int workers = opt.threads > 0 ? opt.threads : default_thread_count();
  struct SplitPlan {
    const char* name;
    int count;
    std::uint64_t seed;
  };
  const SplitPlan plans[] = {{"train", opt.train_views, opt.seed * 2 + 1}, {"test", opt.test_views, opt.seed * 2 + 2}};
  for (const auto& plan : plans) {
    std::filesystem::create_directories(dir / plan.name);
    const auto cams = random_orbit(scene.orbit, plan.count, opt.width, opt.height, plan.seed);
    std::vector<std::string> files;
    for (int v = 0; v < plan.count; ++v) {
      const std::string rel = std::string("./") + plan.name + "/r_" + std::to_string(v);
      OracleOptions premul;
      premul.background = Vec3::Zero();
      const OracleImage img = oracle_render(scene, cams[static_cast<std::size_t>(v)], premul, workers);
      // Unpremultiplied color with alpha, so loaders can pick the background.
      Image straight(img.rgb.width, img.rgb.height);
      for (std::size_t p = 0; p < img.alpha.size(); ++p) {
        const float a = img.alpha[p];
        for (int k = 0; k < 3; ++k) straight.rgb[3 * p + k] = a > 0.0f ? img.rgb.rgb[3 * p + k] / a : 0.0f;
      }
      write_png(dir / (rel.substr(2) + ".png"), straight, img.alpha);
      files.push_back(rel);
    }
    write_split_json(dir, plan.name, scene.orbit.camera_angle_x, cams, files, scene.bounds);
  }
  if (opt.truth_res > 1) {
    save_dense_truth(dir / "gt.ccgt", sample_dense_truth(scene, {opt.truth_res, opt.truth_res, opt.truth_res}));
  }
}

}  // namespace ccfield::io
