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

// Multi-object scenes. Each instance places a trained model in the world
// with x_world = R (s * x_object) + t. Rays are warped into every object's
// frame; per sample, densities add and colors blend with softmax(sigma)
// over the objects whose box contains the sample.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ccfield/common.hpp"
#include "ccfield/compressor.hpp"
#include "ccfield/field.hpp"
#include "ccfield/renderer.hpp"
#include "ccfield/shading.hpp"

namespace ccfield {

struct AffineTransform {
  Vec3 translation = Vec3::Zero();
  Eigen::Quaterniond rotation = Eigen::Quaterniond::Identity();
  Vec3 scale = Vec3::Ones();

  void validate() const {
    if (std::abs(rotation.norm() - 1.0) > 1e-6) throw Error("rotation quaternion must have unit norm");
    if (!(scale.array() > 0.0).all() || !scale.allFinite()) throw Error("scale must be positive");
    if (!translation.allFinite()) throw Error("translation must be finite");
  }

  Mat3 rotation_matrix() const { return rotation.toRotationMatrix(); }

  Mat4 object_to_world() const {
    Mat4 m = Mat4::Identity();
    m.block<3, 3>(0, 0) = rotation_matrix() * scale.asDiagonal();
    m.block<3, 1>(0, 3) = translation;
    return m;
  }

  Mat4 world_to_object() const {
    Mat4 m = Mat4::Identity();
    const Mat3 rt = rotation_matrix().transpose();
    m.block<3, 3>(0, 0) = scale.cwiseInverse().asDiagonal() * rt;
    m.block<3, 1>(0, 3) = -(scale.cwiseInverse().asDiagonal() * (rt * translation));
    return m;
  }

  Vec3 to_world(const Vec3& p) const { return rotation_matrix() * scale.cwiseProduct(p) + translation; }
  Vec3 to_object(const Vec3& p) const {
    return (rotation_matrix().transpose() * (p - translation)).cwiseQuotient(scale);
  }
};

struct WarpedRay {
  Ray ray;                 // object-space ray, unit direction
  double length_scale = 1; // object t = world t * length_scale
  Vec3 view_dir;           // direction used for the sh lookup
};

inline WarpedRay warp_ray(const Ray& ray, const AffineTransform& xf) {
  const Mat3 rt = xf.rotation_matrix().transpose();
  WarpedRay w;
  w.ray.origin = xf.to_object(ray.origin);
  const Vec3 d = (rt * ray.dir).cwiseQuotient(xf.scale);
  w.length_scale = d.norm();
  w.ray.dir = d / w.length_scale;
  w.view_dir = rt * ray.dir;
  return w;
}

struct SampleBlend {
  double alpha = 0.0;
  std::array<double, 3> rgb{};
};

/// alpha = 1 - exp(-delta * sum sigma); color = softmax(sigma)-weighted mix.
inline SampleBlend composite_sample(std::span<const double> sigma, std::span<const std::array<double, 3>> colors,
                                    double delta) {
  if (sigma.empty() || sigma.size() != colors.size()) throw Error("composite_sample needs matching non-empty lists");
  SampleBlend out;
  double total = 0.0;
  double top = -std::numeric_limits<double>::infinity();
  for (const double s : sigma) {
    total += s;
    top = std::max(top, s);
  }
  out.alpha = -std::expm1(-delta * total);
  double norm = 0.0;
  for (std::size_t n = 0; n < sigma.size(); ++n) {
    const double w = std::exp(sigma[n] - top);
    norm += w;
    for (int k = 0; k < 3; ++k) out.rgb[k] += w * colors[n][k];
  }
  for (int k = 0; k < 3; ++k) out.rgb[k] /= norm;
  return out;
}

template <typename T>
struct ObjectInstance {
  int id = 0;
  std::shared_ptr<const FieldPair<T>> model;  // after LOD truncation
  AffineTransform transform;
  std::optional<RankCounts> lod;
  RankCounts density_ranks;
  RankCounts color_ranks;
};

template <typename T>
class Scene {
 public:
  Vec3 background = Vec3::Ones();

  /// Adds a model; with `lod`, its color field is sort-and-truncated first.
  int add_instance(std::shared_ptr<const FieldPair<T>> model, const AffineTransform& xf,
                   std::optional<RankCounts> lod = std::nullopt) {
    if (!model) throw Error("instance needs a model");
    xf.validate();
    model->validate();
    if (lod) {
      auto copy = std::make_shared<FieldPair<T>>(*model);
      copy->color = sort_and_truncate(model->color, *lod);
      model = std::move(copy);
    }
    ObjectInstance<T> inst;
    inst.id = next_id_++;
    inst.model = std::move(model);
    inst.transform = xf;
    inst.lod = lod;
    inst.density_ranks = inst.model->density.layout.totals();
    inst.color_ranks = inst.model->color.layout.totals();
    instances_.push_back(std::move(inst));
    return instances_.back().id;
  }

  void remove_instance(int id) {
    const auto it = std::find_if(instances_.begin(), instances_.end(), [id](const auto& i) { return i.id == id; });
    if (it == instances_.end()) throw Error("no instance with id " + std::to_string(id));
    instances_.erase(it);
  }

  const std::vector<ObjectInstance<T>>& instances() const { return instances_; }

  RankCounts total_density_ranks() const { return sum_ranks(&ObjectInstance<T>::density_ranks); }
  RankCounts total_color_ranks() const { return sum_ranks(&ObjectInstance<T>::color_ranks); }

  /// Union of the transformed object boxes.
  Aabb world_aabb() const {
    if (instances_.empty()) throw Error("scene has no instances");
    Aabb out{Vec3::Constant(std::numeric_limits<double>::infinity()),
             Vec3::Constant(-std::numeric_limits<double>::infinity())};
    for (const auto& inst : instances_) {
      const Aabb& b = inst.model->aabb;
      for (int c = 0; c < 8; ++c) {
        const Vec3 corner((c & 1) ? b.max.x() : b.min.x(), (c & 2) ? b.max.y() : b.min.y(),
                          (c & 4) ? b.max.z() : b.min.z());
        const Vec3 w = inst.transform.to_world(corner);
        out.min = out.min.cwiseMin(w);
        out.max = out.max.cwiseMax(w);
      }
    }
    return out;
  }

 private:
  RankCounts sum_ranks(RankCounts ObjectInstance<T>::*member) const {
    RankCounts acc;
    for (const auto& inst : instances_) {
      acc.vec += (inst.*member).vec;
      acc.mat += (inst.*member).mat;
    }
    return acc;
  }

  std::vector<ObjectInstance<T>> instances_;
  int next_id_ = 0;
};

template <typename T>
struct ComposeWorkspace {
  struct Hit {
    const ObjectInstance<T>* inst;
    WarpedRay warped;
    double t0, t1;  // object-space interval
    std::array<T, kMaxShCoeffs> sh;
  };
  std::vector<Hit> hits;
  std::vector<double> sigma;
  std::vector<std::array<double, 3>> colors;
  std::vector<const Hit*> live;
  RankSamples<T> smp;
  std::vector<T> feat;
};

/// One world-space sample grid over the union of the objects' hit
/// intervals; the step is the finest of the hit objects' own steps.
template <typename T>
MarchResult march_composed(const Scene<T>& scene, const Ray& ray, const RenderOptions& opts,
                           ComposeWorkspace<T>& ws) {
  MarchResult out;
  ws.hits.clear();
  double t_near = std::numeric_limits<double>::infinity();
  double t_far = -std::numeric_limits<double>::infinity();
  double step = std::numeric_limits<double>::infinity();
  for (const auto& inst : scene.instances()) {
    typename ComposeWorkspace<T>::Hit h{&inst, warp_ray(ray, inst.transform), 0, 0, {}};
    const auto iv = ray_aabb(h.warped.ray, inst.model->aabb);
    if (!iv) continue;
    h.t0 = iv->first;
    h.t1 = iv->second;
    t_near = std::min(t_near, h.t0 / h.warped.length_scale);
    t_far = std::max(t_far, h.t1 / h.warped.length_scale);
    const Vec3 world_extent = inst.transform.scale.cwiseProduct(inst.model->aabb.extent());
    step = std::min(step, world_extent.norm() / opts.samples_per_diagonal);
    const auto basis = sh_basis(h.warped.view_dir, inst.model->shading.sh_degree);
    for (int k = 0; k < inst.model->shading.coeff_count(); ++k) h.sh[k] = static_cast<T>(basis[k]);
    ws.hits.push_back(h);
  }
  if (ws.hits.empty()) {
    out.rgb = {scene.background[0], scene.background[1], scene.background[2]};
    return out;
  }
  const RaySegment seg = make_segment(t_near, t_far, step, opts.max_samples);
  double trans = 1.0;
  std::array<double, 3> acc{};
  for (int i = 0; i < seg.count; ++i) {
    const double t = seg.t(i);
    ws.sigma.clear();
    ws.live.clear();
    for (const auto& h : ws.hits) {
      const double to = t * h.warped.length_scale;
      if (to < h.t0 || to > h.t1) continue;
      const FieldPair<T>& m = *h.inst->model;
      const Vec3 p = h.warped.ray.origin + to * h.warped.ray.dir;
      if (m.occupancy.enabled() && !m.occupancy.occupied(p)) continue;
      const Vec3 u = m.aabb.to_local(p).cwiseMax(0.0).cwiseMin(1.0);
      sample_ranks(m.density, make_stencil<T>(m.density.res, u), ws.smp);
      T raw = T(0);
      accumulate_features(m.density, ws.smp.prod.data(), 0, m.density.n_vec(), &raw);
      accumulate_features(m.density, ws.smp.prod.data(), m.density.n_vec(), m.density.rank(), &raw);
      ws.sigma.push_back(static_cast<double>(decode_density(raw, m.shading)));
      ws.live.push_back(&h);
    }
    if (ws.live.empty()) continue;
    double total = 0.0;
    for (const double s : ws.sigma) total += s;
    const double alpha = -std::expm1(-total * step);
    const double weight = trans * alpha;
    if (opts.color_weight_threshold <= 0.0 || weight >= opts.color_weight_threshold) {
      ws.colors.resize(ws.live.size());
      for (std::size_t n = 0; n < ws.live.size(); ++n) {
        const auto& h = *ws.live[n];
        const FieldPair<T>& m = *h.inst->model;
        const Vec3 p = h.warped.ray.origin + t * h.warped.length_scale * h.warped.ray.dir;
        const Vec3 u = m.aabb.to_local(p).cwiseMax(0.0).cwiseMin(1.0);
        sample_ranks(m.color, make_stencil<T>(m.color.res, u), ws.smp);
        ws.feat.assign(static_cast<std::size_t>(m.color.channels), T(0));
        accumulate_features(m.color, ws.smp.prod.data(), 0, m.color.n_vec(), ws.feat.data());
        accumulate_features(m.color, ws.smp.prod.data(), m.color.n_vec(), m.color.rank(), ws.feat.data());
        T rgb[3];
        decode_color(ws.feat.data(), h.sh.data(), m.shading.coeff_count(), rgb);
        ws.colors[n] = {static_cast<double>(rgb[0]), static_cast<double>(rgb[1]), static_cast<double>(rgb[2])};
      }
      const SampleBlend b = composite_sample(ws.sigma, ws.colors, step);
      for (int k = 0; k < 3; ++k) acc[k] += weight * b.rgb[k];
    }
    trans -= weight;
    if (trans < opts.termination) break;
  }
  for (int k = 0; k < 3; ++k) out.rgb[k] = acc[k] + trans * scene.background[k];
  out.alpha = 1.0 - trans;
  return out;
}

template <typename T>
Image render_scene(const Scene<T>& scene, const Camera& cam, const RenderOptions& opts) {
  opts.validate();
  return render_pixels(cam, opts.worker_count(), [&](const Ray& ray, float* px) {
    thread_local ComposeWorkspace<T> ws;
    const MarchResult r = march_composed(scene, ray, opts, ws);
    for (int k = 0; k < 3; ++k) px[k] = static_cast<float>(r.rgb[k]);
  });
}

}  // namespace ccfield
