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

// Pinhole cameras, ray marching with occupancy skipping, and the
// emission-absorption quadrature
//
//   C = sum_i T_i a_i c_i + T_final * background,
//   a_i = 1 - exp(-sigma_i * delta),  T_i = prod_{j<i} (1 - a_j).
//
// The marcher evaluates M rank prefixes of a model on one shared sample
// grid; M = 1 is an ordinary render.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <iostream>
#include <limits>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "ccfield/common.hpp"
#include "ccfield/field.hpp"
#include "ccfield/shading.hpp"

namespace ccfield {

struct Ray {
  Vec3 origin = Vec3::Zero();
  Vec3 dir = Vec3(0, 0, -1);
};

/// Pinhole camera. Camera space looks along -z with x right and y up; c2w
/// maps camera space to world space.
struct Camera {
  int width = 0;
  int height = 0;
  double focal = 1.0;
  Mat4 c2w = Mat4::Identity();

  static Camera from_fov(int width, int height, double camera_angle_x, const Mat4& c2w) {
    Camera cam;
    cam.width = width;
    cam.height = height;
    cam.focal = 0.5 * width / std::tan(0.5 * camera_angle_x);
    cam.c2w = c2w;
    cam.validate();
    return cam;
  }

  void validate() const {
    if (width < 1 || height < 1) throw Error("camera needs a positive image size");
    if (!(focal > 0.0) || !std::isfinite(focal)) throw Error("camera focal length must be positive");
    const Mat3 rot = c2w.block<3, 3>(0, 0);
    if (!((rot.transpose() * rot - Mat3::Identity()).cwiseAbs().maxCoeff() < 1e-5)) {
      throw Error("camera rotation is not orthonormal");
    }
  }

  /// Ray through the centre of pixel (px, py); py counts rows from the top.
  Ray ray(int px, int py) const {
    const Vec3 d_cam((px + 0.5 - 0.5 * width) / focal, -(py + 0.5 - 0.5 * height) / focal, -1.0);
    Ray r;
    r.origin = c2w.block<3, 1>(0, 3);
    r.dir = (c2w.block<3, 3>(0, 0) * d_cam).normalized();
    return r;
  }
};

/// Rays for flat pixel indices (index = py * width + px).
inline std::vector<Ray> generate_rays(const Camera& cam, std::span<const std::int64_t> pixels) {
  std::vector<Ray> out;
  out.reserve(pixels.size());
  for (const auto p : pixels) {
    if (p < 0 || p >= static_cast<std::int64_t>(cam.width) * cam.height) throw Error("pixel index out of range");
    out.push_back(cam.ray(static_cast<int>(p % cam.width), static_cast<int>(p / cam.width)));
  }
  return out;
}

/// Camera-to-world matrix for a camera at `eye` looking at `target`.
inline Mat4 look_at(const Vec3& eye, const Vec3& target, const Vec3& up_hint = Vec3(0, 0, 1)) {
  const Vec3 back = (eye - target).normalized();
  Vec3 right = up_hint.cross(back);
  if (right.norm() < 1e-9) right = Vec3(0, 1, 0).cross(back);
  right.normalize();
  const Vec3 up = back.cross(right);
  Mat4 m = Mat4::Identity();
  m.block<3, 1>(0, 0) = right;
  m.block<3, 1>(0, 1) = up;
  m.block<3, 1>(0, 2) = back;
  m.block<3, 1>(0, 3) = eye;
  return m;
}

/// Evenly spaced azimuths at a fixed elevation, looking at `target`.
inline std::vector<Camera> orbit_cameras(int count, int width, int height, double camera_angle_x, double radius,
                                         double elevation, const Vec3& target = Vec3::Zero()) {
  std::vector<Camera> cams;
  constexpr double kTwoPi = 6.28318530717958647692;
  for (int i = 0; i < count; ++i) {
    const double az = kTwoPi * i / count;
    const Vec3 eye = target + radius * Vec3(std::cos(elevation) * std::cos(az), std::cos(elevation) * std::sin(az),
                                            std::sin(elevation));
    cams.push_back(Camera::from_fov(width, height, camera_angle_x, look_at(eye, target)));
  }
  return cams;
}

/// Slab test; the interval is clipped to t >= 0.
inline std::optional<std::pair<double, double>> ray_aabb(const Ray& ray, const Aabb& box) {
  double t0 = 0.0;
  double t1 = std::numeric_limits<double>::infinity();
  for (int a = 0; a < 3; ++a) {
    const double o = ray.origin[a];
    const double d = ray.dir[a];
    if (d == 0.0) {
      if (o < box.min[a] || o > box.max[a]) return std::nullopt;
      continue;
    }
    double ta = (box.min[a] - o) / d;
    double tb = (box.max[a] - o) / d;
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
  }
  if (!(t1 > t0)) return std::nullopt;
  return std::make_pair(t0, t1);
}

struct RenderOptions {
  double samples_per_diagonal = 512.0;  // step = aabb diagonal / this
  Vec3 background = Vec3::Ones();
  double termination = 1e-4;            // stop once transmittance drops below
  int max_samples = 4096;
  double color_weight_threshold = 1e-4; // skip shading when T*alpha is below; 0 shades everything
  int threads = 0;                      // 0: default_thread_count()

  void validate() const {
    if (!(samples_per_diagonal > 0) || max_samples < 1 || termination < 0 || color_weight_threshold < 0) {
      throw Error("render options must be positive");
    }
  }
  int worker_count() const { return threads > 0 ? threads : default_thread_count(); }
};

/// Binary mask over its own box; cells are x-major (i * ny + j) * nz + k.
struct OccupancyGrid {
  GridSize res;  // all zero: pruning disabled
  Aabb box;
  std::vector<std::uint8_t> cells;

  bool enabled() const { return res.cells() > 0; }

  std::int64_t occupied_count() const {
    return std::count_if(cells.begin(), cells.end(), [](std::uint8_t c) { return c != 0; });
  }

  std::int64_t index(int i, int j, int k) const {
    return (static_cast<std::int64_t>(i) * res.y + j) * res.z + k;
  }

  bool occupied(const Vec3& world) const {
    const Vec3 u = box.to_local(world);
    int idx[3];
    for (int a = 0; a < 3; ++a) {
      if (!(u[a] >= 0.0 && u[a] <= 1.0)) return false;
      idx[a] = std::min(static_cast<int>(u[a] * res[a]), res[a] - 1);
    }
    return cells[static_cast<std::size_t>(index(idx[0], idx[1], idx[2]))] != 0;
  }

  Vec3 cell_center(int i, int j, int k) const {
    return box.to_world(Vec3((i + 0.5) / res.x, (j + 0.5) / res.y, (k + 0.5) / res.z));
  }
};

/// A trained model: density and color decompositions over one box.
template <typename T>
struct FieldPair {
  DecomposedField<T> density;
  DecomposedField<T> color;
  Aabb aabb;
  ShadingConfig shading;
  OccupancyGrid occupancy;

  void validate() const {
    shading.validate();
    if (!aabb.valid()) throw Error("model bounding box is invalid");
    if (density.channels != 1) throw Error("density field must have one channel");
    if (color.channels != shading.color_channels()) throw Error("color field channel count does not match sh degree");
    density.validate();
    color.validate();
    if (occupancy.enabled() && occupancy.cells.size() != static_cast<std::size_t>(occupancy.res.cells())) {
      throw Error("occupancy grid size mismatch");
    }
  }

  template <typename U>
  FieldPair<U> cast() const {
    return FieldPair<U>{density.template cast<U>(), color.template cast<U>(), aabb, shading, occupancy};
  }

  int prefix_count() const { return std::max(density.layout.group_count(), color.layout.group_count()); }
};

struct RaySegment {
  double t_near = 0;
  double t_far = 0;
  double step = 0;
  double offset = 0.5;
  int count = 0;

  double t(int i) const { return t_near + (i + offset) * step; }
};

/// Uniform samples t_near + (i + offset) * step strictly inside (t_near, t_far).
inline RaySegment make_segment(double t_near, double t_far, double step, int max_samples, double offset = 0.5) {
  RaySegment seg{t_near, t_far, step, offset, 0};
  const double span = (t_far - t_near) / step - offset;
  int n = span > 0 ? static_cast<int>(std::ceil(span)) : 0;
  n = std::min(n, max_samples + 1);
  while (n > 0 && seg.t(n - 1) >= t_far) --n;
  while (n < max_samples && seg.t(n) < t_far) ++n;
  seg.count = std::min(n, max_samples);
  return seg;
}

/// Column ranges of S belonging to each group, [vec range, mat range].
struct GroupColumns {
  std::vector<std::array<int, 4>> ranges;

  /// With `merged`, all ranks form one pseudo-group.
  GroupColumns(const RankLayout& layout, bool merged) {
    const int nv = layout.n_vec();
    const int nm = layout.n_mat();
    if (merged) {
      ranges.push_back({0, nv, nv, nv + nm});
      return;
    }
    for (int g = 0; g < layout.group_count(); ++g) {
      const RankCounts lo = layout.prefix(g);
      const RankCounts hi = layout.prefix(g + 1);
      ranges.push_back({lo.vec, hi.vec, nv + lo.mat, nv + hi.mat});
    }
  }
  int count() const { return static_cast<int>(ranges.size()); }
};

/// Per-ray record of the forward march, enough for reverse-mode gradients.
/// Entries are indexed [sample * M + m].
template <typename T>
struct RayTape {
  int prefixes = 0;
  T step = T(0);
  std::array<T, kMaxShCoeffs> sh{};
  std::vector<Vec3> local;            // normalized sample coordinates
  std::vector<T> raw_density;
  std::vector<T> sigma;
  std::vector<T> trans;               // transmittance before the sample
  std::vector<T> rgb;                 // 3 per entry
  std::vector<std::uint8_t> shaded;
  std::vector<int> count;             // samples used by prefix m
  std::vector<T> final_trans;         // per prefix

  void reset(int m) {
    prefixes = m;
    local.clear();
    raw_density.clear();
    sigma.clear();
    trans.clear();
    rgb.clear();
    shaded.clear();
    count.assign(static_cast<std::size_t>(m), 0);
    final_trans.assign(static_cast<std::size_t>(m), T(1));
  }
  int samples() const { return static_cast<int>(local.size()); }
};

template <typename T>
struct MarchWorkspace {
  RankSamples<T> dens;
  RankSamples<T> col;
  std::vector<T> dens_group;   // per density group
  std::vector<T> col_group;    // per color group * C
  std::vector<T> prefix_raw;   // per prefix
  std::vector<T> prefix_feat;  // per prefix * C
  std::vector<T> trans, acc, weight, sigma, rgb;
  std::vector<T> dens_st, col_st;  // rank-major S
  std::vector<std::uint8_t> done;
};

/// Sums group partials into M prefixes; prefix m uses groups 0..min(m, G-1).
template <typename T>
void prefix_sums(const T* group_vals, int groups, int width, int prefixes, T* out) {
  for (int m = 0; m < prefixes; ++m) {
    T* dst = out + static_cast<std::size_t>(m) * width;
    if (m < groups) {
      const T* src = group_vals + static_cast<std::size_t>(m) * width;
      if (m == 0) {
        std::copy(src, src + width, dst);
      } else {
        const T* prev = out + static_cast<std::size_t>(m - 1) * width;
        for (int c = 0; c < width; ++c) dst[c] = prev[c] + src[c];
      }
    } else {
      const T* prev = out + static_cast<std::size_t>(m - 1) * width;
      std::copy(prev, prev + width, dst);
    }
  }
}

/// S transposed to rank-major (rank x channels) so per-sample features
/// are contiguous axpys.
template <typename T>
void transpose_s(const DecomposedField<T>& f, std::vector<T>& st) {
  const int C = f.channels;
  const int R = f.rank();
  st.resize(static_cast<std::size_t>(R) * C);
  for (int c = 0; c < C; ++c) {
    for (int r = 0; r < R; ++r) st[static_cast<std::size_t>(r) * C + c] = f.s[static_cast<std::size_t>(c) * R + r];
  }
}

template <typename T>
void group_partials(int C, const T* st, const GroupColumns& cols, const T* prod, T* out) {
  std::fill(out, out + static_cast<std::size_t>(cols.count()) * C, T(0));
  for (int g = 0; g < cols.count(); ++g) {
    const auto& rg = cols.ranges[g];
    T* dst = out + static_cast<std::size_t>(g) * C;
    for (int span = 0; span < 2; ++span) {
      for (int r = rg[2 * span]; r < rg[2 * span + 1]; ++r) {
        const T p = prod[r];
        const T* col = st + static_cast<std::size_t>(r) * C;
        for (int c = 0; c < C; ++c) dst[c] += col[c] * p;
      }
    }
  }
}

/// Marches `prefixes` rank prefixes of `model` along one ray. Writes 3*M
/// colors and M alphas. The tape, if given, is filled for backprop.
template <typename T>
void march_prefixes(const FieldPair<T>& model, const Ray& ray, const RenderOptions& opts, int prefixes,
                    MarchWorkspace<T>& ws, T* rgb_out, T* alpha_out, RayTape<T>* tape = nullptr,
                    double offset = 0.5) {
  const int M = prefixes;
  const bool merged = M == 1;
  const GroupColumns dcols(model.density.layout, merged);
  const GroupColumns ccols(model.color.layout, merged);
  const int K = model.shading.coeff_count();
  const int C = model.color.channels;
  const Vec3 bg = opts.background;

  if (tape) tape->reset(M);
  auto finish_empty = [&] {
    for (int m = 0; m < M; ++m) {
      for (int k = 0; k < 3; ++k) rgb_out[3 * m + k] = static_cast<T>(bg[k]);
      alpha_out[m] = T(0);
    }
  };
  const auto hit = ray_aabb(ray, model.aabb);
  if (!hit) {
    finish_empty();
    return;
  }
  const double step_d = model.aabb.diagonal() / opts.samples_per_diagonal;
  const RaySegment seg = make_segment(hit->first, hit->second, step_d, opts.max_samples, offset);
  const T step = static_cast<T>(step_d);

  std::array<T, kMaxShCoeffs> sh{};
  {
    const auto basis = sh_basis(ray.dir, model.shading.sh_degree);
    for (int k = 0; k < K; ++k) sh[k] = static_cast<T>(basis[k]);
  }
  if (tape) {
    tape->step = step;
    tape->sh = sh;
  }

  transpose_s(model.density, ws.dens_st);
  transpose_s(model.color, ws.col_st);
  ws.dens_group.resize(static_cast<std::size_t>(dcols.count()));
  ws.col_group.resize(static_cast<std::size_t>(ccols.count()) * C);
  ws.prefix_raw.resize(static_cast<std::size_t>(M));
  ws.prefix_feat.resize(static_cast<std::size_t>(M) * C);
  ws.trans.assign(static_cast<std::size_t>(M), T(1));
  ws.acc.assign(static_cast<std::size_t>(3 * M), T(0));
  ws.weight.resize(static_cast<std::size_t>(M));
  ws.sigma.resize(static_cast<std::size_t>(M));
  ws.rgb.resize(static_cast<std::size_t>(3 * M));
  ws.done.assign(static_cast<std::size_t>(M), 0);
  int live = M;
  const T thr = static_cast<T>(opts.color_weight_threshold);
  const T term = static_cast<T>(opts.termination);
  const double shift = model.shading.density_shift;

  for (int i = 0; i < seg.count && live > 0; ++i) {
    const Vec3 p = ray.origin + seg.t(i) * ray.dir;
    if (model.occupancy.enabled() && !model.occupancy.occupied(p)) continue;
    const Vec3 u = model.aabb.to_local(p).cwiseMax(0.0).cwiseMin(1.0);

    sample_ranks(model.density, make_stencil<T>(model.density.res, u), ws.dens);
    group_partials(1, ws.dens_st.data(), dcols, ws.dens.prod.data(), ws.dens_group.data());
    prefix_sums(ws.dens_group.data(), dcols.count(), 1, M, ws.prefix_raw.data());

    bool need_color = false;
    for (int m = 0; m < M; ++m) {
      if (ws.done[m]) continue;
      const T sigma = softplus(ws.prefix_raw[m] + static_cast<T>(shift));
      const T alpha = -std::expm1(-sigma * step);
      ws.sigma[m] = sigma;
      ws.weight[m] = ws.trans[m] * alpha;
      if (thr <= T(0) || ws.weight[m] >= thr) need_color = true;
    }
    if (need_color) {
      sample_ranks(model.color, make_stencil<T>(model.color.res, u), ws.col);
      group_partials(C, ws.col_st.data(), ccols, ws.col.prod.data(), ws.col_group.data());
      prefix_sums(ws.col_group.data(), ccols.count(), C, M, ws.prefix_feat.data());
    }

    if (tape) tape->local.push_back(u);
    for (int m = 0; m < M; ++m) {
      const bool active = !ws.done[m];
      const bool shade = active && need_color && (thr <= T(0) || ws.weight[m] >= thr);
      T* c = ws.rgb.data() + 3 * m;
      if (shade) {
        decode_color(ws.prefix_feat.data() + static_cast<std::size_t>(m) * C, sh.data(), K, c);
        for (int k = 0; k < 3; ++k) ws.acc[3 * m + k] += ws.weight[m] * c[k];
      } else {
        c[0] = c[1] = c[2] = T(0);
      }
      if (tape) {
        tape->raw_density.push_back(ws.prefix_raw[m]);
        tape->sigma.push_back(active ? ws.sigma[m] : T(0));
        tape->trans.push_back(ws.trans[m]);
        tape->rgb.insert(tape->rgb.end(), c, c + 3);
        tape->shaded.push_back(shade ? 1 : 0);
      }
      if (active) {
        ws.trans[m] -= ws.weight[m];
        if (tape) tape->count[m] = tape->samples();
        if (ws.trans[m] < term) {
          ws.done[m] = 1;
          --live;
        }
      }
    }
  }

  for (int m = 0; m < M; ++m) {
    for (int k = 0; k < 3; ++k) rgb_out[3 * m + k] = ws.acc[3 * m + k] + ws.trans[m] * static_cast<T>(bg[k]);
    alpha_out[m] = T(1) - ws.trans[m];
    if (tape) tape->final_trans[m] = ws.trans[m];
  }
}

struct MarchResult {
  std::array<double, 3> rgb{};
  double alpha = 0.0;
};

template <typename T>
MarchResult march_ray(const FieldPair<T>& model, const Ray& ray, const RenderOptions& opts) {
  MarchWorkspace<T> ws;
  T rgb[3];
  T alpha;
  march_prefixes(model, ray, opts, 1, ws, rgb, &alpha);
  return {{static_cast<double>(rgb[0]), static_cast<double>(rgb[1]), static_cast<double>(rgb[2])},
          static_cast<double>(alpha)};
}

/// Row-major float RGB image.
struct Image {
  int width = 0;
  int height = 0;
  std::vector<float> rgb;

  Image() = default;
  Image(int w, int h) : width(w), height(h), rgb(static_cast<std::size_t>(w) * h * 3, 0.0f) {}
  float* pixel(int x, int y) { return rgb.data() + (static_cast<std::size_t>(y) * width + x) * 3; }
  const float* pixel(int x, int y) const { return rgb.data() + (static_cast<std::size_t>(y) * width + x) * 3; }
};

/// Renders each pixel independently with `march(ray, rgb_out)`; rows are
/// split across workers, so the output does not depend on worker count.
template <typename MarchFn>
Image render_pixels(const Camera& cam, int workers, MarchFn&& march) {
  Image img(cam.width, cam.height);
  parallel_for(workers, static_cast<std::size_t>(cam.height), [&](int, std::size_t y0, std::size_t y1) {
    for (std::size_t y = y0; y < y1; ++y) {
      for (int x = 0; x < cam.width; ++x) {
        march(cam.ray(x, static_cast<int>(y)), img.pixel(x, static_cast<int>(y)));
      }
    }
  });
  return img;
}

template <typename T>
Image render_image(const FieldPair<T>& model, const Camera& cam, const RenderOptions& opts) {
  opts.validate();
  return render_pixels(cam, opts.worker_count(), [&](const Ray& ray, float* out) {
    thread_local MarchWorkspace<T> ws;
    T rgb[3];
    T alpha;
    march_prefixes(model, ray, opts, 1, ws, rgb, &alpha);
    for (int k = 0; k < 3; ++k) out[k] = static_cast<float>(rgb[k]);
  });
}

/// Full-model density at a world point (no occupancy test).
template <typename T>
T density_at(const FieldPair<T>& model, const Vec3& world, RankSamples<T>& scratch) {
  const Vec3 u = model.aabb.to_local(world).cwiseMax(0.0).cwiseMin(1.0);
  sample_ranks(model.density, make_stencil<T>(model.density.res, u), scratch);
  T raw = T(0);
  accumulate_features(model.density, scratch.prod.data(), 0, model.density.rank(), &raw);
  return decode_density(raw, model.shading);
}

/// Marks every cell whose centre density exceeds tau, then dilates by
/// `dilation` cells (cube neighbourhood). The grid covers model.aabb.
template <typename T>
OccupancyGrid build_occupancy(const FieldPair<T>& model, GridSize res, double tau, int dilation = 1,
                              int workers = 0) {
  if (res.x < 1 || res.y < 1 || res.z < 1) throw Error("occupancy resolution must be positive");
  OccupancyGrid grid;
  grid.res = res;
  grid.box = model.aabb;
  std::vector<std::uint8_t> raw(static_cast<std::size_t>(res.cells()), 0);
  const int nw = workers > 0 ? workers : default_thread_count();
  parallel_for(nw, static_cast<std::size_t>(res.x), [&](int, std::size_t i0, std::size_t i1) {
    RankSamples<T> scratch;
    for (std::size_t i = i0; i < i1; ++i) {
      for (int j = 0; j < res.y; ++j) {
        for (int k = 0; k < res.z; ++k) {
          const T sigma = density_at(model, grid.cell_center(static_cast<int>(i), j, k), scratch);
          raw[static_cast<std::size_t>(grid.index(static_cast<int>(i), j, k))] = sigma > static_cast<T>(tau) ? 1 : 0;
        }
      }
    }
  });
  // Separable max filter along each axis.
  for (int axis = 0; axis < 3 && dilation > 0; ++axis) {
    std::vector<std::uint8_t> next(raw.size(), 0);
    for (int i = 0; i < res.x; ++i) {
      for (int j = 0; j < res.y; ++j) {
        for (int k = 0; k < res.z; ++k) {
          const int c[3] = {i, j, k};
          std::uint8_t v = 0;
          for (int d = -dilation; d <= dilation && !v; ++d) {
            int q[3] = {c[0], c[1], c[2]};
            q[axis] += d;
            if (q[axis] < 0 || q[axis] >= res[axis]) continue;
            v = raw[static_cast<std::size_t>(grid.index(q[0], q[1], q[2]))];
          }
          next[static_cast<std::size_t>(grid.index(i, j, k))] = v;
        }
      }
    }
    raw.swap(next);
  }
  grid.cells = std::move(raw);
  return grid;
}

/// Tight box around the occupied cells; nullopt when nothing is occupied.
inline std::optional<Aabb> shrink_aabb(const OccupancyGrid& grid) {
  int lo[3] = {grid.res.x, grid.res.y, grid.res.z};
  int hi[3] = {-1, -1, -1};
  for (int i = 0; i < grid.res.x; ++i) {
    for (int j = 0; j < grid.res.y; ++j) {
      for (int k = 0; k < grid.res.z; ++k) {
        if (!grid.cells[static_cast<std::size_t>(grid.index(i, j, k))]) continue;
        const int c[3] = {i, j, k};
        for (int a = 0; a < 3; ++a) {
          lo[a] = std::min(lo[a], c[a]);
          hi[a] = std::max(hi[a], c[a]);
        }
      }
    }
  }
  if (hi[0] < 0) return std::nullopt;
  Aabb out;
  Vec3 ulo, uhi;
  for (int a = 0; a < 3; ++a) {
    ulo[a] = static_cast<double>(lo[a]) / grid.res[a];
    uhi[a] = static_cast<double>(hi[a] + 1) / grid.res[a];
  }
  out.min = grid.box.to_world(ulo);
  out.max = grid.box.to_world(uhi);
  return out;
}

constexpr double kPsnrCap = 99.0;

/// 10 log10(1 / MSE) over all channels, capped at 99 dB.
inline double psnr_from_mse(double mse) {
  if (!(mse > 0.0)) return kPsnrCap;
  return std::min(kPsnrCap, -10.0 * std::log10(mse));
}

inline double mse(const Image& a, const Image& b) {
  if (a.width != b.width || a.height != b.height) throw Error("image dimensions differ");
  if (a.rgb.empty()) return 0.0;
  double acc = 0.0;
  for (std::size_t i = 0; i < a.rgb.size(); ++i) {
    const double d = static_cast<double>(a.rgb[i]) - static_cast<double>(b.rgb[i]);
    acc += d * d;
  }
  return acc / static_cast<double>(a.rgb.size());
}

inline double psnr(const Image& a, const Image& b) { return psnr_from_mse(mse(a, b)); }

}  // namespace ccfield
