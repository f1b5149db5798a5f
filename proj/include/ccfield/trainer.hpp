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

// Fitting a FieldPair to posed images.
//
// The loss supervises every rank prefix m = 1..M of the model:
//
//   L = mean_rays sum_m |gt - C_m|^2 + l1 * sum |density factors|
//
// Gradients are computed analytically per ray: compositing, sh/sigmoid
// decoding, softplus, and the decomposition itself. How the loss on
// prefix m reaches the rank groups depends on ResidualMode.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "ccfield/common.hpp"
#include "ccfield/field.hpp"
#include "ccfield/renderer.hpp"
#include "ccfield/shading.hpp"

namespace ccfield {

enum class ResidualMode {
  kParallelNoDetach,  // term m trains every group <= m
  kParallelDetach,    // term m trains group m only
  kSequential,        // one term per stage; earlier groups frozen
};

inline ResidualMode parse_residual_mode(std::string_view s) {
  if (s == "nodetach") return ResidualMode::kParallelNoDetach;
  if (s == "detach") return ResidualMode::kParallelDetach;
  if (s == "sequential") return ResidualMode::kSequential;
  throw Error("unknown residual mode '" + std::string(s) + "' (expected nodetach, detach or sequential)");
}

inline const char* residual_mode_name(ResidualMode m) {
  switch (m) {
    case ResidualMode::kParallelNoDetach: return "nodetach";
    case ResidualMode::kParallelDetach: return "detach";
    case ResidualMode::kSequential: return "sequential";
  }
  return "?";
}

struct LossSpec {
  ResidualMode mode = ResidualMode::kParallelNoDetach;
  double l1 = 0.0;
  int stage = 0;  // active term in sequential mode

  bool term_active(int m) const { return mode != ResidualMode::kSequential || m == stage; }
  bool detached() const { return mode != ResidualMode::kParallelNoDetach; }
};

/// Same shapes as the model; holds gradients or optimizer moments.
template <typename T>
struct ModelGrads {
  DecomposedField<T> density;
  DecomposedField<T> color;

  static ModelGrads zeros_like(const FieldPair<T>& model) {
    return {DecomposedField<T>::zeros(model.density.channels, model.density.res, model.density.layout),
            DecomposedField<T>::zeros(model.color.channels, model.color.res, model.color.layout)};
  }

  void set_zero() {
    for (auto* t : density.tensors()) std::fill(t->begin(), t->end(), T(0));
    for (auto* t : color.tensors()) std::fill(t->begin(), t->end(), T(0));
  }

  void add(const ModelGrads& o) {
    auto a = density.tensors();
    auto b = o.density.tensors();
    auto c = color.tensors();
    auto d = o.color.tensors();
    for (int t = 0; t < 7; ++t) {
      for (std::size_t i = 0; i < a[t]->size(); ++i) (*a[t])[i] += (*b[t])[i];
      for (std::size_t i = 0; i < c[t]->size(); ++i) (*c[t])[i] += (*d[t])[i];
    }
  }
};

template <typename T>
struct BackwardWorkspace {
  std::vector<T> suffix, d_raw, d_feat, gd, gc, gprod;
  std::vector<T> dens_st, col_st, dens_gst, col_gst;  // rank-major S and its gradient
  std::vector<std::uint8_t> feat_live;
  RankSamples<T> smp;
};

namespace detail {

// Accumulates per-group upstream gradients into the rank-major S gradient
// `gst` and the factor slices. `st` is S in rank-major order.
template <typename T>
void backprop_groups(const DecomposedField<T>& f, const T* st, const GroupColumns& cols, const Stencil<T>& st_w,
                     const T* group_grad, BackwardWorkspace<T>& ws, T* gst, DecomposedField<T>& grad) {
  const int C = f.channels;
  const auto R = static_cast<std::size_t>(f.rank());
  sample_ranks(f, st_w, ws.smp);
  ws.gprod.assign(R, T(0));
  const T* prod = ws.smp.prod.data();
  for (int g = 0; g < cols.count(); ++g) {
    const T* gg = group_grad + static_cast<std::size_t>(g) * C;
    const auto& rg = cols.ranges[g];
    for (int span = 0; span < 2; ++span) {
      for (int r = rg[2 * span]; r < rg[2 * span + 1]; ++r) {
        const T* col = st + static_cast<std::size_t>(r) * C;
        T* dcol = gst + static_cast<std::size_t>(r) * C;
        const T p = prod[r];
        T acc = T(0);
#pragma omp simd reduction(+ : acc)
        for (int c = 0; c < C; ++c) {
          acc += col[c] * gg[c];
          dcol[c] += gg[c] * p;
        }
        ws.gprod[r] += acc;
      }
    }
  }
  scatter_rank_gradients(f, st_w, ws.smp, ws.gprod.data(), grad);
}

// Adds a rank-major S gradient into the channel-major one.
template <typename T>
void flush_s_gradient(const T* gst, int C, int R, std::vector<T>& gs) {
  for (int c = 0; c < C; ++c) {
    for (int r = 0; r < R; ++r) gs[static_cast<std::size_t>(c) * R + r] += gst[static_cast<std::size_t>(r) * C + c];
  }
}

// Sums per-prefix gradients into per-group gradients following the
// residual routing rule. Prefix m reads groups 0..min(m, G-1).
template <typename T>
void route_to_groups(const T* per_prefix, const std::uint8_t* live, int prefixes, int groups, int width,
                     bool detached, T* per_group) {
  std::fill(per_group, per_group + static_cast<std::size_t>(groups) * width, T(0));
  for (int m = 0; m < prefixes; ++m) {
    if (!live[m]) continue;
    const int top = std::min(m, groups - 1);
    const int first = detached ? top : 0;
    const T* src = per_prefix + static_cast<std::size_t>(m) * width;
    for (int g = first; g <= top; ++g) {
      T* dst = per_group + static_cast<std::size_t>(g) * width;
      for (int c = 0; c < width; ++c) dst[c] += src[c];
    }
  }
}

}  // namespace detail

/// Reverse pass for one ray. `upstream` holds dL/dC_m (3 per prefix).
template <typename T>
void backward_ray(const FieldPair<T>& model, const RayTape<T>& tape, const T* upstream, const LossSpec& spec,
                  const Vec3& background, BackwardWorkspace<T>& ws, ModelGrads<T>& grads) {
  const int M = tape.prefixes;
  const int n = tape.samples();
  if (n == 0) return;
  const bool merged = M == 1;
  const GroupColumns dcols(model.density.layout, merged);
  const GroupColumns ccols(model.color.layout, merged);
  const int K = model.shading.coeff_count();
  const int C = model.color.channels;
  const T step = tape.step;
  const T shift = static_cast<T>(model.shading.density_shift);

  ws.suffix.resize(static_cast<std::size_t>(3 * M));
  for (int m = 0; m < M; ++m) {
    for (int k = 0; k < 3; ++k) ws.suffix[3 * m + k] = tape.final_trans[m] * static_cast<T>(background[k]);
  }
  ws.d_raw.resize(static_cast<std::size_t>(M));
  ws.d_feat.resize(static_cast<std::size_t>(M) * C);
  ws.feat_live.resize(static_cast<std::size_t>(M));
  std::vector<std::uint8_t> raw_live(static_cast<std::size_t>(M));
  ws.gd.resize(static_cast<std::size_t>(dcols.count()));
  ws.gc.resize(static_cast<std::size_t>(ccols.count()) * C);
  transpose_s(model.density, ws.dens_st);
  transpose_s(model.color, ws.col_st);
  ws.dens_gst.assign(ws.dens_st.size(), T(0));
  ws.col_gst.assign(ws.col_st.size(), T(0));

  for (int i = n - 1; i >= 0; --i) {
    bool any_raw = false;
    bool any_feat = false;
    for (int m = 0; m < M; ++m) {
      ws.d_raw[m] = T(0);
      raw_live[m] = 0;
      ws.feat_live[m] = 0;
      if (i >= tape.count[m] || !spec.term_active(m)) continue;
      const std::size_t e = static_cast<std::size_t>(i) * M + m;
      const T* g = upstream + 3 * m;
      const T sigma = tape.sigma[e];
      const T alpha = -std::expm1(-sigma * step);
      const T w = tape.trans[e] * alpha;
      const T t_next = tape.trans[e] - w;
      const T* c = tape.rgb.data() + 3 * e;
      T* suffix = ws.suffix.data() + 3 * m;
      T dot = T(0);
      for (int k = 0; k < 3; ++k) dot += g[k] * (t_next * c[k] - suffix[k]);
      ws.d_raw[m] = step * dot * sigmoid(tape.raw_density[e] + shift);
      raw_live[m] = 1;
      any_raw = true;
      if (tape.shaded[e]) {
        T* df = ws.d_feat.data() + static_cast<std::size_t>(m) * C;
        for (int kappa = 0; kappa < 3; ++kappa) {
          const T dlogit = w * g[kappa] * c[kappa] * (T(1) - c[kappa]);
          for (int k = 0; k < K; ++k) df[kappa * K + k] = dlogit * tape.sh[k];
        }
        ws.feat_live[m] = 1;
        any_feat = true;
        for (int k = 0; k < 3; ++k) suffix[k] += w * c[k];
      }
    }
    const Vec3& u = tape.local[static_cast<std::size_t>(i)];
    if (any_raw) {
      detail::route_to_groups(ws.d_raw.data(), raw_live.data(), M, dcols.count(), 1, spec.detached(), ws.gd.data());
      detail::backprop_groups(model.density, ws.dens_st.data(), dcols, make_stencil<T>(model.density.res, u),
                              ws.gd.data(), ws, ws.dens_gst.data(), grads.density);
    }
    if (any_feat) {
      detail::route_to_groups(ws.d_feat.data(), ws.feat_live.data(), M, ccols.count(), C, spec.detached(),
                              ws.gc.data());
      detail::backprop_groups(model.color, ws.col_st.data(), ccols, make_stencil<T>(model.color.res, u),
                              ws.gc.data(), ws, ws.col_gst.data(), grads.color);
    }
  }
  detail::flush_s_gradient(ws.dens_gst.data(), 1, model.density.rank(), grads.density.s);
  detail::flush_s_gradient(ws.col_gst.data(), C, model.color.rank(), grads.color.s);
}

/// Predictions of all M rank prefixes for a batch of rays.
template <typename T>
struct GroupForward {
  int prefixes = 0;
  std::vector<T> rgb;    // [ray][m][3]
  std::vector<T> alpha;  // [ray][m]
  std::vector<RayTape<T>> tapes;
};

template <typename T>
GroupForward<T> forward_groups(const FieldPair<T>& model, std::span<const Ray> rays, const RenderOptions& opts,
                               bool keep_tapes = true, int prefixes = 0) {
  GroupForward<T> out;
  const int M = prefixes > 0 ? prefixes : model.prefix_count();
  out.prefixes = M;
  out.rgb.resize(rays.size() * 3 * M);
  out.alpha.resize(rays.size() * M);
  if (keep_tapes) out.tapes.resize(rays.size());
  MarchWorkspace<T> ws;
  for (std::size_t r = 0; r < rays.size(); ++r) {
    march_prefixes(model, rays[r], opts, M, ws, out.rgb.data() + r * 3 * M, out.alpha.data() + r * M,
                   keep_tapes ? &out.tapes[r] : nullptr);
  }
  return out;
}

/// sum_m |gt - C_m|^2 averaged over rays; inactive terms are skipped.
template <typename T>
double rank_residual_loss(std::span<const T> pred, std::span<const T> gt, int prefixes, const LossSpec& spec = {}) {
  const std::size_t rays = gt.size() / 3;
  if (pred.size() != rays * 3 * prefixes) throw Error("prediction and target shapes differ");
  if (rays == 0) return 0.0;
  double acc = 0.0;
  for (std::size_t r = 0; r < rays; ++r) {
    for (int m = 0; m < prefixes; ++m) {
      if (!spec.term_active(m)) continue;
      for (int k = 0; k < 3; ++k) {
        const double d = static_cast<double>(pred[(r * prefixes + m) * 3 + k]) - static_cast<double>(gt[r * 3 + k]);
        acc += d * d;
      }
    }
  }
  return acc / static_cast<double>(rays);
}

template <typename T>
double l1_penalty(const DecomposedField<T>& density) {
  double acc = 0.0;
  const auto ts = density.tensors();
  for (int t = 1; t < 7; ++t) {
    for (const T v : *ts[t]) acc += std::abs(static_cast<double>(v));
  }
  return acc;
}

/// Adds l1 * sign(theta) for every density factor entry (sign(0) = 0).
template <typename T>
void add_l1_gradient(const DecomposedField<T>& density, double l1, DecomposedField<T>& grad) {
  if (l1 == 0.0) return;
  const auto src = density.tensors();
  auto dst = grad.tensors();
  const T w = static_cast<T>(l1);
  for (int t = 1; t < 7; ++t) {
    for (std::size_t i = 0; i < src[t]->size(); ++i) {
      const T v = (*src[t])[i];
      (*dst[t])[i] += v > T(0) ? w : (v < T(0) ? -w : T(0));
    }
  }
}

/// Gradient of the full loss for recorded tapes.
template <typename T>
ModelGrads<T> backward(const FieldPair<T>& model, const GroupForward<T>& fwd, std::span<const T> gt,
                       const LossSpec& spec, const RenderOptions& opts) {
  const std::size_t rays = gt.size() / 3;
  if (fwd.tapes.size() != rays || fwd.rgb.size() != rays * 3 * fwd.prefixes) {
    throw Error("tape does not match the batch");
  }
  for (const auto& tape : fwd.tapes) {
    for (const auto& u : tape.local) {
      if ((u.array() < 0.0).any() || (u.array() > 1.0).any()) throw Error("tape does not match the model");
    }
    if (tape.prefixes != fwd.prefixes) throw Error("tape does not match the model");
  }
  ModelGrads<T> grads = ModelGrads<T>::zeros_like(model);
  BackwardWorkspace<T> ws;
  const int M = fwd.prefixes;
  std::vector<T> up(static_cast<std::size_t>(3 * M));
  const T scale = static_cast<T>(2.0 / static_cast<double>(rays));
  for (std::size_t r = 0; r < rays; ++r) {
    for (int m = 0; m < M; ++m) {
      for (int k = 0; k < 3; ++k) {
        up[3 * m + k] = spec.term_active(m) ? scale * (fwd.rgb[(r * M + m) * 3 + k] - gt[r * 3 + k]) : T(0);
      }
    }
    backward_ray(model, fwd.tapes[r], up.data(), spec, opts.background, ws, grads);
  }
  add_l1_gradient(model.density, spec.l1, grads.density);
  return grads;
}

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.99;
  double eps = 1e-8;
};

template <typename T>
struct OptimizerState {
  std::int64_t step = 0;
  ModelGrads<T> m;
  ModelGrads<T> v;

  static OptimizerState for_model(const FieldPair<T>& model) {
    return {0, ModelGrads<T>::zeros_like(model), ModelGrads<T>::zeros_like(model)};
  }
};

/// Bias-corrected Adam on one tensor. Entries whose rank (innermost index
/// modulo `rank`) is masked off are left untouched.
template <typename T>
void adam_update(std::span<T> param, std::span<const T> grad, std::span<T> m, std::span<T> v, double lr,
                 std::int64_t step, const AdamConfig& cfg, std::span<const std::uint8_t> rank_mask = {}) {
  if (param.size() != grad.size() || param.size() != m.size() || param.size() != v.size()) {
    throw Error("adam shapes differ");
  }
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
  const std::size_t rank = rank_mask.size();
  for (std::size_t i = 0; i < param.size(); ++i) {
    if (rank > 0 && !rank_mask[i % rank]) continue;
    const double g = static_cast<double>(grad[i]);
    const double mi = cfg.beta1 * static_cast<double>(m[i]) + (1.0 - cfg.beta1) * g;
    const double vi = cfg.beta2 * static_cast<double>(v[i]) + (1.0 - cfg.beta2) * g * g;
    m[i] = static_cast<T>(mi);
    v[i] = static_cast<T>(vi);
    const double mhat = mi / c1;
    const double vhat = vi / c2;
    param[i] = static_cast<T>(static_cast<double>(param[i]) - lr * mhat / (std::sqrt(vhat) + cfg.eps));
  }
}

/// Per-rank trainability of one field: S columns and vec/mat slices.
struct RankMask {
  std::vector<std::uint8_t> cols, vec, mat;

  static RankMask for_group(const RankLayout& layout, int group) {
    RankMask mask;
    const int nv = layout.n_vec();
    const int nm = layout.n_mat();
    mask.vec.assign(static_cast<std::size_t>(nv), 0);
    mask.mat.assign(static_cast<std::size_t>(nm), 0);
    const RankCounts lo = layout.prefix(group);
    const RankCounts hi = layout.prefix(group + 1);
    for (int r = lo.vec; r < hi.vec; ++r) mask.vec[r] = 1;
    for (int r = lo.mat; r < hi.mat; ++r) mask.mat[r] = 1;
    mask.cols = mask.vec;
    mask.cols.insert(mask.cols.end(), mask.mat.begin(), mask.mat.end());
    return mask;
  }
};

/// One Adam step over every tensor of the model. Factor tensors use
/// lr_factors and S matrices lr_s. Null masks train everything.
template <typename T>
void adam_step(FieldPair<T>& model, const ModelGrads<T>& grads, OptimizerState<T>& state, double lr_factors,
               double lr_s, const AdamConfig& cfg, const RankMask* density_mask = nullptr,
               const RankMask* color_mask = nullptr) {
  ++state.step;
  auto apply = [&](DecomposedField<T>& f, const DecomposedField<T>& g, DecomposedField<T>& m,
                   DecomposedField<T>& v, const RankMask* mask) {
    auto pf = f.tensors();
    auto pg = g.tensors();
    auto pm = m.tensors();
    auto pv = v.tensors();
    for (int t = 0; t < 7; ++t) {
      std::span<const std::uint8_t> rm;
      if (mask) rm = t == 0 ? std::span<const std::uint8_t>(mask->cols)
                            : (t < 4 ? std::span<const std::uint8_t>(mask->vec) : std::span<const std::uint8_t>(mask->mat));
      adam_update<T>(*pf[t], *pg[t], *pm[t], *pv[t], t == 0 ? lr_s : lr_factors, state.step, cfg, rm);
    }
  };
  apply(model.density, grads.density, state.m.density, state.v.density, density_mask);
  apply(model.color, grads.color, state.m.color, state.v.color, color_mask);
}

struct UpsampleStep {
  int step = 0;
  std::int64_t voxels = 0;
};

struct TrainConfig {
  int iterations = 30000;
  int batch = 4096;
  double lr_factors = 0.02;
  double lr_s = 0.001;
  double lr_decay = 1.0;  // lr multiplier reached at the last step (exponential)
  AdamConfig adam;
  double l1_density = 1e-4;
  ResidualMode residual = ResidualMode::kParallelNoDetach;

  RankLayout density_layout = RankLayout::single(96, 0);
  RankLayout color_layout = RankLayout::single(384, 0);
  ShadingConfig shading;
  RenderOptions render;
  Aabb aabb{Vec3::Constant(-1.5), Vec3::Constant(1.5)};

  std::int64_t initial_voxels = std::int64_t{128} * 128 * 128;
  std::vector<UpsampleStep> upsample;
  std::vector<int> occupancy_steps{2000, 4000};
  int shrink_step = 2000;
  int occupancy_res = 128;
  double occupancy_tau = 1e-2;
  int occupancy_dilation = 1;

  double init_factor_std = 0.1;
  double init_density_s = 1.0;
  double init_density_raw = 7.0;  // initial raw density; factor means are set to reach it
  double init_color_s_std = 1.0;
  bool jitter = false;
  std::uint64_t seed = 0;
  int threads = 0;

  void validate() const {
    if (iterations < 0 || batch < 1) throw Error("iterations must be >= 0 and batch >= 1");
    if (color_layout.group_count() < 1 || density_layout.group_count() < 1) throw Error("layouts need groups");
    for (std::size_t i = 1; i < upsample.size(); ++i) {
      if (upsample[i].step < upsample[i - 1].step) throw Error("upsample schedule must be sorted by step");
    }
    if (!std::is_sorted(occupancy_steps.begin(), occupancy_steps.end())) {
      throw Error("occupancy schedule must be sorted by step");
    }
    shading.validate();
    render.validate();
    if (!aabb.valid()) throw Error("training box is invalid");
  }
  int worker_count() const { return threads > 0 ? threads : default_thread_count(); }
};

/// Per-axis resolution proportional to the box edges with product ~ voxels.
inline GridSize resolution_for(std::int64_t voxels, const Aabb& box) {
  const Vec3 e = box.extent();
  const double s = std::cbrt(static_cast<double>(voxels) / (e.x() * e.y() * e.z()));
  auto axis = [&](double len) { return std::max(2, static_cast<int>(std::lround(len * s))); };
  return {axis(e.x()), axis(e.y()), axis(e.z())};
}

/// Voxel counts log-spaced from `from` (exclusive) to `to` over `steps`.
inline std::vector<UpsampleStep> log_voxel_schedule(std::int64_t from, std::int64_t to, const std::vector<int>& steps) {
  std::vector<UpsampleStep> out;
  const double a = std::log(static_cast<double>(from));
  const double b = std::log(static_cast<double>(to));
  for (std::size_t i = 0; i < steps.size(); ++i) {
    const double t = static_cast<double>(i + 1) / static_cast<double>(steps.size());
    out.push_back({steps[i], static_cast<std::int64_t>(std::llround(std::exp(a + (b - a) * t)))});
  }
  return out;
}

/// Named settings: cp, hy, hy-s at full scale and the CPU-sized desk.
inline TrainConfig preset(std::string_view name) {
  TrainConfig c;
  const std::int64_t n128 = std::int64_t{128} * 128 * 128;
  const std::vector<int> full_steps{2000, 3000, 4000, 5500, 7000};
  if (name == "cp") {
    c.density_layout = RankLayout::single(96, 0);
    c.color_layout = RankLayout({{96, 0}, {96, 0}, {96, 0}, {96, 0}});
    c.initial_voxels = n128;
    c.upsample = log_voxel_schedule(n128, std::int64_t{500} * 500 * 500, full_steps);
  } else if (name == "hy") {
    c.density_layout = RankLayout::single(64, 16);
    c.color_layout = RankLayout({{64, 16}, {64, 16}, {64, 16}, {64, 16}});
    c.initial_voxels = n128;
    c.upsample = log_voxel_schedule(n128, std::int64_t{300} * 300 * 300, full_steps);
  } else if (name == "hy-s") {
    c.density_layout = RankLayout::single(96, 0);
    c.color_layout = RankLayout({{96, 0}, {0, 4}, {0, 12}, {0, 16}, {0, 32}});
    c.initial_voxels = n128;
    c.upsample = log_voxel_schedule(n128, std::int64_t{300} * 300 * 300, full_steps);
  } else if (name == "desk") {
    c.iterations = 3000;
    c.batch = 2048;
    c.density_layout = RankLayout::single(16, 0);
    c.color_layout = RankLayout({{16, 0}, {0, 1}, {0, 1}, {0, 2}, {0, 4}});
    c.initial_voxels = std::int64_t{32} * 32 * 32;
    c.upsample = log_voxel_schedule(c.initial_voxels, std::int64_t{64} * 64 * 64, {200, 300, 400, 550, 700});
    c.occupancy_steps = {200, 400};
    c.shrink_step = 200;
    c.occupancy_res = 64;
    c.lr_decay = 0.1;
    c.l1_density = 1e-5;  // the penalty sums every entry; 1e-4 dominates a single-prefix loss here
  } else {
    throw Error("unknown preset '" + std::string(name) + "' (expected cp, hy, hy-s or desk)");
  }
  return c;
}

/// Regroups a color layout into m groups: the first m-1 groups are kept
/// and the remainder merged into the last one. m = 1 gives plain training.
inline RankLayout regroup(const RankLayout& layout, int m) {
  if (m < 1) throw Error("group count must be >= 1");
  if (m >= layout.group_count()) return layout;
  std::vector<RankCounts> out(layout.groups().begin(), layout.groups().begin() + (m - 1));
  RankCounts rest;
  for (int g = m - 1; g < layout.group_count(); ++g) {
    rest.vec += layout.groups()[g].vec;
    rest.mat += layout.groups()[g].mat;
  }
  out.push_back(rest);
  return RankLayout(std::move(out));
}

struct StepRecord {
  int step = 0;
  double loss = 0.0;
  std::vector<double> group_psnr;  // batch PSNR of each prefix
};

/// Posed training images (RGB already composited over the background).
struct TrainingViews {
  std::span<const Camera> cameras;
  std::span<const Image> images;
};

template <typename T>
struct TrainResult {
  FieldPair<T> model;
  OptimizerState<T> optimizer;
  std::vector<StepRecord> curve;
};

namespace detail {

template <typename T>
void resample_model(FieldPair<T>& model, OptimizerState<T>& opt, GridSize res, const Vec3& lo, const Vec3& hi) {
  model.density = resample(model.density, res, lo, hi);
  model.color = resample(model.color, res, lo, hi);
  for (ModelGrads<T>* g : {&opt.m, &opt.v}) {
    g->density = resample(g->density, res, lo, hi);
    g->color = resample(g->color, res, lo, hi);
  }
}

template <typename T>
std::string first_nonfinite(const FieldPair<T>& model, const ModelGrads<T>& grads) {
  auto scan = [](const DecomposedField<T>& f, const std::string& prefix) -> std::string {
    const auto ts = f.tensors();
    for (int t = 0; t < 7; ++t) {
      for (const T v : *ts[t]) {
        if (!std::isfinite(static_cast<double>(v))) return prefix + DecomposedField<T>::kTensorNames[t];
      }
    }
    return {};
  };
  for (auto s : {scan(model.density, "density."), scan(model.color, "color."), scan(grads.density, "grad density."),
                 scan(grads.color, "grad color.")}) {
    if (!s.empty()) return s;
  }
  return "loss";
}

}  // namespace detail

/// Fresh model with the config's layouts at the initial resolution.
template <typename T, typename Rng>
FieldPair<T> init_model(const TrainConfig& cfg, Rng& rng) {
  FieldPair<T> model;
  model.aabb = cfg.aabb;
  model.shading = cfg.shading;
  const GridSize res = resolution_for(cfg.initial_voxels, cfg.aabb);
  // Start slightly opaque so the density gradient is not lost under adam's epsilon.
  const double per_rank = cfg.init_density_raw / (cfg.density_layout.rank() * cfg.init_density_s);
  const double mean = std::cbrt(per_rank);
  model.density = random_field<T>(1, res, cfg.density_layout, rng, cfg.init_factor_std, 0.0, mean);
  std::fill(model.density.s.begin(), model.density.s.end(), static_cast<T>(cfg.init_density_s));
  model.color = random_field<T>(cfg.shading.color_channels(), res, cfg.color_layout, rng, cfg.init_factor_std,
                                cfg.init_color_s_std);
  return model;
}

using StepCallback = std::function<void(const StepRecord&)>;

/// Runs the optimization loop: random ray batches over all training
/// pixels, rank-prefix forward/backward, Adam, and the resolution and
/// occupancy schedule. The result is deterministic for a fixed seed and
/// worker count.
template <typename T = float>
TrainResult<T> train(const TrainingViews& views, const TrainConfig& cfg, const StepCallback& on_step = {},
                     FieldPair<T>* warm_start = nullptr) {
  cfg.validate();
  if (views.cameras.empty() || views.cameras.size() != views.images.size()) {
    throw Error("training needs at least one posed image");
  }
  std::vector<std::int64_t> offsets{0};
  for (std::size_t v = 0; v < views.images.size(); ++v) {
    const auto& img = views.images[v];
    if (img.width != views.cameras[v].width || img.height != views.cameras[v].height) {
      throw Error("image " + std::to_string(v) + " does not match its camera");
    }
    offsets.push_back(offsets.back() + static_cast<std::int64_t>(img.width) * img.height);
  }
  const std::int64_t total_pixels = offsets.back();

  std::mt19937_64 rng(cfg.seed);
  TrainResult<T> result;
  FieldPair<T>& model = result.model;
  model = warm_start ? *warm_start : init_model<T>(cfg, rng);
  model.occupancy = {};
  OptimizerState<T>& opt = result.optimizer;
  opt = OptimizerState<T>::for_model(model);

  const int M = model.prefix_count();
  const int workers = cfg.worker_count();
  std::vector<ModelGrads<T>> worker_grads(static_cast<std::size_t>(workers), ModelGrads<T>::zeros_like(model));
  std::vector<std::vector<double>> worker_sse(static_cast<std::size_t>(workers));
  std::int64_t voxels = cfg.initial_voxels;

  std::vector<Ray> rays(static_cast<std::size_t>(cfg.batch));
  std::vector<T> gt(static_cast<std::size_t>(cfg.batch) * 3);
  std::vector<double> offsets_t(static_cast<std::size_t>(cfg.batch), 0.5);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  auto rebuild_occupancy = [&] {
    const int r = cfg.occupancy_res;
    model.occupancy = build_occupancy(model, {r, r, r}, cfg.occupancy_tau, cfg.occupancy_dilation, workers);
  };

  for (int step = 0; step < cfg.iterations; ++step) {
    bool reshaped = false;
    for (const auto& up : cfg.upsample) {
      if (up.step != step) continue;
      voxels = up.voxels;
      detail::resample_model(model, opt, resolution_for(voxels, model.aabb), Vec3::Zero(), Vec3::Ones());
      reshaped = true;
    }
    if (std::find(cfg.occupancy_steps.begin(), cfg.occupancy_steps.end(), step) != cfg.occupancy_steps.end()) {
      rebuild_occupancy();
      if (step == cfg.shrink_step) {
        if (auto box = shrink_aabb(model.occupancy)) {
          const Vec3 lo = model.aabb.to_local(box->min);
          const Vec3 hi = model.aabb.to_local(box->max);
          model.aabb = *box;
          detail::resample_model(model, opt, resolution_for(voxels, model.aabb), lo, hi);
          reshaped = true;
          rebuild_occupancy();
        } else {
          std::cerr << "warning: occupancy grid is empty at step " << step << "; keeping the bounding box\n";
        }
      }
    }
    if (reshaped) {
      for (auto& g : worker_grads) g = ModelGrads<T>::zeros_like(model);
    }

    for (int b = 0; b < cfg.batch; ++b) {
      const auto pix = static_cast<std::int64_t>(rng() % static_cast<std::uint64_t>(total_pixels));
      const auto view = static_cast<std::size_t>(
          std::upper_bound(offsets.begin(), offsets.end(), pix) - offsets.begin() - 1);
      const std::int64_t local = pix - offsets[view];
      const auto& cam = views.cameras[view];
      const int px = static_cast<int>(local % cam.width);
      const int py = static_cast<int>(local / cam.width);
      rays[b] = cam.ray(px, py);
      const float* src = views.images[view].pixel(px, py);
      for (int k = 0; k < 3; ++k) gt[3 * b + k] = static_cast<T>(src[k]);
      if (cfg.jitter) offsets_t[b] = unit(rng);
    }

    LossSpec spec;
    spec.mode = cfg.residual;
    spec.l1 = cfg.l1_density;
    spec.stage = cfg.residual == ResidualMode::kSequential
                     ? static_cast<int>(static_cast<std::int64_t>(step) * M / std::max(1, cfg.iterations))
                     : 0;

    const T scale = static_cast<T>(2.0 / cfg.batch);
    parallel_for(workers, static_cast<std::size_t>(cfg.batch), [&](int w, std::size_t r0, std::size_t r1) {
      ModelGrads<T>& grads = worker_grads[static_cast<std::size_t>(w)];
      grads.set_zero();
      auto& sse = worker_sse[static_cast<std::size_t>(w)];
      sse.assign(static_cast<std::size_t>(M), 0.0);
      MarchWorkspace<T> ws;
      BackwardWorkspace<T> bws;
      RayTape<T> tape;
      std::vector<T> pred(static_cast<std::size_t>(3 * M)), alpha(static_cast<std::size_t>(M));
      std::vector<T> up(static_cast<std::size_t>(3 * M));
      for (std::size_t r = r0; r < r1; ++r) {
        march_prefixes(model, rays[r], cfg.render, M, ws, pred.data(), alpha.data(), &tape, offsets_t[r]);
        for (int m = 0; m < M; ++m) {
          for (int k = 0; k < 3; ++k) {
            const T d = pred[3 * m + k] - gt[3 * r + k];
            sse[m] += static_cast<double>(d) * static_cast<double>(d);
            up[3 * m + k] = spec.term_active(m) ? scale * d : T(0);
          }
        }
        backward_ray(model, tape, up.data(), spec, cfg.render.background, bws, grads);
      }
    });
    ModelGrads<T>& grads = worker_grads[0];
    std::vector<double> sse = worker_sse[0];
    for (int w = 1; w < workers; ++w) {
      grads.add(worker_grads[static_cast<std::size_t>(w)]);
      for (int m = 0; m < M; ++m) sse[m] += worker_sse[static_cast<std::size_t>(w)][m];
    }

    StepRecord rec;
    rec.step = step;
    for (int m = 0; m < M; ++m) {
      if (spec.term_active(m)) rec.loss += sse[m] / cfg.batch;
      rec.group_psnr.push_back(psnr_from_mse(sse[m] / (3.0 * cfg.batch)));
    }
    rec.loss += cfg.l1_density * l1_penalty(model.density);
    if (!std::isfinite(rec.loss)) {
      throw Error("non-finite loss at step " + std::to_string(step) + ": first non-finite tensor is " +
                  detail::first_nonfinite(model, grads));
    }
    add_l1_gradient(model.density, cfg.l1_density, grads.density);

    const double decay = std::pow(cfg.lr_decay, static_cast<double>(step) / std::max(1, cfg.iterations));
    if (cfg.residual == ResidualMode::kSequential) {
      const RankMask dm = RankMask::for_group(model.density.layout, std::min(spec.stage, model.density.layout.group_count() - 1));
      const RankMask cm = RankMask::for_group(model.color.layout, std::min(spec.stage, model.color.layout.group_count() - 1));
      adam_step(model, grads, opt, cfg.lr_factors * decay, cfg.lr_s * decay, cfg.adam, &dm, &cm);
    } else {
      adam_step(model, grads, opt, cfg.lr_factors * decay, cfg.lr_s * decay, cfg.adam);
    }
    if (on_step) on_step(rec);
    result.curve.push_back(std::move(rec));
  }
  rebuild_occupancy();
  return result;
}

}  // namespace ccfield
