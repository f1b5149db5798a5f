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

// Central finite differences against the analytic backward pass, in
// 64-bit with occupancy off and all shading/termination thresholds at 0
// so the loss is smooth in every parameter.

#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "ccfield/common.hpp"
#include "ccfield/field.hpp"
#include "ccfield/renderer.hpp"
#include "ccfield/trainer.hpp"

namespace ccfield {

struct GradcheckCase {
  std::string name;
  RankLayout density;
  RankLayout color;
  ResidualMode mode = ResidualMode::kParallelNoDetach;
  int stage = 0;
};

struct GradcheckResult {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::string worst;  // tensor and index of the worst entry
};

struct GradcheckOptions {
  int resolution = 8;
  int rays = 16;
  double h = 1e-4;
  double l1 = 1e-4;
  int sh_degree = 3;
  std::uint64_t seed = 0;
};

/// Group of rank `r` among vector (mat = false) or matrix ranks.
inline int group_of_rank(const RankLayout& layout, bool mat, int r) {
  int acc = 0;
  for (int g = 0; g < layout.group_count(); ++g) {
    acc += mat ? layout.groups()[g].mat : layout.groups()[g].vec;
    if (r < acc) return g;
  }
  throw Error("rank index out of range");
}

/// Rank group owning entry `i` of tensor `t` (0 = S, 1..3 vec, 4..6 mat).
inline int group_of_entry(const DecomposedField<double>& f, int t, std::size_t i) {
  const int nv = f.n_vec();
  if (t == 0) {
    const int col = static_cast<int>(i % static_cast<std::size_t>(f.rank()));
    return col < nv ? group_of_rank(f.layout, false, col) : group_of_rank(f.layout, true, col - nv);
  }
  const bool mat = t >= 4;
  const int n = mat ? f.n_mat() : nv;
  return group_of_rank(f.layout, mat, static_cast<int>(i % static_cast<std::size_t>(n)));
}

namespace detail {

// Loss terms routed to `group` of a field with `groups` groups.
inline std::vector<std::uint8_t> routed_terms(const LossSpec& spec, int prefixes, int groups, int group) {
  std::vector<std::uint8_t> on(static_cast<std::size_t>(prefixes), 0);
  for (int m = 0; m < prefixes; ++m) {
    if (!spec.term_active(m)) continue;
    const int top = std::min(m, groups - 1);
    on[m] = spec.detached() ? (group == top) : (group <= top);
  }
  return on;
}

}  // namespace detail

/// Random small model and rays through its box.
inline FieldPair<double> gradcheck_model(const GradcheckCase& c, const GradcheckOptions& opt, std::vector<Ray>& rays) {
  std::mt19937_64 rng(opt.seed);
  FieldPair<double> m;
  m.aabb = {Vec3::Constant(-1.0), Vec3::Constant(1.0)};
  m.shading.sh_degree = opt.sh_degree;
  const GridSize res{opt.resolution, opt.resolution, opt.resolution};
  // Raw density near 10 puts sigma around softplus(0), so rays are partly opaque.
  const double mean = std::cbrt(10.0 / c.density.rank());
  m.density = random_field<double>(1, res, c.density, rng, 0.15, 0.0, mean);
  std::fill(m.density.s.begin(), m.density.s.end(), 1.0);
  m.color = random_field<double>(m.shading.color_channels(), res, c.color, rng, 0.5, 1.0, 0.3);
  // Keep every factor away from the L1 kink.
  for (auto* t : m.density.tensors()) {
    for (double& v : *t) {
      if (std::abs(v) < 10 * opt.h) v = v < 0 ? -10 * opt.h : 10 * opt.h;
    }
  }
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  rays.clear();
  while (static_cast<int>(rays.size()) < opt.rays) {
    Vec3 eye(unit(rng), unit(rng), unit(rng));
    eye = 3.0 * eye.normalized();
    const Vec3 target(0.5 * unit(rng), 0.5 * unit(rng), 0.5 * unit(rng));
    Ray r{eye, (target - eye).normalized()};
    if (ray_aabb(r, m.aabb)) rays.push_back(r);
  }
  return m;
}

/// Options that make the rendered loss smooth in the parameters.
inline RenderOptions smooth_render_options() {
  RenderOptions o;
  o.termination = 0.0;
  o.color_weight_threshold = 0.0;
  o.threads = 1;
  return o;
}

inline GradcheckResult gradient_check(const GradcheckCase& c, const GradcheckOptions& opt = {}) {
  std::vector<Ray> rays;
  FieldPair<double> model = gradcheck_model(c, opt, rays);
  const RenderOptions ro = smooth_render_options();
  const int M = model.prefix_count();
  LossSpec spec{c.mode, opt.l1, c.stage};

  std::vector<double> gt(rays.size() * 3);
  std::mt19937_64 rng(opt.seed + 1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (double& v : gt) v = unit(rng);

  const GroupForward<double> fwd = forward_groups(model, std::span<const Ray>(rays), ro);
  const ModelGrads<double> grads = backward(model, fwd, std::span<const double>(gt), spec, ro);

  // Per-term losses of the perturbed model.
  auto term_losses = [&](const FieldPair<double>& m) {
    const GroupForward<double> f = forward_groups(m, std::span<const Ray>(rays), ro, false);
    std::vector<double> out(static_cast<std::size_t>(M), 0.0);
    for (int t = 0; t < M; ++t) {
      LossSpec one{ResidualMode::kSequential, 0.0, t};
      out[t] = rank_residual_loss(std::span<const double>(f.rgb), std::span<const double>(gt), M, one);
    }
    return out;
  };

  GradcheckResult res;
  res.name = c.name;
  for (int field = 0; field < 2; ++field) {
    DecomposedField<double>& f = field == 0 ? model.density : model.color;
    const DecomposedField<double>& g = field == 0 ? grads.density : grads.color;
    auto ts = f.tensors();
    const auto gs = g.tensors();
    for (int t = 0; t < 7; ++t) {
      for (std::size_t i = 0; i < ts[t]->size(); ++i) {
        const int group = group_of_entry(f, t, i);
        const auto on = detail::routed_terms(spec, M, f.layout.group_count(), group);
        double& p = (*ts[t])[i];
        const double saved = p;
        p = saved + opt.h;
        const auto lp = term_losses(model);
        p = saved - opt.h;
        const auto lm = term_losses(model);
        p = saved;
        double fd = 0.0;
        for (int m = 0; m < M; ++m) {
          if (on[m]) fd += (lp[m] - lm[m]) / (2.0 * opt.h);
        }
        if (field == 0 && t > 0) fd += opt.l1 * (saved > 0 ? 1.0 : -1.0);
        const double an = (*gs[t])[i];
        const double rel = std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), 1e-7});
        ++res.checked;
        if (rel > res.max_rel_error) {
          res.max_rel_error = rel;
          res.worst = std::string(field == 0 ? "density." : "color.") + DecomposedField<double>::kTensorNames[t] +
                      "[" + std::to_string(i) + "] analytic " + std::to_string(an) + " numeric " + std::to_string(fd);
        }
      }
    }
  }
  return res;
}

/// The standard suite: hybrid layouts under each residual mode plus
/// vector-only and matrix-only layouts.
inline std::vector<GradcheckCase> default_gradcheck_cases() {
  const RankLayout hd({{2, 1}, {1, 1}});
  const RankLayout hc({{2, 1}, {1, 2}});
  return {
      {"hybrid nodetach", hd, hc, ResidualMode::kParallelNoDetach, 0},
      {"hybrid detach", hd, hc, ResidualMode::kParallelDetach, 0},
      {"hybrid sequential stage 1", hd, hc, ResidualMode::kSequential, 1},
      {"vector-only nodetach", RankLayout({{2, 0}, {1, 0}}), RankLayout({{2, 0}, {2, 0}}),
       ResidualMode::kParallelNoDetach, 0},
      {"matrix-only detach", RankLayout({{0, 2}, {0, 1}}), RankLayout({{0, 2}, {0, 2}}),
       ResidualMode::kParallelDetach, 0},
  };
}

}  // namespace ccfield
