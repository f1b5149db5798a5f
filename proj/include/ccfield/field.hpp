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

// Hybrid vector/matrix rank decomposition of a multichannel 3D feature
// volume.
//
// A field with C channels and rank R = n_vec + n_mat stores
//
//   feature(x) = S * (a_r(x) * b_r(x) * c_r(x))_r
//
// where, for a vector rank r, a/b/c are 1D samples of Ux/Uy/Uz along the
// x/y/z axes, and for a matrix rank they are 2D samples of Uxy/Uyz/Uxz on
// the three coordinate planes. Factors are sampled (linearly or
// bilinearly) first and multiplied afterwards. All factor tensors keep the
// rank index innermost, so every per-rank loop walks contiguous memory.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ccfield/common.hpp"

namespace ccfield {

struct RankCounts {
  int vec = 0;
  int mat = 0;

  int total() const { return vec + mat; }
  friend bool operator==(const RankCounts&, const RankCounts&) = default;
};

/// Ordered rank groups. Group g owns the vector ranks
/// [prefix(g).vec, prefix(g+1).vec) and likewise for matrix ranks.
class RankLayout {
 public:
  RankLayout() = default;

  explicit RankLayout(std::vector<RankCounts> groups) : groups_(std::move(groups)) {
    if (groups_.empty()) throw Error("rank layout needs at least one group");
    for (std::size_t g = 0; g < groups_.size(); ++g) {
      const auto& grp = groups_[g];
      if (grp.vec < 0 || grp.mat < 0) throw Error("rank group " + std::to_string(g) + " has a negative count");
      if (grp.total() < 1) throw Error("rank group " + std::to_string(g) + " is empty");
    }
  }

  static RankLayout single(int vec, int mat) { return RankLayout({{vec, mat}}); }

  const std::vector<RankCounts>& groups() const { return groups_; }
  int group_count() const { return static_cast<int>(groups_.size()); }
  int n_vec() const { return totals().vec; }
  int n_mat() const { return totals().mat; }
  int rank() const { return totals().total(); }

  RankCounts totals() const { return prefix(group_count()); }

  /// Accumulated counts of the first m groups (m is clamped to [0, G]).
  RankCounts prefix(int m) const {
    m = std::clamp(m, 0, group_count());
    RankCounts acc;
    for (int g = 0; g < m; ++g) {
      acc.vec += groups_[g].vec;
      acc.mat += groups_[g].mat;
    }
    return acc;
  }

  /// Layout left after keeping the first keep.vec vector and keep.mat
  /// matrix ranks; groups that become empty are dropped.
  RankLayout clipped(RankCounts keep) const {
    const RankCounts tot = totals();
    if (keep.vec < 0 || keep.mat < 0 || keep.vec > tot.vec || keep.mat > tot.mat) {
      throw Error("rank limit exceeds the layout");
    }
    std::vector<RankCounts> out;
    int vec_left = keep.vec;
    int mat_left = keep.mat;
    for (const auto& g : groups_) {
      RankCounts part{std::min(vec_left, g.vec), std::min(mat_left, g.mat)};
      vec_left -= part.vec;
      mat_left -= part.mat;
      if (part.total() > 0) out.push_back(part);
    }
    if (out.empty()) throw Error("rank truncation keeps nothing");
    return RankLayout(std::move(out));
  }

  friend bool operator==(const RankLayout&, const RankLayout&) = default;

 private:
  std::vector<RankCounts> groups_;
};

struct GridSize {
  int x = 0;
  int y = 0;
  int z = 0;

  std::int64_t cells() const {
    return static_cast<std::int64_t>(x) * static_cast<std::int64_t>(y) * static_cast<std::int64_t>(z);
  }
  int operator[](int axis) const { return axis == 0 ? x : (axis == 1 ? y : z); }
  friend bool operator==(const GridSize&, const GridSize&) = default;
};

/// Axis-aligned world-space box; fields live in its normalized [0,1]^3.
struct Aabb {
  Vec3 min = Vec3::Zero();
  Vec3 max = Vec3::Ones();

  Vec3 extent() const { return max - min; }
  double diagonal() const { return extent().norm(); }
  bool valid() const { return (max.array() > min.array()).all() && min.allFinite() && max.allFinite(); }
  Vec3 to_local(const Vec3& p) const { return (p - min).cwiseQuotient(extent()); }
  Vec3 to_world(const Vec3& u) const { return min + u.cwiseProduct(extent()); }
  bool contains(const Vec3& p) const { return (p.array() >= min.array()).all() && (p.array() <= max.array()).all(); }
};

/// Linear interpolation stencil of one normalized coordinate. Grid node i
/// sits at u = i / (n - 1), so corners are exact.
template <typename T>
struct Stencil {
  int i[3];
  T f[3];
};

template <typename T>
Stencil<T> make_stencil(const GridSize& res, const Vec3& u) {
  Stencil<T> s{};
  for (int a = 0; a < 3; ++a) {
    const int n = res[a];
    const double x = std::clamp(u[a], 0.0, 1.0) * static_cast<double>(n - 1);
    const int i = std::min(static_cast<int>(x), n - 2);
    s.i[a] = i;
    s.f[a] = static_cast<T>(x - i);
  }
  return s;
}

template <typename T>
struct DecomposedField {
  int channels = 0;
  GridSize res;
  RankLayout layout;
  std::vector<T> s;                // channels x rank, row-major, columns [vec | mat]
  std::vector<T> ux, uy, uz;       // res.x * n_vec, res.y * n_vec, res.z * n_vec
  std::vector<T> uxy, uyz, uxz;    // res.x*res.y*n_mat, res.y*res.z*n_mat, res.x*res.z*n_mat

  int n_vec() const { return layout.n_vec(); }
  int n_mat() const { return layout.n_mat(); }
  int rank() const { return layout.rank(); }

  std::size_t parameter_count() const {
    return s.size() + ux.size() + uy.size() + uz.size() + uxy.size() + uyz.size() + uxz.size();
  }

  /// The seven parameter tensors in serialization order.
  std::vector<std::vector<T>*> tensors() { return {&s, &ux, &uy, &uz, &uxy, &uyz, &uxz}; }
  std::vector<const std::vector<T>*> tensors() const { return {&s, &ux, &uy, &uz, &uxy, &uyz, &uxz}; }
  static constexpr const char* kTensorNames[7] = {"S", "Ux", "Uy", "Uz", "Uxy", "Uyz", "Uxz"};

  static DecomposedField zeros(int channels, GridSize res, RankLayout layout) {
    if (channels < 1) throw Error("field needs at least one channel");
    if (res.x < 2 || res.y < 2 || res.z < 2) throw Error("field resolution must be at least 2 per axis");
    DecomposedField f;
    f.channels = channels;
    f.res = res;
    f.layout = std::move(layout);
    const auto nv = static_cast<std::size_t>(f.n_vec());
    const auto nm = static_cast<std::size_t>(f.n_mat());
    const auto hx = static_cast<std::size_t>(res.x);
    const auto hy = static_cast<std::size_t>(res.y);
    const auto hz = static_cast<std::size_t>(res.z);
    f.s.assign(static_cast<std::size_t>(channels) * (nv + nm), T(0));
    f.ux.assign(hx * nv, T(0));
    f.uy.assign(hy * nv, T(0));
    f.uz.assign(hz * nv, T(0));
    f.uxy.assign(hx * hy * nm, T(0));
    f.uyz.assign(hy * hz * nm, T(0));
    f.uxz.assign(hx * hz * nm, T(0));
    return f;
  }

  /// Throws if any tensor disagrees with channels/res/layout.
  void validate() const {
    const DecomposedField ref = zeros(channels, res, layout);
    const auto mine = tensors();
    const auto want = ref.tensors();
    for (int t = 0; t < 7; ++t) {
      if (mine[t]->size() != want[t]->size()) {
        throw Error(std::string("tensor ") + kTensorNames[t] + " has the wrong size");
      }
    }
  }

  template <typename U>
  DecomposedField<U> cast() const {
    DecomposedField<U> out;
    out.channels = channels;
    out.res = res;
    out.layout = layout;
    auto conv = [](const std::vector<T>& v) { return std::vector<U>(v.begin(), v.end()); };
    out.s = conv(s);
    out.ux = conv(ux);
    out.uy = conv(uy);
    out.uz = conv(uz);
    out.uxy = conv(uxy);
    out.uyz = conv(uyz);
    out.uxz = conv(uxz);
    return out;
  }
};

/// Per-rank factor samples at one point, ordered [vec | mat].
template <typename T>
struct RankSamples {
  std::vector<T> a, b, c, prod;

  void resize(int rank) {
    const auto n = static_cast<std::size_t>(rank);
    a.resize(n);
    b.resize(n);
    c.resize(n);
    prod.resize(n);
  }
};

template <typename T>
void sample_ranks(const DecomposedField<T>& f, const Stencil<T>& st, RankSamples<T>& out) {
  const int nv = f.n_vec();
  const int nm = f.n_mat();
  out.resize(nv + nm);
  const int ix = st.i[0], iy = st.i[1], iz = st.i[2];
  const T fx = st.f[0], fy = st.f[1], fz = st.f[2];
  const T gx = T(1) - fx, gy = T(1) - fy, gz = T(1) - fz;
  if (nv > 0) {
    const T* x0 = f.ux.data() + static_cast<std::size_t>(ix) * nv;
    const T* y0 = f.uy.data() + static_cast<std::size_t>(iy) * nv;
    const T* z0 = f.uz.data() + static_cast<std::size_t>(iz) * nv;
    for (int r = 0; r < nv; ++r) {
      const T a = gx * x0[r] + fx * x0[r + nv];
      const T b = gy * y0[r] + fy * y0[r + nv];
      const T c = gz * z0[r] + fz * z0[r + nv];
      out.a[r] = a;
      out.b[r] = b;
      out.c[r] = c;
      out.prod[r] = a * b * c;
    }
  }
  if (nm > 0) {
    const std::size_t W = static_cast<std::size_t>(f.res.y);
    const std::size_t D = static_cast<std::size_t>(f.res.z);
    const std::size_t snm = static_cast<std::size_t>(nm);
    const T* xy00 = f.uxy.data() + (ix * W + iy) * snm;
    const T* xy10 = xy00 + W * snm;
    const T* yz00 = f.uyz.data() + (iy * D + iz) * snm;
    const T* yz10 = yz00 + D * snm;
    const T* xz00 = f.uxz.data() + (ix * D + iz) * snm;
    const T* xz10 = xz00 + D * snm;
    const T wxy00 = gx * gy, wxy10 = fx * gy, wxy01 = gx * fy, wxy11 = fx * fy;
    const T wyz00 = gy * gz, wyz10 = fy * gz, wyz01 = gy * fz, wyz11 = fy * fz;
    const T wxz00 = gx * gz, wxz10 = fx * gz, wxz01 = gx * fz, wxz11 = fx * fz;
    for (int r = 0; r < nm; ++r) {
      const T a = wxy00 * xy00[r] + wxy10 * xy10[r] + wxy01 * xy00[r + nm] + wxy11 * xy10[r + nm];
      const T b = wyz00 * yz00[r] + wyz10 * yz10[r] + wyz01 * yz00[r + nm] + wyz11 * yz10[r + nm];
      const T c = wxz00 * xz00[r] + wxz10 * xz10[r] + wxz01 * xz00[r + nm] + wxz11 * xz10[r + nm];
      out.a[nv + r] = a;
      out.b[nv + r] = b;
      out.c[nv + r] = c;
      out.prod[nv + r] = a * b * c;
    }
  }
}

/// out[c] += sum over S columns [col_begin, col_end) of S[c, col] * prod[col],
/// in ascending column order.
template <typename T>
void accumulate_features(const DecomposedField<T>& f, const T* prod, int col_begin, int col_end, T* out) {
  if (col_end <= col_begin) return;
  const auto R = static_cast<std::size_t>(f.rank());
  for (int c = 0; c < f.channels; ++c) {
    const T* row = f.s.data() + static_cast<std::size_t>(c) * R;
    T acc = T(0);
    for (int r = col_begin; r < col_end; ++r) acc += row[r] * prod[r];
    out[c] += acc;
  }
}

/// Adds gradients of one point's rank products into `grad` (same shape as
/// `f`). g_prod[r] is dLoss/dprod_r; ranks with zero g_prod are skipped.
template <typename T>
void scatter_rank_gradients(const DecomposedField<T>& f, const Stencil<T>& st, const RankSamples<T>& smp,
                            const T* g_prod, DecomposedField<T>& grad) {
  const int nv = f.n_vec();
  const int nm = f.n_mat();
  const int ix = st.i[0], iy = st.i[1], iz = st.i[2];
  const T fx = st.f[0], fy = st.f[1], fz = st.f[2];
  const T gx = T(1) - fx, gy = T(1) - fy, gz = T(1) - fz;
  if (nv > 0) {
    T* x0 = grad.ux.data() + static_cast<std::size_t>(ix) * nv;
    T* y0 = grad.uy.data() + static_cast<std::size_t>(iy) * nv;
    T* z0 = grad.uz.data() + static_cast<std::size_t>(iz) * nv;
    for (int r = 0; r < nv; ++r) {
      const T g = g_prod[r];
      if (g == T(0)) continue;
      const T da = g * smp.b[r] * smp.c[r];
      const T db = g * smp.a[r] * smp.c[r];
      const T dc = g * smp.a[r] * smp.b[r];
      x0[r] += gx * da;
      x0[r + nv] += fx * da;
      y0[r] += gy * db;
      y0[r + nv] += fy * db;
      z0[r] += gz * dc;
      z0[r + nv] += fz * dc;
    }
  }
  if (nm > 0) {
    const std::size_t W = static_cast<std::size_t>(f.res.y);
    const std::size_t D = static_cast<std::size_t>(f.res.z);
    const std::size_t snm = static_cast<std::size_t>(nm);
    T* xy00 = grad.uxy.data() + (ix * W + iy) * snm;
    T* xy10 = xy00 + W * snm;
    T* yz00 = grad.uyz.data() + (iy * D + iz) * snm;
    T* yz10 = yz00 + D * snm;
    T* xz00 = grad.uxz.data() + (ix * D + iz) * snm;
    T* xz10 = xz00 + D * snm;
    for (int r = 0; r < nm; ++r) {
      const T g = g_prod[nv + r];
      if (g == T(0)) continue;
      const int q = nv + r;
      const T da = g * smp.b[q] * smp.c[q];
      const T db = g * smp.a[q] * smp.c[q];
      const T dc = g * smp.a[q] * smp.b[q];
      xy00[r] += gx * gy * da;
      xy10[r] += fx * gy * da;
      xy00[r + nm] += gx * fy * da;
      xy10[r + nm] += fx * fy * da;
      yz00[r] += gy * gz * db;
      yz10[r] += fy * gz * db;
      yz00[r + nm] += gy * fz * db;
      yz10[r + nm] += fy * fz * db;
      xz00[r] += gx * gz * dc;
      xz10[r] += fx * gz * dc;
      xz00[r + nm] += gx * fz * dc;
      xz10[r + nm] += fx * fz * dc;
    }
  }
}

/// Feature vector at normalized coordinate u using the first keep.vec
/// vector ranks and keep.mat matrix ranks.
template <typename T>
std::vector<T> query_features(const DecomposedField<T>& f, const Vec3& u, RankCounts keep) {
  constexpr double kSlack = 1e-9;
  if ((u.array() < -kSlack).any() || (u.array() > 1.0 + kSlack).any() || !u.allFinite()) {
    throw Error("query coordinate outside [0,1]^3");
  }
  if (keep.vec < 0 || keep.mat < 0 || keep.vec > f.n_vec() || keep.mat > f.n_mat()) {
    throw Error("rank limit exceeds the field layout");
  }
  RankSamples<T> smp;
  sample_ranks(f, make_stencil<T>(f.res, u), smp);
  std::vector<T> out(static_cast<std::size_t>(f.channels), T(0));
  accumulate_features(f, smp.prod.data(), 0, keep.vec, out.data());
  accumulate_features(f, smp.prod.data(), f.n_vec(), f.n_vec() + keep.mat, out.data());
  return out;
}

template <typename T>
std::vector<T> query_features(const DecomposedField<T>& f, const Vec3& u) {
  return query_features(f, u, f.layout.totals());
}

/// Dense C x H x W x D tensor evaluated exactly at the grid nodes.
template <typename T>
std::vector<T> reconstruct_dense(const DecomposedField<T>& f, std::int64_t max_elements = std::int64_t{1} << 26) {
  const std::int64_t n = f.res.cells() * f.channels;
  if (n > max_elements) throw Error("dense reconstruction exceeds the size guard");
  const int H = f.res.x, W = f.res.y, D = f.res.z;
  const int nv = f.n_vec(), nm = f.n_mat(), R = nv + nm;
  std::vector<T> out(static_cast<std::size_t>(n), T(0));
  std::vector<T> prod(static_cast<std::size_t>(R));
  for (int i = 0; i < H; ++i) {
    for (int j = 0; j < W; ++j) {
      for (int k = 0; k < D; ++k) {
        for (int r = 0; r < nv; ++r) {
          prod[r] = f.ux[static_cast<std::size_t>(i) * nv + r] * f.uy[static_cast<std::size_t>(j) * nv + r] *
                    f.uz[static_cast<std::size_t>(k) * nv + r];
        }
        for (int r = 0; r < nm; ++r) {
          prod[nv + r] = f.uxy[(static_cast<std::size_t>(i) * W + j) * nm + r] *
                         f.uyz[(static_cast<std::size_t>(j) * D + k) * nm + r] *
                         f.uxz[(static_cast<std::size_t>(i) * D + k) * nm + r];
        }
        for (int c = 0; c < f.channels; ++c) {
          T acc = T(0);
          for (int r = 0; r < R; ++r) acc += f.s[static_cast<std::size_t>(c) * R + r] * prod[r];
          out[((static_cast<std::size_t>(c) * H + i) * W + j) * D + k] = acc;
        }
      }
    }
  }
  return out;
}

namespace detail {

// Copies rank slices `idx` of a tensor whose innermost index is the rank.
template <typename T>
std::vector<T> gather_ranks(const std::vector<T>& src, int rank, std::span<const int> idx) {
  if (rank == 0) return {};
  const std::size_t rows = src.size() / static_cast<std::size_t>(rank);
  std::vector<T> out(rows * idx.size());
  for (std::size_t row = 0; row < rows; ++row) {
    const T* in = src.data() + row * rank;
    T* o = out.data() + row * idx.size();
    for (std::size_t q = 0; q < idx.size(); ++q) o[q] = in[idx[q]];
  }
  return out;
}

inline void check_indices(std::span<const int> idx, int n, const char* what) {
  for (int i : idx) {
    if (i < 0 || i >= n) throw Error(std::string("rank index out of range in ") + what);
  }
}

}  // namespace detail

/// Keeps exactly the listed vector and matrix ranks (in the given order).
/// The result carries `layout` if given, else a single group.
template <typename T>
DecomposedField<T> select_ranks(const DecomposedField<T>& f, std::span<const int> vec_idx,
                                std::span<const int> mat_idx, const RankLayout* layout = nullptr) {
  if (vec_idx.empty() && mat_idx.empty()) throw Error("rank selection keeps nothing");
  detail::check_indices(vec_idx, f.n_vec(), "vector selection");
  detail::check_indices(mat_idx, f.n_mat(), "matrix selection");
  RankLayout out_layout =
      layout ? *layout : RankLayout::single(static_cast<int>(vec_idx.size()), static_cast<int>(mat_idx.size()));
  if (out_layout.n_vec() != static_cast<int>(vec_idx.size()) ||
      out_layout.n_mat() != static_cast<int>(mat_idx.size())) {
    throw Error("layout does not match the selected rank counts");
  }
  const int nv = f.n_vec();
  std::vector<int> cols(vec_idx.begin(), vec_idx.end());
  for (int m : mat_idx) cols.push_back(nv + m);

  DecomposedField<T> out;
  out.channels = f.channels;
  out.res = f.res;
  out.layout = std::move(out_layout);
  out.s = detail::gather_ranks(f.s, f.rank(), cols);
  out.ux = detail::gather_ranks(f.ux, nv, vec_idx);
  out.uy = detail::gather_ranks(f.uy, nv, vec_idx);
  out.uz = detail::gather_ranks(f.uz, nv, vec_idx);
  out.uxy = detail::gather_ranks(f.uxy, f.n_mat(), mat_idx);
  out.uyz = detail::gather_ranks(f.uyz, f.n_mat(), mat_idx);
  out.uxz = detail::gather_ranks(f.uxz, f.n_mat(), mat_idx);
  return out;
}

/// Prefix truncation; group metadata is clipped to the kept ranks.
template <typename T>
DecomposedField<T> truncate(const DecomposedField<T>& f, RankCounts keep) {
  RankLayout layout = f.layout.clipped(keep);
  std::vector<int> vi(static_cast<std::size_t>(keep.vec));
  std::vector<int> mi(static_cast<std::size_t>(keep.mat));
  std::iota(vi.begin(), vi.end(), 0);
  std::iota(mi.begin(), mi.end(), 0);
  return select_ranks(f, vi, mi, &layout);
}

/// Ranks of a followed by ranks of b; the group lists are concatenated.
template <typename T>
DecomposedField<T> concat_ranks(const DecomposedField<T>& a, const DecomposedField<T>& b) {
  if (a.channels != b.channels) throw Error("cannot concatenate fields with different channel counts");
  if (!(a.res == b.res)) throw Error("cannot concatenate fields with different resolutions");
  std::vector<RankCounts> groups = a.layout.groups();
  groups.insert(groups.end(), b.layout.groups().begin(), b.layout.groups().end());

  DecomposedField<T> out = DecomposedField<T>::zeros(a.channels, a.res, RankLayout(std::move(groups)));
  const int av = a.n_vec(), am = a.n_mat(), bv = b.n_vec(), bm = b.n_mat();
  const int R = out.rank();
  for (int c = 0; c < a.channels; ++c) {
    T* row = out.s.data() + static_cast<std::size_t>(c) * R;
    const T* ra = a.s.data() + static_cast<std::size_t>(c) * a.rank();
    const T* rb = b.s.data() + static_cast<std::size_t>(c) * b.rank();
    std::copy(ra, ra + av, row);
    std::copy(rb, rb + bv, row + av);
    std::copy(ra + av, ra + av + am, row + av + bv);
    std::copy(rb + bv, rb + bv + bm, row + av + bv + am);
  }
  auto interleave = [](const std::vector<T>& x, int nx, const std::vector<T>& y, int ny, std::vector<T>& dst) {
    const int n = nx + ny;
    if (n == 0) return;
    const std::size_t rows = dst.size() / static_cast<std::size_t>(n);
    for (std::size_t row = 0; row < rows; ++row) {
      std::copy_n(x.data() + row * nx, nx, dst.data() + row * n);
      std::copy_n(y.data() + row * ny, ny, dst.data() + row * n + nx);
    }
  };
  interleave(a.ux, av, b.ux, bv, out.ux);
  interleave(a.uy, av, b.uy, bv, out.uy);
  interleave(a.uz, av, b.uz, bv, out.uz);
  interleave(a.uxy, am, b.uxy, bm, out.uxy);
  interleave(a.uyz, am, b.uyz, bm, out.uyz);
  interleave(a.uxz, am, b.uxz, bm, out.uxz);
  return out;
}

/// Output rank r takes input rank perm[r]; the layout is unchanged.
template <typename T>
DecomposedField<T> permute_ranks(const DecomposedField<T>& f, std::span<const int> vec_perm,
                                 std::span<const int> mat_perm) {
  auto check = [](std::span<const int> p, int n, const char* what) {
    if (static_cast<int>(p.size()) != n) throw Error(std::string("invalid ") + what + " permutation");
    std::vector<char> seen(static_cast<std::size_t>(n), 0);
    for (int i : p) {
      if (i < 0 || i >= n || seen[static_cast<std::size_t>(i)]) {
        throw Error(std::string("invalid ") + what + " permutation");
      }
      seen[static_cast<std::size_t>(i)] = 1;
    }
  };
  check(vec_perm, f.n_vec(), "vector");
  check(mat_perm, f.n_mat(), "matrix");
  return select_ranks(f, vec_perm, mat_perm, &f.layout);
}

namespace detail {

// Resamples axis-major rows (n_old rows of `stride` values) onto n_new
// nodes covering the normalized sub-interval [lo, hi] of the old axis.
inline std::vector<double> lerp_weights(int n_old, int n_new, double lo, double hi, std::vector<int>& idx) {
  std::vector<double> w(static_cast<std::size_t>(n_new));
  idx.resize(static_cast<std::size_t>(n_new));
  for (int i = 0; i < n_new; ++i) {
    const double u = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n_new - 1);
    const double x = std::clamp(u, 0.0, 1.0) * (n_old - 1);
    const int i0 = std::min(static_cast<int>(x), n_old - 2);
    idx[static_cast<std::size_t>(i)] = i0;
    w[static_cast<std::size_t>(i)] = x - i0;
  }
  return w;
}

template <typename T>
std::vector<T> resample_vector(const std::vector<T>& src, int n_old, int n_new, int rank, double lo, double hi) {
  std::vector<int> idx;
  const auto w = lerp_weights(n_old, n_new, lo, hi, idx);
  std::vector<T> out(static_cast<std::size_t>(n_new) * rank);
  for (int i = 0; i < n_new; ++i) {
    const T* a = src.data() + static_cast<std::size_t>(idx[i]) * rank;
    const T* b = a + rank;
    const double f = w[i];
    for (int r = 0; r < rank; ++r) {
      out[static_cast<std::size_t>(i) * rank + r] = static_cast<T>((1.0 - f) * a[r] + f * b[r]);
    }
  }
  return out;
}

template <typename T>
std::vector<T> resample_matrix(const std::vector<T>& src, int n0_old, int n1_old, int n0_new, int n1_new, int rank,
                               double lo0, double hi0, double lo1, double hi1) {
  std::vector<int> i0, i1;
  const auto w0 = lerp_weights(n0_old, n0_new, lo0, hi0, i0);
  const auto w1 = lerp_weights(n1_old, n1_new, lo1, hi1, i1);
  std::vector<T> out(static_cast<std::size_t>(n0_new) * n1_new * rank);
  for (int p = 0; p < n0_new; ++p) {
    for (int q = 0; q < n1_new; ++q) {
      const T* c00 = src.data() + (static_cast<std::size_t>(i0[p]) * n1_old + i1[q]) * rank;
      const T* c10 = c00 + static_cast<std::size_t>(n1_old) * rank;
      const T* c01 = c00 + rank;
      const T* c11 = c10 + rank;
      const double a = w0[p], b = w1[q];
      T* o = out.data() + (static_cast<std::size_t>(p) * n1_new + q) * rank;
      for (int r = 0; r < rank; ++r) {
        o[r] = static_cast<T>((1 - a) * (1 - b) * c00[r] + a * (1 - b) * c10[r] + (1 - a) * b * c01[r] +
                              a * b * c11[r]);
      }
    }
  }
  return out;
}

}  // namespace detail

/// Resamples every factor onto `res` nodes spanning the normalized
/// sub-box [lo, hi] of the current field. S is unchanged.
template <typename T>
DecomposedField<T> resample(const DecomposedField<T>& f, GridSize res, const Vec3& lo, const Vec3& hi) {
  if (res.x < 2 || res.y < 2 || res.z < 2) throw Error("target resolution must be at least 2 per axis");
  const int nv = f.n_vec(), nm = f.n_mat();
  DecomposedField<T> out;
  out.channels = f.channels;
  out.res = res;
  out.layout = f.layout;
  out.s = f.s;
  out.ux = detail::resample_vector(f.ux, f.res.x, res.x, nv, lo.x(), hi.x());
  out.uy = detail::resample_vector(f.uy, f.res.y, res.y, nv, lo.y(), hi.y());
  out.uz = detail::resample_vector(f.uz, f.res.z, res.z, nv, lo.z(), hi.z());
  out.uxy = detail::resample_matrix(f.uxy, f.res.x, f.res.y, res.x, res.y, nm, lo.x(), hi.x(), lo.y(), hi.y());
  out.uyz = detail::resample_matrix(f.uyz, f.res.y, f.res.z, res.y, res.z, nm, lo.y(), hi.y(), lo.z(), hi.z());
  out.uxz = detail::resample_matrix(f.uxz, f.res.x, f.res.z, res.x, res.z, nm, lo.x(), hi.x(), lo.z(), hi.z());
  return out;
}

/// Endpoint-aligned linear/bilinear upsampling of every factor.
template <typename T>
DecomposedField<T> upsample(const DecomposedField<T>& f, GridSize res) {
  return resample(f, res, Vec3::Zero(), Vec3::Ones());
}

/// Gaussian-initialized factors: entries factor_mean + factor_std * N(0,1)
/// and S entries s_std * N(0,1).
template <typename T, typename Rng>
DecomposedField<T> random_field(int channels, GridSize res, RankLayout layout, Rng& rng, double factor_std,
                                double s_std, double factor_mean = 0.0) {
  DecomposedField<T> f = DecomposedField<T>::zeros(channels, res, std::move(layout));
  std::normal_distribution<double> normal(0.0, 1.0);
  for (auto& v : f.s) v = static_cast<T>(s_std * normal(rng));
  for (int t = 1; t < 7; ++t) {
    for (auto& v : *f.tensors()[t]) v = static_cast<T>(factor_mean + factor_std * normal(rng));
  }
  return f;
}

}  // namespace ccfield
