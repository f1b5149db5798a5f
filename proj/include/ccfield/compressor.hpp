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

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <ostream>
#include <string>
#include <vector>

#include "ccfield/common.hpp"
#include "ccfield/field.hpp"
#include "ccfield/renderer.hpp"

namespace ccfield {

struct ImportanceReport {
  std::vector<double> vec;       // score per vector rank
  std::vector<double> mat;       // score per matrix rank
  std::vector<int> vec_group;
  std::vector<int> mat_group;

  /// CSV rows: kind,index,group,score
  void write_csv(std::ostream& os) const {
    os << "kind,index,group,score\n";
    os.precision(9);
    for (std::size_t r = 0; r < vec.size(); ++r) os << "vec," << r << ',' << vec_group[r] << ',' << vec[r] << '\n';
    for (std::size_t r = 0; r < mat.size(); ++r) os << "mat," << r << ',' << mat_group[r] << ',' << mat[r] << '\n';
  }
};

namespace detail {

// L2 norm of rank slice r in a tensor whose innermost index is the rank.
template <typename T>
double slice_norm(const std::vector<T>& t, int rank, int r) {
  double acc = 0.0;
  for (std::size_t i = static_cast<std::size_t>(r); i < t.size(); i += static_cast<std::size_t>(rank)) {
    acc += static_cast<double>(t[i]) * static_cast<double>(t[i]);
  }
  return std::sqrt(acc);
}

}  // namespace detail

/// mean_c |S[c, r]| times the norms of the three factor slices of rank r.
template <typename T>
ImportanceReport rank_importance(const DecomposedField<T>& f) {
  ImportanceReport rep;
  const int nv = f.n_vec(), nm = f.n_mat(), R = f.rank();
  auto mean_abs_s = [&](int col) {
    double acc = 0.0;
    for (int c = 0; c < f.channels; ++c) acc += std::abs(static_cast<double>(f.s[static_cast<std::size_t>(c) * R + col]));
    return acc / f.channels;
  };
  for (int r = 0; r < nv; ++r) {
    rep.vec.push_back(mean_abs_s(r) * detail::slice_norm(f.ux, nv, r) * detail::slice_norm(f.uy, nv, r) *
                      detail::slice_norm(f.uz, nv, r));
  }
  for (int r = 0; r < nm; ++r) {
    rep.mat.push_back(mean_abs_s(nv + r) * detail::slice_norm(f.uxy, nm, r) * detail::slice_norm(f.uyz, nm, r) *
                      detail::slice_norm(f.uxz, nm, r));
  }
  for (int g = 0; g < f.layout.group_count(); ++g) {
    rep.vec_group.insert(rep.vec_group.end(), static_cast<std::size_t>(f.layout.groups()[g].vec), g);
    rep.mat_group.insert(rep.mat_group.end(), static_cast<std::size_t>(f.layout.groups()[g].mat), g);
  }
  return rep;
}

namespace detail {

// Indices [begin, end) sorted by descending score, ties by index; the
// first `keep` are returned in ascending index order.
inline std::vector<int> top_k(const std::vector<double>& score, int begin, int end, int keep) {
  std::vector<int> idx(static_cast<std::size_t>(end - begin));
  std::iota(idx.begin(), idx.end(), begin);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return score[a] > score[b]; });
  idx.resize(static_cast<std::size_t>(keep));
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace detail

/// Keeps every group whose ranks fit entirely under `target`; inside the
/// first group that does not fit, keeps its highest-importance vector and
/// matrix ranks up to the remaining counts. Groups after it are dropped.
template <typename T>
DecomposedField<T> sort_and_truncate(const DecomposedField<T>& f, RankCounts target) {
  if (target.vec == 0 && target.mat == 0) throw Error("truncation target keeps no ranks");
  const RankCounts tot = f.layout.totals();
  if (target.vec < 0 || target.mat < 0 || target.vec > tot.vec || target.mat > tot.mat) {
    throw Error("truncation target exceeds the layout (" + std::to_string(tot.vec) + " vec, " +
                std::to_string(tot.mat) + " mat)");
  }
  const auto& groups = f.layout.groups();
  int full = 0;
  while (full < f.layout.group_count()) {
    const RankCounts next = f.layout.prefix(full + 1);
    if (next.vec > target.vec || next.mat > target.mat) break;
    ++full;
  }
  const RankCounts kept = f.layout.prefix(full);
  std::vector<int> vi(static_cast<std::size_t>(kept.vec));
  std::vector<int> mi(static_cast<std::size_t>(kept.mat));
  std::iota(vi.begin(), vi.end(), 0);
  std::iota(mi.begin(), mi.end(), 0);
  std::vector<RankCounts> out_groups(groups.begin(), groups.begin() + full);

  const RankCounts deficit{target.vec - kept.vec, target.mat - kept.mat};
  if (deficit.total() > 0) {
    if (full == f.layout.group_count()) throw Error("truncation target exceeds the layout");
    const RankCounts& part = groups[static_cast<std::size_t>(full)];
    if (deficit.vec > part.vec || deficit.mat > part.mat) {
      throw Error("truncation target (" + std::to_string(target.vec) + ", " + std::to_string(target.mat) +
                  ") skips over group " + std::to_string(full) + "; only group prefixes can be truncated");
    }
    const ImportanceReport rep = rank_importance(f);
    for (int r : detail::top_k(rep.vec, kept.vec, kept.vec + part.vec, deficit.vec)) vi.push_back(r);
    for (int r : detail::top_k(rep.mat, kept.mat, kept.mat + part.mat, deficit.mat)) mi.push_back(r);
    out_groups.push_back(deficit);
  }
  const RankLayout layout(std::move(out_groups));
  return select_ranks(f, vi, mi, &layout);
}

/// Every (vec, mat) target reachable by sort_and_truncate, smallest
/// first, walking the stored rank order: group by group, vector ranks
/// before matrix ranks within a group.
inline std::vector<RankCounts> truncation_targets(const RankLayout& layout) {
  std::vector<RankCounts> out;
  for (int g = 0; g < layout.group_count(); ++g) {
    const RankCounts base = layout.prefix(g);
    const RankCounts& grp = layout.groups()[g];
    for (int v = 1; v <= grp.vec; ++v) out.push_back({base.vec + v, base.mat});
    for (int m = 1; m <= grp.mat; ++m) out.push_back({base.vec + grp.vec, base.mat + m});
  }
  return out;
}

/// Largest color truncation whose serialized model size is within
/// `budget`. `size_of(model)` gives the serialized size in bytes.
template <typename T>
FieldPair<T> compress_to_budget(const FieldPair<T>& model, std::uint64_t budget,
                                const std::function<std::uint64_t(const FieldPair<T>&)>& size_of) {
  if (size_of(model) <= budget) return model;
  const auto targets = truncation_targets(model.color.layout);
  // Sizes grow monotonically along the scan, so the last fitting target wins.
  FieldPair<T> best;
  bool found = false;
  FieldPair<T> trial = model;
  for (const auto& t : targets) {
    trial.color = sort_and_truncate(model.color, t);
    if (size_of(trial) > budget) break;
    best = trial;
    found = true;
  }
  if (!found) {
    trial.color = sort_and_truncate(model.color, targets.front());
    throw Error("budget " + std::to_string(budget) + " bytes is below the minimum of " +
                std::to_string(size_of(trial)) + " bytes (density plus one color rank)");
  }
  return best;
}

}  // namespace ccfield
