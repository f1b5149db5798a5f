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

#include <gtest/gtest.h>

#include <numeric>
#include <random>

#include "ccfield/field.hpp"

using namespace ccfield;

namespace {

// Reference evaluation written from the definition: each factor is
// interpolated on its own grid with explicit corner weights, then the
// rank products are mixed by S.
double lerp1(const std::vector<double>& t, int n, int rank, int r, double u) {
  const double x = u * (n - 1);
  int i = static_cast<int>(std::floor(x));
  if (i >= n - 1) i = n - 2;
  const double f = x - i;
  return (1 - f) * t[static_cast<std::size_t>(i) * rank + r] + f * t[static_cast<std::size_t>(i + 1) * rank + r];
}

double lerp2(const std::vector<double>& t, int n0, int n1, int rank, int r, double u0, double u1) {
  double acc = 0;
  const double x0 = u0 * (n0 - 1), x1 = u1 * (n1 - 1);
  const int i0 = std::min(static_cast<int>(std::floor(x0)), n0 - 2);
  const int i1 = std::min(static_cast<int>(std::floor(x1)), n1 - 2);
  for (int a = 0; a < 2; ++a) {
    for (int b = 0; b < 2; ++b) {
      const double w0 = a ? x0 - i0 : 1 - (x0 - i0);
      const double w1 = b ? x1 - i1 : 1 - (x1 - i1);
      acc += w0 * w1 * t[(static_cast<std::size_t>(i0 + a) * n1 + (i1 + b)) * rank + r];
    }
  }
  return acc;
}

std::vector<double> oracle_features(const DecomposedField<double>& f, const Vec3& u, RankCounts keep) {
  const int nv = f.n_vec(), nm = f.n_mat(), R = f.rank();
  std::vector<double> out(static_cast<std::size_t>(f.channels), 0.0);
  for (int r = 0; r < keep.vec; ++r) {
    const double p = lerp1(f.ux, f.res.x, nv, r, u.x()) * lerp1(f.uy, f.res.y, nv, r, u.y()) *
                     lerp1(f.uz, f.res.z, nv, r, u.z());
    for (int c = 0; c < f.channels; ++c) out[c] += f.s[static_cast<std::size_t>(c) * R + r] * p;
  }
  for (int r = 0; r < keep.mat; ++r) {
    const double p = lerp2(f.uxy, f.res.x, f.res.y, nm, r, u.x(), u.y()) *
                     lerp2(f.uyz, f.res.y, f.res.z, nm, r, u.y(), u.z()) *
                     lerp2(f.uxz, f.res.x, f.res.z, nm, r, u.x(), u.z());
    for (int c = 0; c < f.channels; ++c) out[c] += f.s[static_cast<std::size_t>(c) * R + nv + r] * p;
  }
  return out;
}

DecomposedField<double> make_field(std::uint64_t seed, RankLayout layout = RankLayout({{3, 2}, {1, 2}}),
                                   GridSize res = {5, 6, 7}, int channels = 4) {
  std::mt19937_64 rng(seed);
  return random_field<double>(channels, res, std::move(layout), rng, 1.0, 1.0);
}

Vec3 random_point(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  return {u(rng), u(rng), u(rng)};
}

}  // namespace

TEST(RankLayout, PrefixTotalsAndClipping) {
  const RankLayout l({{16, 0}, {0, 1}, {0, 1}, {0, 2}, {0, 4}});
  EXPECT_EQ(l.group_count(), 5);
  EXPECT_EQ(l.totals(), (RankCounts{16, 8}));
  EXPECT_EQ(l.prefix(0), (RankCounts{0, 0}));
  EXPECT_EQ(l.prefix(2), (RankCounts{16, 1}));
  EXPECT_EQ(l.prefix(99), l.totals());
  const RankLayout c = l.clipped({16, 3});
  ASSERT_EQ(c.group_count(), 4);
  EXPECT_EQ(c.groups()[3], (RankCounts{0, 1}));
  EXPECT_THROW(l.clipped({17, 0}), Error);
  EXPECT_THROW(RankLayout({{1, 0}, {0, 0}}), Error);
  EXPECT_THROW(RankLayout(std::vector<RankCounts>{}), Error);
}

TEST(DecomposedField, TensorShapes) {
  const auto f = DecomposedField<float>::zeros(3, {4, 5, 6}, RankLayout::single(2, 3));
  EXPECT_EQ(f.s.size(), 15u);
  EXPECT_EQ(f.ux.size(), 8u);
  EXPECT_EQ(f.uy.size(), 10u);
  EXPECT_EQ(f.uz.size(), 12u);
  EXPECT_EQ(f.uxy.size(), 60u);
  EXPECT_EQ(f.uyz.size(), 90u);
  EXPECT_EQ(f.uxz.size(), 72u);
  EXPECT_EQ(f.parameter_count(), 15u + 30u + 222u);
  EXPECT_THROW(DecomposedField<float>::zeros(3, {1, 5, 6}, RankLayout::single(1, 0)), Error);
  auto bad = f;
  bad.uxz.pop_back();
  EXPECT_THROW(bad.validate(), Error);
}

TEST(QueryFeatures, MatchesInterpolationOracle) {
  const auto f = make_field(1);
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    const Vec3 u = random_point(rng);
    const RankCounts keep{static_cast<int>(rng() % 5), static_cast<int>(rng() % 5)};
    if (keep.total() == 0) continue;
    const auto got = query_features(f, u, keep);
    const auto want = oracle_features(f, u, keep);
    for (int c = 0; c < f.channels; ++c) EXPECT_NEAR(got[c], want[c], 1e-12) << "trial " << trial;
  }
}

TEST(QueryFeatures, CornersAreExactNodes) {
  const auto f = make_field(3);
  const auto dense = reconstruct_dense(f);
  const int H = f.res.x, W = f.res.y, D = f.res.z;
  for (int i : {0, H - 1}) {
    for (int j : {0, W - 1}) {
      for (int k : {0, D - 1}) {
        const auto got = query_features(f, Vec3(i / double(H - 1), j / double(W - 1), k / double(D - 1)));
        for (int c = 0; c < f.channels; ++c) {
          EXPECT_NEAR(got[c], dense[((static_cast<std::size_t>(c) * H + i) * W + j) * D + k], 1e-12);
        }
      }
    }
  }
}

TEST(QueryFeatures, RejectsOutsideAndBadKeep) {
  const auto f = make_field(4);
  EXPECT_THROW(query_features(f, Vec3(1.01, 0.5, 0.5)), Error);
  EXPECT_THROW(query_features(f, Vec3(0.5, std::nan(""), 0.5)), Error);
  EXPECT_THROW(query_features(f, Vec3(0.5, 0.5, 0.5), RankCounts{5, 0}), Error);
  EXPECT_NO_THROW(query_features(f, Vec3(1.0 + 1e-12, 0.0, 0.0)));
}

TEST(ReconstructDense, MatchesOracleAtEveryNode) {
  const auto f = make_field(5, RankLayout::single(2, 3), {3, 4, 5}, 2);
  const auto dense = reconstruct_dense(f);
  const RankCounts all = f.layout.totals();
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 4; ++j) {
      for (int k = 0; k < 5; ++k) {
        const auto want = oracle_features(f, Vec3(i / 2.0, j / 3.0, k / 4.0), all);
        for (int c = 0; c < 2; ++c) EXPECT_NEAR(dense[((c * 3 + i) * 4 + j) * 5 + k], want[c], 1e-12);
      }
    }
  }
  EXPECT_THROW(reconstruct_dense(f, 10), Error);
}

TEST(FieldProperties, LinearInS) {
  auto f = make_field(6);
  auto g = f;
  for (auto& v : g.s) v *= -2.5;
  std::mt19937_64 rng(7);
  for (int t = 0; t < 20; ++t) {
    const Vec3 u = random_point(rng);
    const auto a = query_features(f, u);
    const auto b = query_features(g, u);
    for (int c = 0; c < f.channels; ++c) EXPECT_NEAR(b[c], -2.5 * a[c], 1e-10);
  }
}

TEST(FieldProperties, TruncateEqualsPartialQuery) {
  const auto f = make_field(8);
  const RankCounts keep{3, 2};
  const auto t = truncate(f, keep);
  EXPECT_EQ(t.layout, RankLayout({{3, 2}}));
  const auto t2 = truncate(f, {4, 3});
  EXPECT_EQ(t2.layout, RankLayout({{3, 2}, {1, 1}}));
  std::mt19937_64 rng(9);
  for (int n = 0; n < 30; ++n) {
    const Vec3 u = random_point(rng);
    const auto a = query_features(t, u);
    const auto b = query_features(f, u, keep);
    for (int c = 0; c < f.channels; ++c) EXPECT_NEAR(a[c], b[c], 1e-12);
  }
}

TEST(FieldProperties, PermutationLeavesFeaturesUnchanged) {
  const auto f = make_field(10);
  const std::vector<int> vp{3, 0, 2, 1};
  const std::vector<int> mp{1, 3, 0, 2};
  const auto p = permute_ranks(f, vp, mp);
  std::mt19937_64 rng(11);
  for (int n = 0; n < 30; ++n) {
    const Vec3 u = random_point(rng);
    const auto a = query_features(f, u);
    const auto b = query_features(p, u);
    for (int c = 0; c < f.channels; ++c) EXPECT_NEAR(a[c], b[c], 1e-12);
  }
  const std::vector<int> dup{0, 0, 1, 2};
  EXPECT_THROW(permute_ranks(f, dup, mp), Error);
}

TEST(FieldProperties, ConcatAddsFeatures) {
  const auto a = make_field(12, RankLayout::single(2, 1));
  const auto b = make_field(13, RankLayout({{1, 2}, {0, 1}}));
  const auto ab = concat_ranks(a, b);
  EXPECT_EQ(ab.layout.group_count(), 3);
  EXPECT_EQ(ab.layout.totals(), (RankCounts{3, 4}));
  std::mt19937_64 rng(14);
  for (int n = 0; n < 30; ++n) {
    const Vec3 u = random_point(rng);
    const auto x = query_features(a, u);
    const auto y = query_features(b, u);
    const auto z = query_features(ab, u);
    for (int c = 0; c < a.channels; ++c) EXPECT_NEAR(z[c], x[c] + y[c], 1e-12);
  }
  // Truncating the concatenation to a's counts gives a's vector ranks back.
  const auto back = select_ranks(ab, std::vector<int>{0, 1}, std::vector<int>{0});
  for (std::size_t i = 0; i < a.ux.size(); ++i) EXPECT_EQ(back.ux[i], a.ux[i]);
  for (std::size_t i = 0; i < a.uxy.size(); ++i) EXPECT_EQ(back.uxy[i], a.uxy[i]);
}

TEST(FieldProperties, SelectRanksValidates) {
  const auto f = make_field(15);
  EXPECT_THROW(select_ranks(f, std::vector<int>{}, std::vector<int>{}), Error);
  EXPECT_THROW(select_ranks(f, std::vector<int>{4}, std::vector<int>{}), Error);
  const RankLayout wrong = RankLayout::single(2, 0);
  EXPECT_THROW(select_ranks(f, std::vector<int>{0}, std::vector<int>{}, &wrong), Error);
}

TEST(Resample, SameResolutionIsIdentity) {
  const auto f = make_field(16);
  const auto g = upsample(f, f.res);
  const auto a = f.tensors();
  const auto b = g.tensors();
  for (int t = 0; t < 7; ++t) {
    ASSERT_EQ(a[t]->size(), b[t]->size());
    for (std::size_t i = 0; i < a[t]->size(); ++i) EXPECT_NEAR((*a[t])[i], (*b[t])[i], 1e-12);
  }
}

TEST(Resample, UpsamplingPreservesTheFieldOnVectorRanks) {
  // Linear factors reproduce linear interpolants, so a vector-only field
  // is unchanged pointwise when the grid is refined to 2n-1 nodes.
  const auto f = make_field(17, RankLayout::single(3, 0), {4, 5, 6}, 2);
  const auto g = upsample(f, {7, 9, 11});
  std::mt19937_64 rng(18);
  for (int n = 0; n < 50; ++n) {
    const Vec3 u = random_point(rng);
    const auto a = query_features(f, u);
    const auto b = query_features(g, u);
    for (int c = 0; c < 2; ++c) EXPECT_NEAR(a[c], b[c], 1e-10);
  }
}

TEST(Resample, SubBoxCropsTheField) {
  const auto f = make_field(19, RankLayout::single(2, 2), {6, 6, 6}, 1);
  const Vec3 lo(0.2, 0.0, 0.4), hi(0.8, 0.6, 1.0);
  const auto g = resample(f, {16, 16, 16}, lo, hi);
  // Corners of the new grid land on points of the old field exactly.
  for (int corner = 0; corner < 8; ++corner) {
    const Vec3 v((corner & 1) ? 1.0 : 0.0, (corner & 2) ? 1.0 : 0.0, (corner & 4) ? 1.0 : 0.0);
    const Vec3 old = lo + v.cwiseProduct(hi - lo);
    // Only vector ranks are exactly preserved off-node; compare each factor.
    const auto a = query_features(g, v, RankCounts{2, 0});
    const auto b = query_features(f, old, RankCounts{2, 0});
    EXPECT_NEAR(a[0], b[0], 1e-10);
  }
  EXPECT_THROW(resample(f, {1, 4, 4}, lo, hi), Error);
}

TEST(AccumulateFeatures, SplitRangesSum) {
  const auto f = make_field(20);
  RankSamples<double> smp;
  sample_ranks(f, make_stencil<double>(f.res, Vec3(0.3, 0.6, 0.9)), smp);
  std::vector<double> whole(4, 0.0), split(4, 0.0);
  accumulate_features(f, smp.prod.data(), 0, f.rank(), whole.data());
  accumulate_features(f, smp.prod.data(), 0, 3, split.data());
  accumulate_features(f, smp.prod.data(), 3, f.rank(), split.data());
  for (int c = 0; c < 4; ++c) EXPECT_NEAR(whole[c], split[c], 1e-12);
}

TEST(RandomField, DeterministicForSeed) {
  const auto a = make_field(21);
  const auto b = make_field(21);
  EXPECT_EQ(a.s, b.s);
  EXPECT_EQ(a.uxz, b.uxz);
  const auto f = a.cast<float>();
  EXPECT_FLOAT_EQ(f.uy[3], static_cast<float>(a.uy[3]));
}
