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

#include <cmath>
#include <random>

#include "ccfield/renderer.hpp"

using namespace ccfield;

namespace {

// Raw density value whose decoded sigma is `sigma` under the default shift.
double raw_for_sigma(double sigma) { return 10.0 + std::log(std::expm1(sigma)); }

// A model whose density is constant and whose color is a fixed logit.
FieldPair<double> homogeneous(double sigma, const Aabb& box) {
  FieldPair<double> m;
  m.aabb = box;
  m.shading.sh_degree = 0;
  m.density = DecomposedField<double>::zeros(1, {2, 2, 2}, RankLayout::single(1, 0));
  for (auto* t : m.density.tensors()) std::fill(t->begin(), t->end(), 1.0);
  m.density.s[0] = raw_for_sigma(sigma);
  m.color = DecomposedField<double>::zeros(3, {2, 2, 2}, RankLayout::single(1, 0));
  for (auto* t : m.color.tensors()) std::fill(t->begin(), t->end(), 1.0);
  return m;
}

FieldPair<double> random_model(std::uint64_t seed, RankLayout dl, RankLayout cl) {
  std::mt19937_64 rng(seed);
  FieldPair<double> m;
  m.aabb = {Vec3(-1, -0.5, -1.5), Vec3(1, 1.5, 0.5)};
  m.shading.sh_degree = 2;
  m.density = random_field<double>(1, {6, 7, 5}, std::move(dl), rng, 0.3, 0.0, 1.2);
  std::fill(m.density.s.begin(), m.density.s.end(), 1.0);
  m.color = random_field<double>(m.shading.color_channels(), {6, 7, 5}, std::move(cl), rng, 0.5, 1.0, 0.2);
  return m;
}

// Independent quadrature: same sample positions, exact transmittance.
MarchResult oracle_march(const FieldPair<double>& m, const Ray& ray, const Vec3& bg, RankCounts dkeep,
                         RankCounts ckeep) {
  MarchResult out;
  const auto hit = ray_aabb(ray, m.aabb);
  double trans = 1.0;
  std::array<double, 3> acc{0, 0, 0};
  if (hit) {
    const double delta = m.aabb.diagonal() / 512.0;
    const auto sh = sh_basis(ray.dir, m.shading.sh_degree);
    const int K = m.shading.coeff_count();
    for (int i = 0;; ++i) {
      const double t = hit->first + (i + 0.5) * delta;
      if (t >= hit->second) break;
      const Vec3 u = m.aabb.to_local(ray.origin + t * ray.dir).cwiseMax(0.0).cwiseMin(1.0);
      const double raw = query_features(m.density, u, dkeep)[0];
      const double sigma = std::log1p(std::exp(raw - 10.0));
      const auto feat = query_features(m.color, u, ckeep);
      const double alpha = 1.0 - std::exp(-sigma * delta);
      for (int k = 0; k < 3; ++k) {
        double dot = 0;
        for (int j = 0; j < K; ++j) dot += feat[k * K + j] * sh[j];
        acc[k] += trans * alpha / (1.0 + std::exp(-dot));
      }
      trans *= 1.0 - alpha;
    }
  }
  for (int k = 0; k < 3; ++k) out.rgb[k] = acc[k] + trans * bg[k];
  out.alpha = 1.0 - trans;
  return out;
}

RenderOptions exact_options() {
  RenderOptions o;
  o.termination = 0.0;
  o.color_weight_threshold = 0.0;
  o.threads = 1;
  return o;
}

Ray ray_between(const Vec3& from, const Vec3& to) { return {from, (to - from).normalized()}; }

}  // namespace

TEST(RayAabb, HitsMissesAndInside) {
  const Aabb box{Vec3(-1, -1, -1), Vec3(1, 1, 1)};
  const auto h = ray_aabb({Vec3(-3, 0, 0), Vec3(1, 0, 0)}, box);
  ASSERT_TRUE(h);
  EXPECT_NEAR(h->first, 2.0, 1e-12);
  EXPECT_NEAR(h->second, 4.0, 1e-12);
  EXPECT_FALSE(ray_aabb({Vec3(-3, 2, 0), Vec3(1, 0, 0)}, box));
  EXPECT_FALSE(ray_aabb({Vec3(3, 0, 0), Vec3(1, 0, 0)}, box));
  const auto in = ray_aabb({Vec3(0, 0, 0), Vec3(0, 0, -1)}, box);
  ASSERT_TRUE(in);
  EXPECT_EQ(in->first, 0.0);
  EXPECT_NEAR(in->second, 1.0, 1e-12);
}

TEST(MakeSegment, SamplesStayInside) {
  for (double len : {0.01, 0.5, 1.0, 2.345}) {
    const RaySegment s = make_segment(1.0, 1.0 + len, 0.1, 4096);
    for (int i = 0; i < s.count; ++i) {
      EXPECT_GT(s.t(i), 1.0);
      EXPECT_LT(s.t(i), 1.0 + len);
    }
    EXPECT_GE(s.t(s.count), 1.0 + len);
  }
  EXPECT_EQ(make_segment(0.0, 100.0, 0.1, 50).count, 50);
}

TEST(Camera, CentreRayAndValidation) {
  const Vec3 eye(3, -2, 1.5);
  const Camera cam = Camera::from_fov(64, 48, 0.8, look_at(eye, Vec3::Zero()));
  EXPECT_NEAR(cam.focal, 32.0 / std::tan(0.4), 1e-12);
  // The image centre falls between the four middle pixels.
  Vec3 mean = Vec3::Zero();
  for (int dx : {31, 32}) {
    for (int dy : {23, 24}) mean += cam.ray(dx, dy).dir;
  }
  EXPECT_LT((mean.normalized() - (-eye).normalized()).norm(), 1e-9);
  // Row 0 is the top of the image.
  EXPECT_GT(cam.ray(32, 0).dir.z(), cam.ray(32, 47).dir.z());
  Mat4 skew = Mat4::Identity();
  skew(0, 1) = 0.5;
  EXPECT_THROW(Camera::from_fov(4, 4, 0.8, skew), Error);
  EXPECT_THROW(Camera::from_fov(0, 4, 0.8, Mat4::Identity()), Error);
}

TEST(Quadrature, HomogeneousAlphaAlongDiagonal) {
  const Aabb box{Vec3(0, 0, 0), Vec3(1, 1, 1)};
  const double L = box.diagonal();
  for (double tau : {0.1, 1.0, 5.0}) {
    const auto m = homogeneous(tau / L, box);
    const Ray r = ray_between(Vec3(-1, -1, -1), Vec3(2, 2, 2));
    const MarchResult res = march_ray(m, r, exact_options());
    const double want = 1.0 - std::exp(-tau);
    EXPECT_NEAR(res.alpha, want, 0.005 * want) << "tau " << tau;
  }
}

TEST(Quadrature, HomogeneousAlphaAlongAxis) {
  const Aabb box{Vec3(-1, -1, -1), Vec3(1, 1, 1)};
  for (double tau : {0.1, 1.0, 5.0}) {
    const auto m = homogeneous(tau / 2.0, box);
    const MarchResult res = march_ray(m, Ray{Vec3(0.01, -0.02, 5), Vec3(0, 0, -1)}, exact_options());
    const double want = 1.0 - std::exp(-tau);
    EXPECT_NEAR(res.alpha, want, 0.005 * want) << "tau " << tau;
  }
}

TEST(MarchRay, MatchesBruteForceOracle) {
  const auto m = random_model(1, RankLayout({{2, 1}, {1, 1}}), RankLayout({{2, 1}, {0, 2}}));
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const Vec3 bg(0.2, 0.5, 0.9);
  RenderOptions o = exact_options();
  o.background = bg;
  for (int n = 0; n < 40; ++n) {
    const Vec3 eye = 4.0 * Vec3(u(rng), u(rng), u(rng)).normalized();
    const Ray r = ray_between(eye, Vec3(0.5 * u(rng), 0.5 + 0.5 * u(rng), -0.5 + 0.5 * u(rng)));
    const MarchResult got = march_ray(m, r, o);
    const MarchResult want =
        oracle_march(m, r, bg, m.density.layout.totals(), m.color.layout.totals());
    for (int k = 0; k < 3; ++k) EXPECT_NEAR(got.rgb[k], want.rgb[k], 1e-10);
    EXPECT_NEAR(got.alpha, want.alpha, 1e-10);
  }
}

TEST(MarchRay, DefaultThresholdsStayClose) {
  const auto m = random_model(3, RankLayout::single(3, 2), RankLayout::single(2, 2));
  RenderOptions o;
  o.threads = 1;
  const Ray r = ray_between(Vec3(3, 3, -3), Vec3(0, 0.5, -0.5));
  const MarchResult a = march_ray(m, r, o);
  const MarchResult b = march_ray(m, r, exact_options());
  // Unshaded samples lose at most their own weight; stopping early loses at
  // most the remaining transmittance.
  MarchWorkspace<double> ws;
  RayTape<double> tape;
  tape.reset(1);
  double rgb[3], alpha;
  march_prefixes(m, r, exact_options(), 1, ws, rgb, &alpha, &tape);
  double bound = o.termination;
  for (int i = 0; i < tape.samples(); ++i) {
    const double w = tape.trans[i] * (1.0 - std::exp(-tape.sigma[i] * tape.step));
    if (w < o.color_weight_threshold) bound += w;
  }
  ASSERT_LT(bound, 0.05);
  for (int k = 0; k < 3; ++k) EXPECT_NEAR(a.rgb[k], b.rgb[k], bound);
}

TEST(MarchRay, MissReturnsBackground) {
  const auto m = random_model(4, RankLayout::single(1, 1), RankLayout::single(1, 1));
  RenderOptions o = exact_options();
  o.background = Vec3(0.1, 0.2, 0.3);
  const MarchResult r = march_ray(m, Ray{Vec3(10, 10, 10), Vec3(1, 0, 0)}, o);
  EXPECT_EQ(r.alpha, 0.0);
  EXPECT_NEAR(r.rgb[0], 0.1, 1e-15);
  EXPECT_NEAR(r.rgb[2], 0.3, 1e-15);
}

TEST(MarchPrefixes, EachPrefixEqualsTruncatedModel) {
  const auto m = random_model(5, RankLayout({{2, 0}, {0, 2}}), RankLayout({{2, 1}, {1, 0}, {0, 2}}));
  const int M = m.prefix_count();
  ASSERT_EQ(M, 3);
  MarchWorkspace<double> ws;
  std::vector<double> rgb(3 * M), alpha(M);
  const Ray r = ray_between(Vec3(-3, 2, 2), Vec3(0.1, 0.4, -0.6));
  march_prefixes(m, r, exact_options(), M, ws, rgb.data(), alpha.data());
  for (int p = 0; p < M; ++p) {
    const MarchResult want = oracle_march(m, r, Vec3::Ones(), m.density.layout.prefix(p + 1),
                                          m.color.layout.prefix(p + 1));
    for (int k = 0; k < 3; ++k) EXPECT_NEAR(rgb[3 * p + k], want.rgb[k], 1e-10) << "prefix " << p;
    EXPECT_NEAR(alpha[p], want.alpha, 1e-10);
  }
}

TEST(Occupancy, EmptyGridSkipsEverythingFullGridChangesNothing) {
  auto m = random_model(6, RankLayout::single(2, 1), RankLayout::single(1, 1));
  const Ray r = ray_between(Vec3(3, -3, 2), Vec3(0, 0.5, -0.5));
  const MarchResult plain = march_ray(m, r, exact_options());
  m.occupancy = build_occupancy(m, {8, 8, 8}, -1.0, 0, 1);
  const MarchResult full = march_ray(m, r, exact_options());
  EXPECT_EQ(plain.rgb, full.rgb);
  m.occupancy = build_occupancy(m, {8, 8, 8}, 1e30, 0, 1);
  const MarchResult none = march_ray(m, r, exact_options());
  EXPECT_EQ(none.alpha, 0.0);
}

TEST(Occupancy, ThresholdAndDilation) {
  // Density rises along x only: raw = 20 * u_x.
  FieldPair<double> m;
  m.aabb = {Vec3::Zero(), Vec3::Ones()};
  m.shading.sh_degree = 0;
  m.density = DecomposedField<double>::zeros(1, {2, 2, 2}, RankLayout::single(1, 0));
  m.density.s[0] = 20.0;
  m.density.ux = {0.0, 1.0};
  m.density.uy = {1.0, 1.0};
  m.density.uz = {1.0, 1.0};
  m.color = DecomposedField<double>::zeros(3, {2, 2, 2}, RankLayout::single(1, 0));
  const double tau = std::log1p(std::exp(0.0));  // sigma at u_x = 0.5
  const OccupancyGrid g = build_occupancy(m, {4, 2, 2}, tau, 0, 1);
  EXPECT_EQ(g.cells[g.index(0, 0, 0)], 0);
  EXPECT_EQ(g.cells[g.index(1, 1, 1)], 0);
  EXPECT_EQ(g.cells[g.index(2, 0, 1)], 1);
  EXPECT_EQ(g.cells[g.index(3, 1, 0)], 1);
  const OccupancyGrid d = build_occupancy(m, {4, 2, 2}, tau, 1, 1);
  EXPECT_EQ(d.cells[d.index(1, 0, 0)], 1);
  EXPECT_EQ(d.cells[d.index(0, 0, 0)], 0);
  const auto box = shrink_aabb(g);
  ASSERT_TRUE(box);
  EXPECT_NEAR(box->min.x(), 0.5, 1e-12);
  EXPECT_NEAR(box->max.x(), 1.0, 1e-12);
  EXPECT_NEAR(box->min.y(), 0.0, 1e-12);
  OccupancyGrid empty = g;
  std::fill(empty.cells.begin(), empty.cells.end(), 0);
  EXPECT_FALSE(shrink_aabb(empty));
}

TEST(RenderImage, IndependentOfWorkerCount) {
  const auto mf = random_model(7, RankLayout::single(2, 1), RankLayout({{1, 1}, {1, 0}})).cast<float>();
  const Camera cam = Camera::from_fov(24, 17, 0.9, look_at(Vec3(3, 2, 1), Vec3(0, 0.5, -0.5)));
  RenderOptions o;
  o.threads = 1;
  const Image a = render_image(mf, cam, o);
  o.threads = 3;
  const Image b = render_image(mf, cam, o);
  EXPECT_EQ(a.rgb, b.rgb);
}

TEST(Psnr, CapAndKnownValue) {
  Image a(4, 4), b(4, 4);
  EXPECT_EQ(psnr(a, a), 99.0);
  for (auto& v : b.rgb) v = 0.1f;
  EXPECT_NEAR(psnr(a, b), 20.0, 1e-5);
  Image c(3, 4);
  EXPECT_THROW(psnr(a, c), Error);
}
