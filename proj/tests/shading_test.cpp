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
#include <vector>

#include "ccfield/shading.hpp"

using namespace ccfield;

namespace {

constexpr double kPi = 3.14159265358979323846;

double factorial(int n) {
  double f = 1;
  for (int i = 2; i <= n; ++i) f *= i;
  return f;
}

// Associated Legendre P_l^m(x), m >= 0, no Condon-Shortley phase.
double legendre(int l, int m, double x) {
  double pmm = 1.0;
  const double s = std::sqrt(std::max(0.0, 1.0 - x * x));
  for (int i = 1; i <= m; ++i) pmm *= (2.0 * i - 1.0) * s;
  if (l == m) return pmm;
  double pm1 = x * (2.0 * m + 1.0) * pmm;
  if (l == m + 1) return pm1;
  double pl = 0;
  for (int ll = m + 2; ll <= l; ++ll) {
    pl = ((2.0 * ll - 1.0) * x * pm1 - (ll + m - 1.0) * pmm) / (ll - m);
    pmm = pm1;
    pm1 = pl;
  }
  return pl;
}

// Real SH from the recurrence, indexed l*l + l + m.
double sh_oracle(int l, int m, const Vec3& d) {
  const double theta = std::acos(std::clamp(d.z(), -1.0, 1.0));
  const double phi = std::atan2(d.y(), d.x());
  const int am = std::abs(m);
  const double k = std::sqrt((2.0 * l + 1.0) / (4.0 * kPi) * factorial(l - am) / factorial(l + am));
  const double p = legendre(l, am, std::cos(theta));
  if (m == 0) return k * p;
  return std::sqrt(2.0) * k * p * (m > 0 ? std::cos(am * phi) : std::sin(am * phi));
}

Vec3 random_dir(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Vec3 v(n(rng), n(rng), n(rng));
  return v.normalized();
}

}  // namespace

TEST(ShBasis, MatchesLegendreRecurrence) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 500; ++trial) {
    const Vec3 d = random_dir(rng);
    const auto got = sh_basis(d, 4);
    for (int l = 0; l <= 4; ++l) {
      for (int m = -l; m <= l; ++m) EXPECT_NEAR(got[l * l + l + m], sh_oracle(l, m, d), 1e-12) << l << "," << m;
    }
  }
}

TEST(ShBasis, PolesAndAxes) {
  const auto z = sh_basis(Vec3(0, 0, 1), 4);
  for (int l = 0; l <= 4; ++l) {
    for (int m = -l; m <= l; ++m) {
      if (m != 0) EXPECT_NEAR(z[l * l + l + m], 0.0, 1e-15);
    }
    EXPECT_NEAR(z[l * l + l], std::sqrt((2.0 * l + 1.0) / (4.0 * kPi)), 1e-12);
  }
  // Unnormalized input is normalized first.
  const auto a = sh_basis(Vec3(3, -4, 12), 3);
  const auto b = sh_basis(Vec3(3, -4, 12) / 13.0, 3);
  for (int k = 0; k < 16; ++k) EXPECT_NEAR(a[k], b[k], 1e-14);
}

TEST(ShBasis, StratifiedOrthonormality) {
  // Jittered (cos theta, phi) strata give uniform directions on the sphere.
  constexpr int kSide = 400;
  constexpr int K = 16;
  std::vector<double> gram(K * K, 0.0);
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::array<double, kMaxShCoeffs> y{};
  for (int i = 0; i < kSide; ++i) {
    for (int j = 0; j < kSide; ++j) {
      const double z = -1.0 + 2.0 * (i + u(rng)) / kSide;
      const double phi = 2.0 * kPi * (j + u(rng)) / kSide;
      const double r = std::sqrt(1.0 - z * z);
      eval_sh_basis(Vec3(r * std::cos(phi), r * std::sin(phi), z), 3, y);
      for (int a = 0; a < K; ++a) {
        for (int b = a; b < K; ++b) gram[a * K + b] += y[a] * y[b];
      }
    }
  }
  const double w = 4.0 * kPi / (kSide * kSide);
  for (int a = 0; a < K; ++a) {
    for (int b = a; b < K; ++b) EXPECT_NEAR(gram[a * K + b] * w, a == b ? 1.0 : 0.0, 5e-3) << a << "," << b;
  }
}

TEST(ShBasis, RejectsBadInput) {
  std::array<double, kMaxShCoeffs> out{};
  EXPECT_THROW(eval_sh_basis(Vec3::Zero(), 2, out), Error);
  EXPECT_THROW(eval_sh_basis(Vec3::UnitX(), 5, out), Error);
  std::array<double, 4> tiny{};
  EXPECT_THROW(eval_sh_basis(Vec3::UnitX(), 2, tiny), Error);
}

TEST(Activations, SoftplusAndSigmoid) {
  EXPECT_NEAR(softplus(0.0), std::log(2.0), 1e-15);
  EXPECT_NEAR(softplus(-30.0), std::exp(-30.0), 1e-20);
  EXPECT_EQ(softplus(50.0), 50.0);
  EXPECT_NEAR(sigmoid(0.0), 0.5, 1e-15);
  EXPECT_NEAR(sigmoid(-800.0), 0.0, 1e-300);
  EXPECT_NEAR(sigmoid(800.0), 1.0, 1e-15);
  for (double x : {-5.0, -0.3, 0.7, 4.0}) EXPECT_NEAR(sigmoid(x) + sigmoid(-x), 1.0, 1e-15);
}

TEST(Decode, DensityShift) {
  ShadingConfig cfg;
  EXPECT_NEAR(decode_density(10.0, cfg), std::log(2.0), 1e-15);
  EXPECT_LT(decode_density(0.0, cfg), 1e-4);
  EXPECT_GT(decode_density(0.0, cfg), 0.0);
}

TEST(Decode, ColorIsSigmoidOfShDot) {
  ShadingConfig cfg;
  cfg.sh_degree = 2;
  const int K = cfg.coeff_count();
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> raw(static_cast<std::size_t>(cfg.color_channels()));
  for (double& v : raw) v = n(rng);
  const Vec3 d = random_dir(rng);
  const auto out = decode<double>(0.0, raw, d, cfg);
  for (int kappa = 0; kappa < 3; ++kappa) {
    double dot = 0;
    for (int l = 0; l <= 2; ++l) {
      for (int m = -l; m <= l; ++m) dot += raw[kappa * K + l * l + l + m] * sh_oracle(l, m, d);
    }
    EXPECT_NEAR(out.rgb[kappa], 1.0 / (1.0 + std::exp(-dot)), 1e-12);
  }
  std::vector<double> short_raw(5);
  EXPECT_THROW(decode<double>(0.0, short_raw, d, cfg), Error);
}

TEST(Decode, DegreeZeroIsViewIndependent) {
  ShadingConfig cfg;
  cfg.sh_degree = 0;
  const std::vector<float> raw{0.3f, -1.2f, 2.0f};
  std::mt19937_64 rng(4);
  const auto ref = decode<float>(1.0f, raw, Vec3::UnitZ(), cfg);
  for (int i = 0; i < 1000; ++i) {
    const auto o = decode<float>(1.0f, raw, random_dir(rng), cfg);
    for (int k = 0; k < 3; ++k) EXPECT_NEAR(o.rgb[k], ref.rgb[k], 1e-7);
  }
}

TEST(ShadingConfig, ChannelLayout) {
  ShadingConfig cfg;
  EXPECT_EQ(cfg.coeff_count(), 16);
  EXPECT_EQ(cfg.color_channels(), 48);
  cfg.sh_degree = 4;
  EXPECT_EQ(cfg.color_channels(), 75);
  cfg.sh_degree = -1;
  EXPECT_THROW(cfg.validate(), Error);
}
