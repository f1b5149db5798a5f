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

#include <array>
#include <cmath>
#include <span>

#include "ccfield/common.hpp"

namespace ccfield {

constexpr int kMaxShDegree = 4;
constexpr int kMaxShCoeffs = (kMaxShDegree + 1) * (kMaxShDegree + 1);

struct ShadingConfig {
  int sh_degree = 3;
  double density_shift = -10.0;

  int coeff_count() const { return (sh_degree + 1) * (sh_degree + 1); }
  /// Color channels are stored rgb-major: channel = kappa * coeff_count() + k.
  int color_channels() const { return 3 * coeff_count(); }

  void validate() const {
    if (sh_degree < 0 || sh_degree > kMaxShDegree) throw Error("sh degree must be in [0, 4]");
    if (!std::isfinite(density_shift)) throw Error("density shift must be finite");
  }
};

/// Real spherical harmonics without the Condon-Shortley phase, in (l, m)
/// order l = 0..degree, m = -l..l. Writes (degree+1)^2 values.
inline void eval_sh_basis(const Vec3& dir, int degree, std::span<double> out) {
  if (degree < 0 || degree > kMaxShDegree) throw Error("sh degree must be in [0, 4]");
  if (out.size() < static_cast<std::size_t>((degree + 1) * (degree + 1))) throw Error("sh output too small");
  const double len = dir.norm();
  if (!(len > 1e-12) || !std::isfinite(len)) throw Error("sh direction must be nonzero");
  const Vec3 d = dir / len;
  const double x = d.x(), y = d.y(), z = d.z();
  constexpr double kPi = 3.14159265358979323846;

  out[0] = 0.5 * std::sqrt(1.0 / kPi);
  if (degree < 1) return;
  const double c1 = std::sqrt(3.0 / (4.0 * kPi));
  out[1] = c1 * y;
  out[2] = c1 * z;
  out[3] = c1 * x;
  if (degree < 2) return;
  const double xx = x * x, yy = y * y, zz = z * z;
  out[4] = 0.5 * std::sqrt(15.0 / kPi) * x * y;
  out[5] = 0.5 * std::sqrt(15.0 / kPi) * y * z;
  out[6] = 0.25 * std::sqrt(5.0 / kPi) * (3.0 * zz - 1.0);
  out[7] = 0.5 * std::sqrt(15.0 / kPi) * x * z;
  out[8] = 0.25 * std::sqrt(15.0 / kPi) * (xx - yy);
  if (degree < 3) return;
  out[9] = 0.25 * std::sqrt(35.0 / (2.0 * kPi)) * y * (3.0 * xx - yy);
  out[10] = 0.5 * std::sqrt(105.0 / kPi) * x * y * z;
  out[11] = 0.25 * std::sqrt(21.0 / (2.0 * kPi)) * y * (5.0 * zz - 1.0);
  out[12] = 0.25 * std::sqrt(7.0 / kPi) * z * (5.0 * zz - 3.0);
  out[13] = 0.25 * std::sqrt(21.0 / (2.0 * kPi)) * x * (5.0 * zz - 1.0);
  out[14] = 0.25 * std::sqrt(105.0 / kPi) * (xx - yy) * z;
  out[15] = 0.25 * std::sqrt(35.0 / (2.0 * kPi)) * x * (xx - 3.0 * yy);
  if (degree < 4) return;
  out[16] = 0.75 * std::sqrt(35.0 / kPi) * x * y * (xx - yy);
  out[17] = 0.75 * std::sqrt(35.0 / (2.0 * kPi)) * y * z * (3.0 * xx - yy);
  out[18] = 0.75 * std::sqrt(5.0 / kPi) * x * y * (7.0 * zz - 1.0);
  out[19] = 0.75 * std::sqrt(5.0 / (2.0 * kPi)) * y * z * (7.0 * zz - 3.0);
  out[20] = (3.0 / 16.0) * std::sqrt(1.0 / kPi) * (35.0 * zz * zz - 30.0 * zz + 3.0);
  out[21] = 0.75 * std::sqrt(5.0 / (2.0 * kPi)) * x * z * (7.0 * zz - 3.0);
  out[22] = (3.0 / 8.0) * std::sqrt(5.0 / kPi) * (xx - yy) * (7.0 * zz - 1.0);
  out[23] = 0.75 * std::sqrt(35.0 / (2.0 * kPi)) * x * z * (xx - 3.0 * yy);
  out[24] = (3.0 / 16.0) * std::sqrt(35.0 / kPi) * (xx * (xx - 3.0 * yy) - yy * (3.0 * xx - yy));
}

inline std::array<double, kMaxShCoeffs> sh_basis(const Vec3& dir, int degree) {
  std::array<double, kMaxShCoeffs> out{};
  eval_sh_basis(dir, degree, out);
  return out;
}

template <typename T>
T softplus(T x) {
  if (x > T(20)) return x;
  return std::log1p(std::exp(x));
}

template <typename T>
T sigmoid(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

template <typename T>
T decode_density(T raw, const ShadingConfig& cfg) {
  return softplus(raw + static_cast<T>(cfg.density_shift));
}

/// Color of one sample: rgb[kappa] = sigmoid(sum_k raw[kappa*K + k] * sh[k]).
template <typename T>
void decode_color(const T* raw_color, const T* sh, int coeffs, T* rgb) {
  for (int kappa = 0; kappa < 3; ++kappa) {
    const T* row = raw_color + kappa * coeffs;
    T acc = T(0);
    for (int k = 0; k < coeffs; ++k) acc += row[k] * sh[k];
    rgb[kappa] = sigmoid(acc);
  }
}

template <typename T>
struct Decoded {
  T sigma;
  std::array<T, 3> rgb;
};

template <typename T>
Decoded<T> decode(T raw_density, std::span<const T> raw_color, const Vec3& dir, const ShadingConfig& cfg) {
  cfg.validate();
  if (raw_color.size() != static_cast<std::size_t>(cfg.color_channels())) {
    throw Error("raw color length does not match the sh degree");
  }
  const auto basis = sh_basis(dir, cfg.sh_degree);
  std::array<T, kMaxShCoeffs> sh{};
  for (int k = 0; k < cfg.coeff_count(); ++k) sh[k] = static_cast<T>(basis[k]);
  Decoded<T> out{decode_density(raw_density, cfg), {}};
  decode_color(raw_color.data(), sh.data(), cfg.coeff_count(), out.rgb.data());
  return out;
}

}  // namespace ccfield
