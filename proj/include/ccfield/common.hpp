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
#include <cstddef>
#include <cstdlib>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace ccfield {

/// Every recoverable failure in the library is reported with this type.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;

/// Worker count from CCFIELD_THREADS, falling back to the core count.
inline int default_thread_count() {
  if (const char* env = std::getenv("CCFIELD_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) return n;
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

/// Splits [0, n) into `workers` contiguous chunks and runs
/// fn(worker, begin, end) on each. Chunk boundaries depend only on n and
/// the worker count, so per-worker reductions are reproducible.
template <typename Fn>
void parallel_for(int workers, std::size_t n, Fn&& fn) {
  workers = std::max(1, workers);
  if (workers == 1 || n < 2) {
    fn(0, std::size_t{0}, n);
    return;
  }
  const auto w = static_cast<std::size_t>(workers);
  std::vector<std::jthread> pool;
  pool.reserve(w - 1);
  for (std::size_t k = 1; k < w; ++k) {
    const std::size_t begin = n * k / w;
    const std::size_t end = n * (k + 1) / w;
    pool.emplace_back([&fn, k, begin, end] { fn(static_cast<int>(k), begin, end); });
  }
  fn(0, std::size_t{0}, n / w);
}

}  // namespace ccfield
