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

// Binary model files (.ccnf), all little-endian:
//
//   "CCNF"  u16 version
//   aabb              6 x f64 (min xyz, max xyz)
//   shading           u32 sh_degree, f64 density_shift
//   density, color    u32 C, H, W, D, u32 group count,
//                     32 x (u32 vec, u32 mat) group table, unused slots zero
//   occupancy         u32 res xyz (all zero: none), 6 x f64 box
//   payload           density then color tensors as f32 in the order
//                     S, Ux, Uy, Uz, Uxy, Uyz, Uxz; occupancy bits packed
//                     8 cells per byte, lowest bit first
//
// The header has a fixed size, so file size = kModelHeaderBytes +
// 4 * parameter count + ceil(occupancy cells / 8).
//
// Optimizer sidecars (.ccad): "CCAD", u16 version, i64 step, u64 count,
// then first and second moments as f32 in model tensor order.

#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "ccfield/common.hpp"
#include "ccfield/field.hpp"
#include "ccfield/renderer.hpp"
#include "ccfield/trainer.hpp"

namespace ccfield::io {

static_assert(std::endian::native == std::endian::little, "model files assume a little-endian host");

constexpr std::uint16_t kModelVersion = 1;
constexpr int kMaxGroups = 32;
constexpr std::uint64_t kFieldDescriptorBytes = 5 * 4 + kMaxGroups * 8;
constexpr std::uint64_t kModelHeaderBytes = 4 + 2 + 6 * 8 + (4 + 8) + 2 * kFieldDescriptorBytes + (3 * 4 + 6 * 8);

inline std::uint64_t occupancy_bytes(const OccupancyGrid& g) {
  return g.enabled() ? (static_cast<std::uint64_t>(g.res.cells()) + 7) / 8 : 0;
}

template <typename T>
std::uint64_t model_file_size(const FieldPair<T>& m) {
  return kModelHeaderBytes + 4 * static_cast<std::uint64_t>(m.density.parameter_count() + m.color.parameter_count()) +
         occupancy_bytes(m.occupancy);
}

namespace detail {

class Writer {
 public:
  std::vector<std::uint8_t> bytes;

  template <typename V>
  void put(V v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    bytes.insert(bytes.end(), p, p + sizeof(V));
  }
  void raw(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    bytes.insert(bytes.end(), p, p + n);
  }
};

class Reader {
 public:
  Reader(const std::vector<std::uint8_t>& b, std::string what) : bytes_(b), what_(std::move(what)) {}

  template <typename V>
  V get() {
    need(sizeof(V));
    V v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(V));
    pos_ += sizeof(V);
    return v;
  }
  void raw(void* dst, std::size_t n) {
    need(n);
    std::memcpy(dst, bytes_.data() + pos_, n);
    pos_ += n;
  }
  std::size_t pos() const { return pos_; }
  std::size_t size() const { return bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw Error(what_ + " is truncated (" + std::to_string(bytes_.size()) + " bytes)");
  }
  const std::vector<std::uint8_t>& bytes_;
  std::string what_;
  std::size_t pos_ = 0;
};

inline void put_box(Writer& w, const Aabb& b) {
  for (int a = 0; a < 3; ++a) w.put<double>(b.min[a]);
  for (int a = 0; a < 3; ++a) w.put<double>(b.max[a]);
}

inline Aabb get_box(Reader& r) {
  Aabb b;
  for (int a = 0; a < 3; ++a) b.min[a] = r.get<double>();
  for (int a = 0; a < 3; ++a) b.max[a] = r.get<double>();
  return b;
}

inline void put_descriptor(Writer& w, const DecomposedField<float>& f) {
  if (f.layout.group_count() > kMaxGroups) {
    throw Error("model files hold at most " + std::to_string(kMaxGroups) + " rank groups");
  }
  w.put<std::uint32_t>(static_cast<std::uint32_t>(f.channels));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(f.res.x));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(f.res.y));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(f.res.z));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(f.layout.group_count()));
  for (int g = 0; g < kMaxGroups; ++g) {
    const RankCounts c = g < f.layout.group_count() ? f.layout.groups()[g] : RankCounts{};
    w.put<std::uint32_t>(static_cast<std::uint32_t>(c.vec));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(c.mat));
  }
}

inline DecomposedField<float> get_descriptor(Reader& r, const char* which) {
  const auto c = r.get<std::uint32_t>();
  GridSize res;
  res.x = static_cast<int>(r.get<std::uint32_t>());
  res.y = static_cast<int>(r.get<std::uint32_t>());
  res.z = static_cast<int>(r.get<std::uint32_t>());
  const auto ng = r.get<std::uint32_t>();
  if (ng < 1 || ng > static_cast<std::uint32_t>(kMaxGroups)) {
    throw Error(std::string(which) + " field has an invalid group count " + std::to_string(ng));
  }
  std::vector<RankCounts> groups;
  for (int g = 0; g < kMaxGroups; ++g) {
    const auto v = r.get<std::uint32_t>();
    const auto m = r.get<std::uint32_t>();
    if (static_cast<std::uint32_t>(g) < ng) groups.push_back({static_cast<int>(v), static_cast<int>(m)});
  }
  constexpr std::uint32_t kSane = 1u << 16;
  if (c < 1 || c > kSane || res.x > static_cast<int>(kSane) || res.y > static_cast<int>(kSane) ||
      res.z > static_cast<int>(kSane)) {
    throw Error(std::string(which) + " field descriptor is out of range");
  }
  for (const auto& g : groups) {
    if (g.vec < 0 || g.mat < 0 || g.vec > static_cast<int>(kSane) || g.mat > static_cast<int>(kSane)) {
      throw Error(std::string(which) + " field group table is out of range");
    }
  }
  return DecomposedField<float>::zeros(static_cast<int>(c), res, RankLayout(std::move(groups)));
}

inline void put_tensors(Writer& w, const DecomposedField<float>& f) {
  for (const auto* t : f.tensors()) w.raw(t->data(), t->size() * sizeof(float));
}

inline void get_tensors(Reader& r, DecomposedField<float>& f) {
  for (auto* t : f.tensors()) r.raw(t->data(), t->size() * sizeof(float));
}

inline void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw Error("cannot open " + tmp.string() + " for writing");
    os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!os) throw Error("write failed: " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw Error("cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

inline void check_magic(Reader& r, const char* magic, std::uint16_t max_version, const std::string& what) {
  char m[4];
  r.raw(m, 4);
  if (std::memcmp(m, magic, 4) != 0) throw Error(what + " has a bad magic (expected " + magic + ")");
  const auto v = r.get<std::uint16_t>();
  if (v == 0 || v > max_version) {
    throw Error(what + " has unsupported version " + std::to_string(v) + " (this build reads up to " +
                std::to_string(max_version) + ")");
  }
}

}  // namespace detail

inline std::vector<std::uint8_t> serialize_model(const FieldPair<float>& m) {
  m.validate();
  detail::Writer w;
  w.raw("CCNF", 4);
  w.put<std::uint16_t>(kModelVersion);
  detail::put_box(w, m.aabb);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(m.shading.sh_degree));
  w.put<double>(m.shading.density_shift);
  detail::put_descriptor(w, m.density);
  detail::put_descriptor(w, m.color);
  const OccupancyGrid& occ = m.occupancy;
  w.put<std::uint32_t>(static_cast<std::uint32_t>(occ.res.x));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(occ.res.y));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(occ.res.z));
  detail::put_box(w, occ.enabled() ? occ.box : Aabb{Vec3::Zero(), Vec3::Zero()});
  detail::put_tensors(w, m.density);
  detail::put_tensors(w, m.color);
  std::vector<std::uint8_t> bits(occupancy_bytes(occ), 0);
  for (std::size_t i = 0; i < occ.cells.size(); ++i) {
    if (occ.cells[i]) bits[i / 8] |= static_cast<std::uint8_t>(1u << (i % 8));
  }
  w.raw(bits.data(), bits.size());
  return std::move(w.bytes);
}

inline FieldPair<float> deserialize_model(const std::vector<std::uint8_t>& bytes, const std::string& what = "model") {
  detail::Reader r(bytes, what);
  detail::check_magic(r, "CCNF", kModelVersion, what);
  FieldPair<float> m;
  m.aabb = detail::get_box(r);
  m.shading.sh_degree = static_cast<int>(r.get<std::uint32_t>());
  m.shading.density_shift = r.get<double>();
  m.shading.validate();
  m.density = detail::get_descriptor(r, "density");
  m.color = detail::get_descriptor(r, "color");
  GridSize ores;
  ores.x = static_cast<int>(r.get<std::uint32_t>());
  ores.y = static_cast<int>(r.get<std::uint32_t>());
  ores.z = static_cast<int>(r.get<std::uint32_t>());
  const Aabb obox = detail::get_box(r);
  if (ores.cells() > 0) {
    m.occupancy.res = ores;
    m.occupancy.box = obox;
  }
  const std::uint64_t expect = model_file_size(m);
  if (bytes.size() != expect) {
    throw Error(what + " has " + std::to_string(bytes.size()) + " bytes but its header describes " +
                std::to_string(expect) + (bytes.size() < expect ? " (truncated)" : ""));
  }
  detail::get_tensors(r, m.density);
  detail::get_tensors(r, m.color);
  if (m.occupancy.enabled()) {
    std::vector<std::uint8_t> bits(occupancy_bytes(m.occupancy));
    r.raw(bits.data(), bits.size());
    m.occupancy.cells.resize(static_cast<std::size_t>(ores.cells()));
    for (std::size_t i = 0; i < m.occupancy.cells.size(); ++i) m.occupancy.cells[i] = (bits[i / 8] >> (i % 8)) & 1u;
  }
  m.validate();
  return m;
}

inline void save_model(const std::filesystem::path& path, const FieldPair<float>& m) {
  detail::write_file(path, serialize_model(m));
}

inline FieldPair<float> load_model(const std::filesystem::path& path) {
  return deserialize_model(detail::read_file(path), path.string());
}

inline void save_optimizer(const std::filesystem::path& path, const OptimizerState<float>& st) {
  detail::Writer w;
  w.raw("CCAD", 4);
  w.put<std::uint16_t>(1);
  w.put<std::int64_t>(st.step);
  const std::uint64_t count = st.m.density.parameter_count() + st.m.color.parameter_count();
  w.put<std::uint64_t>(count);
  for (const ModelGrads<float>* g : {&st.m, &st.v}) {
    detail::put_tensors(w, g->density);
    detail::put_tensors(w, g->color);
  }
  detail::write_file(path, w.bytes);
}

/// Loads moments shaped like `model`.
inline OptimizerState<float> load_optimizer(const std::filesystem::path& path, const FieldPair<float>& model) {
  const auto bytes = detail::read_file(path);
  detail::Reader r(bytes, path.string());
  detail::check_magic(r, "CCAD", 1, path.string());
  OptimizerState<float> st = OptimizerState<float>::for_model(model);
  st.step = r.get<std::int64_t>();
  const auto count = r.get<std::uint64_t>();
  if (count != model.density.parameter_count() + model.color.parameter_count()) {
    throw Error(path.string() + " does not match the model's parameter count");
  }
  for (ModelGrads<float>* g : {&st.m, &st.v}) {
    detail::get_tensors(r, g->density);
    detail::get_tensors(r, g->color);
  }
  if (r.pos() != r.size()) throw Error(path.string() + " has trailing bytes");
  return st;
}

}  // namespace ccfield::io
