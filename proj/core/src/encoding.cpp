// Copyright Contributors to the usf project
// SPDX-License-Identifier: Apache-2.0

#include "usf/encoding.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "usf/rng.hpp"

namespace usf::enc {

namespace {
constexpr std::uint64_t kPrimeY = 2654435761ULL;
constexpr std::uint64_t kPrimeZ = 805459861ULL;
}  // namespace

int HashGridConfig::level_resolution(int level) const {
  if (levels == 1) return base_resolution;
  double b = std::exp((std::log(double(max_resolution)) - std::log(double(base_resolution))) /
                      double(levels - 1));
  return static_cast<int>(std::floor(base_resolution * std::pow(b, level)));
}

std::int64_t hash_index(const std::array<int, 3>& cell, int level, const HashGridConfig& cfg) {
  int r = cfg.level_resolution(level);
  for (int a = 0; a < 3; ++a) {
    if (cell[a] < 0 || cell[a] > r)
      throw std::logic_error("hash_index: corner out of level range");
  }
  std::int64_t side = static_cast<std::int64_t>(r) + 1;
  if (side * side * side <= cfg.table_size) {
    return cell[0] + cell[1] * side + cell[2] * side * side;
  }
  std::uint64_t h = static_cast<std::uint64_t>(cell[0]) * 1ULL ^
                    static_cast<std::uint64_t>(cell[1]) * kPrimeY ^
                    static_cast<std::uint64_t>(cell[2]) * kPrimeZ;
  return static_cast<std::int64_t>(h % static_cast<std::uint64_t>(cfg.table_size));
}

namespace {

struct CornerRef {
  std::int32_t index;
  double weight;
};

// Shared by the pure and taped paths: the 8 (index, weight) pairs of the
// voxel containing p at one level.
void level_corners(const Vec3& p, int level, const HashGridConfig& cfg, CornerRef out[8]) {
  int r = cfg.level_resolution(level);
  double fx = p[0] * r, fy = p[1] * r, fz = p[2] * r;
  int cx = std::min(static_cast<int>(fx), r - 1);
  int cy = std::min(static_cast<int>(fy), r - 1);
  int cz = std::min(static_cast<int>(fz), r - 1);
  double tx = fx - cx, ty = fy - cy, tz = fz - cz;
  int k = 0;
  for (int dz = 0; dz < 2; ++dz)
    for (int dy = 0; dy < 2; ++dy)
      for (int dx = 0; dx < 2; ++dx) {
        double w = (dx ? tx : 1.0 - tx) * (dy ? ty : 1.0 - ty) * (dz ? tz : 1.0 - tz);
        std::array<int, 3> cell{cx + dx, cy + dy, cz + dz};
        out[k].index = static_cast<std::int32_t>(hash_index(cell, level, cfg));
        out[k].weight = w;
        ++k;
      }
}

struct HashEncodeOp final : diff::TapeOp {
  HashGridConfig cfg;
  std::vector<int> table_entries;          // per level
  std::vector<CornerRef> corners;          // n * levels * 8
  explicit HashEncodeOp(HashGridConfig c) : cfg(std::move(c)) {}

  void backward(diff::Tape& t, diff::VarId self) override {
    const Mat& g = t.adjoint(self);
    int f = cfg.features_per_level;
    Eigen::Index n = g.rows();
    for (int l = 0; l < cfg.levels; ++l) {
      auto gt = t.sink_grads(table_entries[static_cast<size_t>(l)]);
      int col0 = l * f;
      for (Eigen::Index i = 0; i < n; ++i) {
        const CornerRef* cr = &corners[static_cast<size_t>((i * cfg.levels + l) * 8)];
        for (int k = 0; k < 8; ++k) {
          double* row = gt.data() + static_cast<std::size_t>(cr[k].index) * f;
          for (int c = 0; c < f; ++c) row[c] += cr[k].weight * g(i, col0 + c);
        }
      }
    }
  }
};

}  // namespace

Vec hash_encode_point(const Vec3& p_unit, const HashGridConfig& cfg, const diff::ParamStore& params) {
  Vec3 p = p_unit.cwiseMax(0.0).cwiseMin(1.0);
  int f = cfg.features_per_level;
  Vec out = Vec::Zero(cfg.output_dim());
  CornerRef corners[8];
  for (int l = 0; l < cfg.levels; ++l) {
    auto table = params.values(params.require(cfg.table_name(l)));
    level_corners(p, l, cfg, corners);
    for (int k = 0; k < 8; ++k) {
      const double* row = table.data() + static_cast<std::size_t>(corners[k].index) * f;
      for (int c = 0; c < f; ++c) out[l * f + c] += corners[k].weight * row[c];
    }
  }
  return out;
}

diff::VarId hash_encode(diff::Tape& tape, const Mat& points_unit, const HashGridConfig& cfg) {
  if (points_unit.cols() != 3) throw std::invalid_argument("hash_encode: points must be (n, 3)");
  Eigen::Index n = points_unit.rows();
  int f = cfg.features_per_level;
  auto op = std::make_unique<HashEncodeOp>(cfg);
  op->table_entries.resize(static_cast<size_t>(cfg.levels));
  for (int l = 0; l < cfg.levels; ++l)
    op->table_entries[static_cast<size_t>(l)] = tape.params().require(cfg.table_name(l));
  op->corners.resize(static_cast<size_t>(n) * cfg.levels * 8);

  Mat out = Mat::Zero(n, cfg.output_dim());
  for (Eigen::Index i = 0; i < n; ++i) {
    Vec3 p = points_unit.row(i).transpose().cwiseMax(0.0).cwiseMin(1.0);
    for (int l = 0; l < cfg.levels; ++l) {
      auto table = tape.params().values(op->table_entries[static_cast<size_t>(l)]);
      CornerRef* cr = &op->corners[static_cast<size_t>((i * cfg.levels + l) * 8)];
      level_corners(p, l, cfg, cr);
      for (int k = 0; k < 8; ++k) {
        const double* row = table.data() + static_cast<std::size_t>(cr[k].index) * f;
        for (int c = 0; c < f; ++c) out(i, l * f + c) += cr[k].weight * row[c];
      }
    }
  }
  return tape.custom(std::move(op), std::move(out), {});
}

Vec freq_encode(const Vec& v, int k_bands) {
  Vec out(2 * k_bands * v.size());
  Eigen::Index j = 0;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    double base = M_PI * v[i];
    for (int k = 0; k < k_bands; ++k) {
      double a = std::ldexp(base, k);  // 2^k * pi * v_i
      out[j++] = std::sin(a);
      out[j++] = std::cos(a);
    }
  }
  return out;
}

Vec encode_direction(const Vec3& d, int k_dir) {
  Vec3 dn = d;
  double norm = d.norm();
  if (std::abs(norm - 1.0) > 1e-6) {
    static std::atomic<bool> warned{false};
    if (!warned.exchange(true))
      std::fprintf(stderr, "usf: encode_direction received a non-unit direction; normalizing\n");
    if (norm == 0.0) throw std::invalid_argument("encode_direction: zero direction");
    dn /= norm;
  }
  Vec freq = freq_encode(dn, k_dir);
  Vec out(freq.size() + 3);
  out << freq, dn;
  return out;
}

void init_hash_tables(diff::ParamStore& params, const HashGridConfig& cfg, std::uint64_t seed) {
  if (cfg.levels <= 0 || cfg.features_per_level <= 0 || cfg.table_size <= 0)
    throw std::invalid_argument("hash grid config: non-positive sizes");
  if ((cfg.table_size & (cfg.table_size - 1)) != 0)
    throw std::invalid_argument("hash grid config: table_size must be a power of two");
  if (cfg.max_resolution < cfg.base_resolution)
    throw std::invalid_argument("hash grid config: max_resolution < base_resolution");
  Rng rng(seed);
  for (int l = 0; l < cfg.levels; ++l) {
    int id = params.add(cfg.table_name(l), {cfg.table_size, cfg.features_per_level});
    for (double& v : params.values(id)) v = rng.uniform(-1e-4, 1e-4);
  }
}

}  // namespace usf::enc
