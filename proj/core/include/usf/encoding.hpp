// Copyright Contributors to the usf project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "usf/diffmath.hpp"
#include "usf/types.hpp"

namespace usf::enc {

// Multiresolution hash grid over the unit cube. Per-level feature tables are
// ParamStore entries of shape [table_size, features_per_level]; levels whose
// dense corner count fits the table are indexed densely (collision free),
// the rest through a spatial hash.
struct HashGridConfig {
  int levels = 8;
  int features_per_level = 2;
  int table_size = 1 << 14;  // power of two
  int base_resolution = 16;
  int max_resolution = 256;

  int output_dim() const { return levels * features_per_level; }
  // R_l = floor(N_min * b^l), b = exp((ln N_max - ln N_min) / (L - 1)).
  int level_resolution(int level) const;
  std::string table_name(int level) const { return "enc.level" + std::to_string(level); }
};

struct FreqConfig {
  int k_pos = 10;
  int k_dir = 4;
};

// Index of a grid corner cell within a level's table. Dense when the level's
// corner lattice fits the table, otherwise the Instant-NGP style spatial
// hash with fixed primes (1, 2654435761, 805459861), unsigned 64-bit wrap.
std::int64_t hash_index(const std::array<int, 3>& cell, int level, const HashGridConfig& cfg);

// Trilinear hash-grid features of a point in the unit cube (pure lookup).
Vec hash_encode_point(const Vec3& p_unit, const HashGridConfig& cfg, const diff::ParamStore& params);

// Batched taped encoding: rows of `points_unit` are clamped unit-cube
// positions. Gradients flow only to the touched table rows (<= 8 per level
// per point).
diff::VarId hash_encode(diff::Tape& tape, const Mat& points_unit, const HashGridConfig& cfg);

// (sin(2^k pi v_i), cos(2^k pi v_i)) for k in [0, K), concatenated per
// component; output length 2*K*len(v).
Vec freq_encode(const Vec& v, int k_bands);

// Direction features: freq_encode(d, k_dir) followed by the raw components.
// Non-normalized directions are normalized (warning emitted once).
Vec encode_direction(const Vec3& d, int k_dir);

inline int direction_dim(int k_dir) { return 6 * k_dir + 3; }

// Registers the per-level tables in `params`, initialized U(-1e-4, 1e-4).
void init_hash_tables(diff::ParamStore& params, const HashGridConfig& cfg, std::uint64_t seed);

}  // namespace usf::enc
