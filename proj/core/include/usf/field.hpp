// Copyright Contributors to the usf project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>

#include "usf/diffmath.hpp"
#include "usf/encoding.hpp"
#include "usf/types.hpp"

namespace usf::field {

enum class EncodingKind { Hash, Freq };
enum class ColorVariant { C0, C1, C2, C3 };
enum class SemanticVariant { S0, S1 };

// Which feature feeds each uncertainty head:
//   c0 color-branch penultimate, c1 trunk (+) direction encoding, c2 trunk,
//   c3 raw positional encoding; s0 trunk, s1 semantic-branch penultimate.
const char* to_string(ColorVariant v);
const char* to_string(SemanticVariant v);
ColorVariant color_variant_from_string(const std::string& s);
SemanticVariant semantic_variant_from_string(const std::string& s);

struct FieldConfig {
  int hidden_dim = 64;
  int trunk_layers = 5;
  int semantic_layers = 2;
  int n_classes = 0;
  ColorVariant color_variant = ColorVariant::C0;
  SemanticVariant semantic_variant = SemanticVariant::S0;
  EncodingKind encoding = EncodingKind::Hash;
  enc::HashGridConfig hash;
  enc::FreqConfig freq;
  int freq_skip_layer = 4;  // input re-concatenated before this trunk layer (freq only)

  // hash: hidden 64, 5 trunk layers; freq: hidden 256, 8 layers, one skip.
  static FieldConfig defaults_for(EncodingKind kind, int n_classes);

  int encoded_dim() const {
    return encoding == EncodingKind::Hash ? hash.output_dim() : 6 * freq.k_pos;
  }
  int direction_dim() const { return enc::direction_dim(freq.k_dir); }
};

// One evaluation of the field at a 3D point: density, color, raw (pre
// variance activation) rgb uncertainty, semantic logit means, raw semantic
// uncertainty. Variance raws map through the floor activation downstream.
struct FieldSample {
  double sigma = 0.0;
  Vec3 color = Vec3::Zero();
  double rgb_var_raw = 0.0;
  Vec sem_means;
  double sem_var_raw = 0.0;
};

// Node handles for one batched forward pass.
struct FieldGraph {
  diff::VarId encoded = -1;      // positional encoding (n, L*F or 6*K)
  diff::VarId trunk_feat = -1;   // (n, hidden)
  diff::VarId sigma = -1;        // (n, 1), softplus-activated
  diff::VarId color = -1;        // (n, 3), sigmoid-activated
  diff::VarId color_penult = -1; // (n, hidden)
  diff::VarId rgb_var_raw = -1;  // (n, 1) or -1 when head disabled
  diff::VarId sem_means = -1;    // (n, n_classes)
  diff::VarId sem_penult = -1;   // (n, hidden)
  diff::VarId sem_var_raw = -1;  // (n, 1) or -1 when head disabled
};

// Deterministic parameter initialization: hash tables first (hash encoding),
// then affine layers with U(-a, a), a = sqrt(6 / (fan_in + fan_out)), zero
// biases. Throws std::invalid_argument for n_classes < 2.
diff::ParamStore init_field(const FieldConfig& cfg, std::uint64_t seed);

// Records the full network on `tape` for a batch of unit-cube points with
// per-point direction encodings. Uncertainty heads can be skipped so that
// their parameters stay out of the graph entirely.
FieldGraph build_field_graph(diff::Tape& tape, const FieldConfig& cfg, const Mat& points_unit,
                             const Mat& dir_encoded, bool want_rgb_var = true,
                             bool want_sem_var = true);

// Single-point evaluation (spec-level convenience; rendering uses batches).
FieldSample field_forward(const Vec3& p_unit, const Vec3& d, const diff::ParamStore& params,
                          const FieldConfig& cfg);

// Names of the variance-head parameter entries, used by the trainer to
// verify frozen heads under reduced uncertainty modes.
bool is_variance_head_param(const std::string& name);

}  // namespace usf::field
