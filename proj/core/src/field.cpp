// Copyright Contributors to the usf project
// SPDX-License-Identifier: Apache-2.0

#include "usf/field.hpp"

#include <cmath>
#include <stdexcept>

#include "usf/rng.hpp"

namespace usf::field {

const char* to_string(ColorVariant v) {
  switch (v) {
    case ColorVariant::C0: return "c0";
    case ColorVariant::C1: return "c1";
    case ColorVariant::C2: return "c2";
    case ColorVariant::C3: return "c3";
  }
  return "?";
}

const char* to_string(SemanticVariant v) {
  return v == SemanticVariant::S0 ? "s0" : "s1";
}

ColorVariant color_variant_from_string(const std::string& s) {
  if (s == "c0") return ColorVariant::C0;
  if (s == "c1") return ColorVariant::C1;
  if (s == "c2") return ColorVariant::C2;
  if (s == "c3") return ColorVariant::C3;
  throw std::invalid_argument("unknown color variant: " + s);
}

SemanticVariant semantic_variant_from_string(const std::string& s) {
  if (s == "s0") return SemanticVariant::S0;
  if (s == "s1") return SemanticVariant::S1;
  throw std::invalid_argument("unknown semantic variant: " + s);
}

FieldConfig FieldConfig::defaults_for(EncodingKind kind, int n_classes) {
  FieldConfig cfg;
  cfg.encoding = kind;
  cfg.n_classes = n_classes;
  if (kind == EncodingKind::Freq) {
    cfg.hidden_dim = 256;
    cfg.trunk_layers = 8;
  }
  return cfg;
}

namespace {

void add_affine(diff::ParamStore& ps, Rng& rng, const std::string& name, int out, int in) {
  int w = ps.add(name + ".w", {out, in});
  double a = std::sqrt(6.0 / (in + out));
  for (double& v : ps.values(w)) v = rng.uniform(-a, a);
  ps.add(name + ".b", {out});  // zero-initialized
}

struct LayerDims {
  int trunk_in(const FieldConfig& cfg, int layer) const {
    if (layer == 0) return cfg.encoded_dim();
    if (cfg.encoding == EncodingKind::Freq && layer == cfg.freq_skip_layer)
      return cfg.hidden_dim + cfg.encoded_dim();
    return cfg.hidden_dim;
  }
  int variance_in(const FieldConfig& cfg, ColorVariant v) const {
    switch (v) {
      case ColorVariant::C0: return cfg.hidden_dim;
      case ColorVariant::C1: return cfg.hidden_dim + cfg.direction_dim();
      case ColorVariant::C2: return cfg.hidden_dim;
      case ColorVariant::C3: return cfg.encoded_dim();
    }
    return 0;
  }
};

}  // namespace

diff::ParamStore init_field(const FieldConfig& cfg, std::uint64_t seed) {
  if (cfg.n_classes < 2) throw std::invalid_argument("init_field: n_classes must be >= 2");
  if (cfg.trunk_layers < 1 || cfg.semantic_layers < 1)
    throw std::invalid_argument("init_field: layer counts must be positive");

  diff::ParamStore ps;
  Rng rng(seed);
  if (cfg.encoding == EncodingKind::Hash)
    enc::init_hash_tables(ps, cfg.hash, rng.next_u64());

  LayerDims dims;
  for (int l = 0; l < cfg.trunk_layers; ++l)
    add_affine(ps, rng, "trunk." + std::to_string(l), cfg.hidden_dim, dims.trunk_in(cfg, l));
  add_affine(ps, rng, "density", 1, cfg.hidden_dim);

  add_affine(ps, rng, "color.0", cfg.hidden_dim, cfg.hidden_dim + cfg.direction_dim());
  add_affine(ps, rng, "color.out", 3, cfg.hidden_dim);
  add_affine(ps, rng, "rgbvar", 1, dims.variance_in(cfg, cfg.color_variant));

  for (int l = 0; l + 1 < cfg.semantic_layers; ++l)
    add_affine(ps, rng, "sem." + std::to_string(l), cfg.hidden_dim, cfg.hidden_dim);
  add_affine(ps, rng, "sem.out", cfg.n_classes, cfg.hidden_dim);
  // Both semantic taps (trunk feature, semantic penultimate) are hidden_dim wide.
  add_affine(ps, rng, "semvar", 1, cfg.hidden_dim);
  return ps;
}

bool is_variance_head_param(const std::string& name) {
  return name.rfind("rgbvar.", 0) == 0 || name.rfind("semvar.", 0) == 0;
}

FieldGraph build_field_graph(diff::Tape& tape, const FieldConfig& cfg, const Mat& points_unit,
                             const Mat& dir_encoded, bool want_rgb_var, bool want_sem_var) {
  if (points_unit.rows() != dir_encoded.rows())
    throw std::invalid_argument("field graph: points/directions row mismatch");
  if (dir_encoded.cols() != cfg.direction_dim())
    throw std::invalid_argument("field graph: direction encoding width mismatch");

  const auto& ps = tape.params();
  auto wid = [&](const std::string& n) { return ps.require(n + ".w"); };
  auto bid = [&](const std::string& n) { return ps.require(n + ".b"); };
  auto affine_relu = [&](diff::VarId x, const std::string& n) {
    return tape.affine(x, wid(n), bid(n), diff::Activation::Relu);
  };

  FieldGraph g;
  if (cfg.encoding == EncodingKind::Hash) {
    g.encoded = enc::hash_encode(tape, points_unit, cfg.hash);
  } else {
    Mat e(points_unit.rows(), cfg.encoded_dim());
    for (Eigen::Index i = 0; i < points_unit.rows(); ++i)
      e.row(i) = enc::freq_encode(points_unit.row(i).transpose(), cfg.freq.k_pos).transpose();
    g.encoded = tape.constant(std::move(e));
  }

  diff::VarId h = g.encoded;
  for (int l = 0; l < cfg.trunk_layers; ++l) {
    if (cfg.encoding == EncodingKind::Freq && l == cfg.freq_skip_layer && l > 0)
      h = tape.concat_cols(h, g.encoded);
    h = affine_relu(h, "trunk." + std::to_string(l));
  }
  g.trunk_feat = h;
  g.sigma = tape.softplus(tape.affine(h, wid("density"), bid("density")));

  diff::VarId dirs = tape.constant(dir_encoded);
  diff::VarId color_in = tape.concat_cols(h, dirs);
  g.color_penult = affine_relu(color_in, "color.0");
  g.color = tape.sigmoid(tape.affine(g.color_penult, wid("color.out"), bid("color.out")));

  if (want_rgb_var) {
    diff::VarId tap = -1;
    switch (cfg.color_variant) {
      case ColorVariant::C0: tap = g.color_penult; break;
      case ColorVariant::C1: tap = color_in; break;
      case ColorVariant::C2: tap = g.trunk_feat; break;
      case ColorVariant::C3: tap = g.encoded; break;
    }
    g.rgb_var_raw = tape.affine(tap, wid("rgbvar"), bid("rgbvar"));
  }

  diff::VarId s = h;
  for (int l = 0; l + 1 < cfg.semantic_layers; ++l) s = affine_relu(s, "sem." + std::to_string(l));
  g.sem_penult = s;
  g.sem_means = tape.affine(s, wid("sem.out"), bid("sem.out"));

  if (want_sem_var) {
    diff::VarId tap = cfg.semantic_variant == SemanticVariant::S0 ? g.trunk_feat : g.sem_penult;
    g.sem_var_raw = tape.affine(tap, wid("semvar"), bid("semvar"));
  }
  return g;
}

FieldSample field_forward(const Vec3& p_unit, const Vec3& d, const diff::ParamStore& params,
                          const FieldConfig& cfg) {
  diff::Tape tape(params);
  Mat p(1, 3);
  p.row(0) = p_unit.transpose().cwiseMax(0.0).cwiseMin(1.0);
  Mat dir(1, cfg.direction_dim());
  dir.row(0) = enc::encode_direction(d, cfg.freq.k_dir).transpose();
  FieldGraph g = build_field_graph(tape, cfg, p, dir);

  FieldSample s;
  s.sigma = tape.value(g.sigma)(0, 0);
  s.color = tape.value(g.color).row(0).transpose();
  s.rgb_var_raw = tape.value(g.rgb_var_raw)(0, 0);
  s.sem_means = tape.value(g.sem_means).row(0).transpose();
  s.sem_var_raw = tape.value(g.sem_var_raw)(0, 0);
  return s;
}

}  // namespace usf::field
