// Copyright Contributors to the usf project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <optional>
#include <span>
#include <vector>

#include "usf/field.hpp"
#include "usf/rng.hpp"
#include "usf/types.hpp"

namespace usf::render {

struct Camera {
  int width = 0;
  int height = 0;
  double fx = 0, fy = 0, cx = 0, cy = 0;
  Mat4 pose = Mat4::Identity();  // camera-to-world, right-handed, looks along -z

  Camera scaled(int factor) const;  // integer downscale of resolution + intrinsics
};

struct Ray {
  Vec3 origin = Vec3::Zero();
  Vec3 dir = Vec3::UnitZ();
  double t_near = 0.0;
  double t_far = 0.0;
};

// How per-sample variances combine along a ray. Squared treats the samples
// as independent Gaussians under the quadrature weights; Linear composites
// them like colors. Both keep the beta0^2 floor on empty rays.
enum class VarianceRule { Squared, Linear };

struct RenderedPixel {
  Vec3 color = Vec3::Zero();
  Vec sem_probs;
  Vec sem_logit_means;
  double rgb_uncertainty = 0.0;
  double sem_uncertainty = 0.0;
  double opacity = 0.0;
};

// Ray through pixel (px + jitter), jitter in [0,1)^2; (0.5, 0.5) is the
// pixel center. Direction is unit length in world coordinates.
Ray generate_ray(const Camera& cam, double px, double py, const Vec2& jitter);

// Intersection interval of a ray with `bbox` clipped to positive t. Returns
// nullopt when the ray misses. t_near is floored at `t_min`.
std::optional<std::pair<double, double>> ray_aabb_interval(const Vec3& origin, const Vec3& dir,
                                                           const Aabb& bbox, double t_min = 1e-4);

// One uniform draw per equal bin of [t_near, t_far], strictly ascending;
// bin midpoints when rng is null (eval mode).
std::vector<double> stratified_sample(const Ray& ray, int n_samples, Rng* rng);

// Volume-rendering quadrature weights: alpha_j = 1 - exp(-sigma_j delta_j),
// w_j = T_j alpha_j with the running transmittance T_j. Shared by the pure
// compositor, the taped compositor and tests.
void composite_weights(std::span<const double> sigma, std::span<const double> ts, double t_far,
                       std::span<double> alpha_out, std::span<double> weight_out);

// Composites per-sample field outputs into a pixel. Raw variances are mapped
// through the beta0 floor activation before accumulation; semantic class
// probabilities come from the Monte-Carlo softmax estimate with `n_mc` draws
// from `mc_rng`. Per-sample weights are exposed for the loss regularizer.
RenderedPixel composite(std::span<const field::FieldSample> samples, std::span<const double> ts,
                        double t_far, double beta0, VarianceRule rule, int n_mc, Rng& mc_rng,
                        std::vector<double>* out_weights = nullptr);

struct RenderContext {
  field::FieldConfig field;
  Aabb bbox;
  double beta0 = 0.01;
  int n_samples = 64;
  int n_mc = 10;
  VarianceRule variance_rule = VarianceRule::Squared;
  std::uint64_t eval_seed = 0x5eedULL;  // fixes the per-pixel MC draws
};

struct RenderResult {
  Image rgb;             // 3 channels
  LabelImage labels;     // argmax of sem_probs
  Image rgb_uncertainty; // 1 channel, composited beta^2_rgb
  Image sem_uncertainty; // 1 channel, composited beta^2_sem
  Image opacity;         // 1 channel
};

// Deterministic full-frame render (eval mode: center rays, midpoint samples,
// fixed MC seed). Parallel over row chunks; output independent of worker
// count.
RenderResult render_image(const Camera& cam, const diff::ParamStore& params,
                          const RenderContext& ctx);

}  // namespace usf::render
