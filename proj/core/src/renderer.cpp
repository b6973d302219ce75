// Copyright Contributors to the usf project
// SPDX-License-Identifier: Apache-2.0

#include "usf/renderer.hpp"

#include <cmath>
#include <stdexcept>

#include "usf/losses.hpp"
#include "usf/parallel.hpp"

namespace usf::render {

Camera Camera::scaled(int factor) const {
  if (factor <= 0) throw std::invalid_argument("Camera::scaled: factor must be positive");
  Camera c = *this;
  c.width = width / factor;
  c.height = height / factor;
  c.fx = fx / factor;
  c.fy = fy / factor;
  c.cx = cx / factor;
  c.cy = cy / factor;
  return c;
}

Ray generate_ray(const Camera& cam, double px, double py, const Vec2& jitter) {
  Vec3 dir_cam((px + jitter.x() - cam.cx) / cam.fx, -(py + jitter.y() - cam.cy) / cam.fy, -1.0);
  Mat3 rot = cam.pose.topLeftCorner<3, 3>();
  Ray r;
  r.origin = cam.pose.topRightCorner<3, 1>();
  r.dir = (rot * dir_cam).normalized();
  return r;
}

std::optional<std::pair<double, double>> ray_aabb_interval(const Vec3& origin, const Vec3& dir,
                                                           const Aabb& bbox, double t_min) {
  double t0 = -std::numeric_limits<double>::infinity();
  double t1 = std::numeric_limits<double>::infinity();
  for (int a = 0; a < 3; ++a) {
    if (dir[a] == 0.0) {
      if (origin[a] < bbox.min[a] || origin[a] > bbox.max[a]) return std::nullopt;
      continue;
    }
    double inv = 1.0 / dir[a];
    double ta = (bbox.min[a] - origin[a]) * inv;
    double tb = (bbox.max[a] - origin[a]) * inv;
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
  }
  t0 = std::max(t0, t_min);
  if (t1 <= t0) return std::nullopt;
  return std::make_pair(t0, t1);
}

std::vector<double> stratified_sample(const Ray& ray, int n_samples, Rng* rng) {
  if (n_samples < 2) throw std::invalid_argument("stratified_sample: need at least 2 samples");
  std::vector<double> ts(static_cast<size_t>(n_samples));
  double span = (ray.t_far - ray.t_near) / n_samples;
  for (int j = 0; j < n_samples; ++j) {
    double u = rng ? rng->uniform() : 0.5;
    ts[static_cast<size_t>(j)] = ray.t_near + (j + u) * span;
  }
  return ts;
}

void composite_weights(std::span<const double> sigma, std::span<const double> ts, double t_far,
                       std::span<double> alpha_out, std::span<double> weight_out) {
  size_t n = sigma.size();
  if (ts.size() != n || alpha_out.size() != n || weight_out.size() != n)
    throw std::invalid_argument("composite_weights: length mismatch");
  double transmittance = 1.0;
  for (size_t j = 0; j < n; ++j) {
    double delta = (j + 1 < n ? ts[j + 1] : t_far) - ts[j];
    double a = 1.0 - std::exp(-sigma[j] * delta);
    alpha_out[j] = a;
    weight_out[j] = transmittance * a;
    transmittance *= 1.0 - a;
  }
}

namespace {

// Composited per-ray accumulators over already-activated variances.
struct RayAccum {
  Vec3 color = Vec3::Zero();
  Vec sem;
  double b2rgb = 0, b2sem = 0, opacity = 0;
  bool clamped_rgb = false, clamped_sem = false;
};

template <typename ColorRow, typename SemRow>
RayAccum accumulate_ray(std::span<const double> sigma, std::span<const double> ts, double t_far,
                        double beta0, VarianceRule rule, const ColorRow& color_row,
                        const SemRow& sem_row, std::span<const double> b2rgb_act,
                        std::span<const double> b2sem_act, int n_classes,
                        std::span<double> alpha_scratch, std::span<double> weight_scratch) {
  composite_weights(sigma, ts, t_far, alpha_scratch, weight_scratch);
  RayAccum acc;
  acc.sem = Vec::Zero(n_classes);
  double floor = beta0 * beta0;
  size_t n = sigma.size();
  for (size_t j = 0; j < n; ++j) {
    double w = weight_scratch[j];
    acc.color += w * color_row(j);
    acc.sem += w * sem_row(j);
    acc.opacity += w;
    if (rule == VarianceRule::Squared) {
      acc.b2rgb += w * w * b2rgb_act[j];
      acc.b2sem += w * w * b2sem_act[j];
    } else {
      acc.b2rgb += w * b2rgb_act[j];
      acc.b2sem += w * b2sem_act[j];
    }
  }
  double rest = 1.0 - acc.opacity;
  if (rule == VarianceRule::Squared) {
    acc.b2rgb += floor * rest * rest;
    acc.b2sem += floor * rest * rest;
  } else {
    acc.b2rgb += floor * rest;
    acc.b2sem += floor * rest;
  }
  // The quadrature can dip below the per-sample floor (squared weights sum
  // below one); the floor invariant is enforced at the ray level.
  if (acc.b2rgb < floor) {
    acc.b2rgb = floor;
    acc.clamped_rgb = true;
  }
  if (acc.b2sem < floor) {
    acc.b2sem = floor;
    acc.clamped_sem = true;
  }
  return acc;
}

}  // namespace

RenderedPixel composite(std::span<const field::FieldSample> samples, std::span<const double> ts,
                        double t_far, double beta0, VarianceRule rule, int n_mc, Rng& mc_rng,
                        std::vector<double>* out_weights) {
  size_t n = samples.size();
  if (n == 0) throw std::invalid_argument("composite: empty sample list");
  if (ts.size() != n) throw std::invalid_argument("composite: t list length mismatch");
  int n_classes = static_cast<int>(samples[0].sem_means.size());

  std::vector<double> sigma(n), b2rgb(n), b2sem(n), alpha(n), weight(n);
  for (size_t j = 0; j < n; ++j) {
    sigma[j] = samples[j].sigma;
    b2rgb[j] = diff::shifted_softplus_value(samples[j].rgb_var_raw, beta0);
    b2sem[j] = diff::shifted_softplus_value(samples[j].sem_var_raw, beta0);
  }
  RayAccum acc = accumulate_ray(
      sigma, ts, t_far, beta0, rule, [&](size_t j) { return samples[j].color; },
      [&](size_t j) { return samples[j].sem_means; }, b2rgb, b2sem, n_classes, alpha, weight);

  RenderedPixel px;
  px.color = acc.color;
  px.sem_logit_means = acc.sem;
  px.rgb_uncertainty = acc.b2rgb;
  px.sem_uncertainty = acc.b2sem;
  px.opacity = acc.opacity;
  px.sem_probs = loss::approx_class_probs(acc.sem, std::sqrt(acc.b2sem), n_mc, mc_rng);
  if (out_weights) *out_weights = weight;
  return px;
}

// ---------------------------------------------------------------------------
// Taped compositor
// ---------------------------------------------------------------------------

namespace {

struct CompositeOp final : diff::TapeOp {
  diff::VarId sigma, color, sem, b2rgb, b2sem;
  int rays = 0, samples = 0, classes = 0;
  double beta0 = 0.0;
  VarianceRule rule = VarianceRule::Squared;
  Mat deltas;        // (R, S)
  Mat weights;       // (R, S)
  Mat trans_next;    // (R, S): T_j * (1 - alpha_j)
  std::vector<bool> clamped_rgb, clamped_sem;

  void backward(diff::Tape& t, diff::VarId self) override {
    const Mat& g = t.adjoint(self);
    const Mat& colors = t.value(color);
    const Mat& sems = t.value(sem);
    const Mat& vrgb = t.value(b2rgb);
    const Mat& vsem = t.value(b2sem);
    Mat& d_sigma = t.adjoint(sigma);
    Mat& d_color = t.adjoint(color);
    Mat& d_sem = t.adjoint(sem);
    Mat& d_vrgb = t.adjoint(b2rgb);
    Mat& d_vsem = t.adjoint(b2sem);

    double floor = beta0 * beta0;
    int oc = 3 + classes;  // column offsets: [color | sem | b2rgb | b2sem | opacity]
    for (int i = 0; i < rays; ++i) {
      Eigen::Vector3d g_color = g.block(i, 0, 1, 3).transpose();
      Vec g_sem = g.block(i, 3, 1, classes).transpose();
      double g_vrgb = clamped_rgb[static_cast<size_t>(i)] ? 0.0 : g(i, oc);
      double g_vsem = clamped_sem[static_cast<size_t>(i)] ? 0.0 : g(i, oc + 1);
      double g_op = g(i, oc + 2);

      double w_sum = weights.row(i).sum();
      double rest = 1.0 - w_sum;
      // d b2 / dw_j carries the -2*floor*(1-W) (squared) or -floor (linear)
      // term uniformly across samples.
      double b2_through_rest =
          rule == VarianceRule::Squared ? -2.0 * floor * rest * (g_vrgb + g_vsem)
                                        : -floor * (g_vrgb + g_vsem);

      double suffix = 0.0;  // sum over k > j of g_w[k] * w[k]
      for (int j = samples - 1; j >= 0; --j) {
        int row = i * samples + j;
        double w = weights(i, j);
        double gw = g_color.dot(colors.row(row).transpose()) + g_sem.dot(sems.row(row).transpose()) +
                    g_op + b2_through_rest;
        if (rule == VarianceRule::Squared) {
          gw += 2.0 * w * (g_vrgb * vrgb(row, 0) + g_vsem * vsem(row, 0));
          d_vrgb(row, 0) += w * w * g_vrgb;
          d_vsem(row, 0) += w * w * g_vsem;
        } else {
          gw += g_vrgb * vrgb(row, 0) + g_vsem * vsem(row, 0);
          d_vrgb(row, 0) += w * g_vrgb;
          d_vsem(row, 0) += w * g_vsem;
        }
        d_color.row(row) += w * g_color.transpose();
        d_sem.row(row) += w * g_sem.transpose();
        d_sigma(row, 0) += deltas(i, j) * (gw * trans_next(i, j) - suffix);
        suffix += gw * w;
      }
    }
  }
};

}  // namespace

diff::VarId composite_op(diff::Tape& tape, diff::VarId sigma, diff::VarId color, diff::VarId sem,
                         diff::VarId rgb_var_act, diff::VarId sem_var_act, const Mat& t_values,
                         const Vec& t_far, double beta0, VarianceRule rule) {
  int rays = static_cast<int>(t_values.rows());
  int samples = static_cast<int>(t_values.cols());
  const Mat& sig = tape.value(sigma);
  const Mat& col = tape.value(color);
  const Mat& sm = tape.value(sem);
  const Mat& vr = tape.value(rgb_var_act);
  const Mat& vs = tape.value(sem_var_act);
  if (sig.rows() != static_cast<Eigen::Index>(rays) * samples || sig.cols() != 1)
    throw std::invalid_argument("composite_op: sigma shape mismatch");
  int classes = static_cast<int>(sm.cols());

  auto op = std::make_unique<CompositeOp>();
  op->sigma = sigma;
  op->color = color;
  op->sem = sem;
  op->b2rgb = rgb_var_act;
  op->b2sem = sem_var_act;
  op->rays = rays;
  op->samples = samples;
  op->classes = classes;
  op->beta0 = beta0;
  op->rule = rule;
  op->deltas.resize(rays, samples);
  op->weights.resize(rays, samples);
  op->trans_next.resize(rays, samples);
  op->clamped_rgb.assign(static_cast<size_t>(rays), false);
  op->clamped_sem.assign(static_cast<size_t>(rays), false);

  double floor = beta0 * beta0;
  Mat out = Mat::Zero(rays, 3 + classes + 3);
  for (int i = 0; i < rays; ++i) {
    double transmittance = 1.0;
    double w_sum = 0.0, b2r = 0.0, b2s = 0.0;
    Eigen::Vector3d c_acc = Eigen::Vector3d::Zero();
    Vec s_acc = Vec::Zero(classes);
    for (int j = 0; j < samples; ++j) {
      int row = i * samples + j;
      double delta = (j + 1 < samples ? t_values(i, j + 1) : t_far[i]) - t_values(i, j);
      double a = 1.0 - std::exp(-sig(row, 0) * delta);
      double w = transmittance * a;
      transmittance *= 1.0 - a;
      op->deltas(i, j) = delta;
      op->weights(i, j) = w;
      op->trans_next(i, j) = transmittance;
      c_acc += w * col.row(row).transpose();
      s_acc += w * sm.row(row).transpose();
      w_sum += w;
      if (rule == VarianceRule::Squared) {
        b2r += w * w * vr(row, 0);
        b2s += w * w * vs(row, 0);
      } else {
        b2r += w * vr(row, 0);
        b2s += w * vs(row, 0);
      }
    }
    double rest = 1.0 - w_sum;
    if (rule == VarianceRule::Squared) {
      b2r += floor * rest * rest;
      b2s += floor * rest * rest;
    } else {
      b2r += floor * rest;
      b2s += floor * rest;
    }
    if (b2r < floor) {
      b2r = floor;
      op->clamped_rgb[static_cast<size_t>(i)] = true;
    }
    if (b2s < floor) {
      b2s = floor;
      op->clamped_sem[static_cast<size_t>(i)] = true;
    }
    out.block(i, 0, 1, 3) = c_acc.transpose();
    out.block(i, 3, 1, classes) = s_acc.transpose();
    out(i, 3 + classes) = b2r;
    out(i, 3 + classes + 1) = b2s;
    out(i, 3 + classes + 2) = w_sum;
  }
  return tape.custom(std::move(op), std::move(out), {sigma, color, sem, rgb_var_act, sem_var_act});
}

// ---------------------------------------------------------------------------
// Full-frame rendering
// ---------------------------------------------------------------------------

RenderResult render_image(const Camera& cam, const diff::ParamStore& params,
                          const RenderContext& ctx) {
  const int w = cam.width, h = cam.height;
  const int n_samples = ctx.n_samples;
  const int n_classes = ctx.field.n_classes;
  RenderResult res;
  res.rgb = Image(w, h, 3);
  res.labels = LabelImage(w, h);
  res.rgb_uncertainty = Image(w, h, 1);
  res.sem_uncertainty = Image(w, h, 1);
  res.opacity = Image(w, h, 1);

  // Fixed row blocks keep output independent of the worker count.
  const int rows_per_chunk = std::max(1, 4096 / std::max(1, w));
  const int n_chunks = (h + rows_per_chunk - 1) / rows_per_chunk;

  parallel_chunks(n_chunks, [&](int chunk) {
    int y0 = chunk * rows_per_chunk;
    int y1 = std::min(h, y0 + rows_per_chunk);
    struct HitRay {
      int x, y;
      Ray ray;
      std::vector<double> ts;
    };
    std::vector<HitRay> hits;
    hits.reserve(static_cast<size_t>(y1 - y0) * w);
    for (int y = y0; y < y1; ++y) {
      for (int x = 0; x < w; ++x) {
        Ray r = generate_ray(cam, x, y, Vec2(0.5, 0.5));
        auto interval = ray_aabb_interval(r.origin, r.dir, ctx.bbox);
        if (!interval) {
          // Miss: background defaults, floor uncertainty.
          res.rgb.at(x, y, 0) = res.rgb.at(x, y, 1) = res.rgb.at(x, y, 2) = 0.0;
          res.labels.at(x, y) = 0;
          res.rgb_uncertainty.at(x, y, 0) = ctx.beta0 * ctx.beta0;
          res.sem_uncertainty.at(x, y, 0) = ctx.beta0 * ctx.beta0;
          res.opacity.at(x, y, 0) = 0.0;
          continue;
        }
        HitRay hr;
        hr.x = x;
        hr.y = y;
        hr.ray = r;
        hr.ray.t_near = interval->first;
        hr.ray.t_far = interval->second;
        hr.ts = stratified_sample(hr.ray, n_samples, nullptr);
        hits.push_back(std::move(hr));
      }
    }
    if (hits.empty()) return;

    Eigen::Index n_pts = static_cast<Eigen::Index>(hits.size()) * n_samples;
    Mat points(n_pts, 3), dirs(n_pts, ctx.field.direction_dim());
    for (size_t i = 0; i < hits.size(); ++i) {
      Vec dir_enc = enc::encode_direction(hits[i].ray.dir, ctx.field.freq.k_dir);
      for (int j = 0; j < n_samples; ++j) {
        Eigen::Index row = static_cast<Eigen::Index>(i) * n_samples + j;
        Vec3 p = hits[i].ray.origin + hits[i].ts[static_cast<size_t>(j)] * hits[i].ray.dir;
        points.row(row) = ctx.bbox.to_unit_clamped(p).transpose();
        dirs.row(row) = dir_enc.transpose();
      }
    }

    diff::Tape tape(params);
    field::FieldGraph g = field::build_field_graph(tape, ctx.field, points, dirs);
    const Mat& sigma = tape.value(g.sigma);
    const Mat& color = tape.value(g.color);
    const Mat& sems = tape.value(g.sem_means);
    const Mat& vrgb_raw = tape.value(g.rgb_var_raw);
    const Mat& vsem_raw = tape.value(g.sem_var_raw);

    std::vector<double> sig(static_cast<size_t>(n_samples)), b2r(sig.size()), b2s(sig.size());
    std::vector<double> alpha(sig.size()), weight(sig.size());
    for (size_t i = 0; i < hits.size(); ++i) {
      Eigen::Index base = static_cast<Eigen::Index>(i) * n_samples;
      for (int j = 0; j < n_samples; ++j) {
        sig[static_cast<size_t>(j)] = sigma(base + j, 0);
        b2r[static_cast<size_t>(j)] = diff::shifted_softplus_value(vrgb_raw(base + j, 0), ctx.beta0);
        b2s[static_cast<size_t>(j)] = diff::shifted_softplus_value(vsem_raw(base + j, 0), ctx.beta0);
      }
      RayAccum acc = accumulate_ray(
          sig, hits[i].ts, hits[i].ray.t_far, ctx.beta0, ctx.variance_rule,
          [&](size_t j) { return Vec3(color.row(base + static_cast<Eigen::Index>(j)).transpose()); },
          [&](size_t j) { return Vec(sems.row(base + static_cast<Eigen::Index>(j)).transpose()); },
          b2r, b2s, n_classes, alpha, weight);

      std::uint64_t pixel_index = static_cast<std::uint64_t>(hits[i].y) * w + hits[i].x;
      Rng mc(Rng::mix(ctx.eval_seed, pixel_index));
      Vec probs = loss::approx_class_probs(acc.sem, std::sqrt(acc.b2sem), ctx.n_mc, mc);
      Eigen::Index label = 0;
      probs.maxCoeff(&label);

      res.rgb.at(hits[i].x, hits[i].y, 0) = acc.color[0];
      res.rgb.at(hits[i].x, hits[i].y, 1) = acc.color[1];
      res.rgb.at(hits[i].x, hits[i].y, 2) = acc.color[2];
      res.labels.at(hits[i].x, hits[i].y) = static_cast<int>(label);
      res.rgb_uncertainty.at(hits[i].x, hits[i].y, 0) = acc.b2rgb;
      res.sem_uncertainty.at(hits[i].x, hits[i].y, 0) = acc.b2sem;
      res.opacity.at(hits[i].x, hits[i].y, 0) = acc.opacity;
    }
  });
  return res;
}

}  // namespace usf::render
