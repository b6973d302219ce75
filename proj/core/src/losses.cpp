// Copyright Contributors to the usf project
// SPDX-License-Identifier: Apache-2.0

#include "usf/losses.hpp"

#include <cmath>
#include <stdexcept>

namespace usf::loss {

namespace {
constexpr double kProbClamp = 1e-12;
}

Vec approx_class_probs(const Vec& sem_means, double sem_std, int n_draws, Rng& rng) {
  if (n_draws < 1) throw std::invalid_argument("approx_class_probs: need at least one draw");
  if (sem_std < 0) throw std::invalid_argument("approx_class_probs: negative std");
  Eigen::Index c = sem_means.size();
  Vec acc = Vec::Zero(c);
  Vec noise(c);
  for (int n = 0; n < n_draws; ++n) {
    for (Eigen::Index i = 0; i < c; ++i) noise[i] = rng.normal();
    acc += diff::softmax_value(diff::sample_gaussian_reparam_value(sem_means, sem_std, noise));
  }
  return acc / n_draws;
}

double loss_rgb(const Mat& pred_colors, const Mat& gt_colors) {
  if (pred_colors.rows() != gt_colors.rows() || pred_colors.cols() != gt_colors.cols())
    throw std::invalid_argument("loss_rgb: batch shape mismatch");
  if (pred_colors.rows() == 0) throw std::invalid_argument("loss_rgb: empty batch");
  return (pred_colors - gt_colors).squaredNorm() / pred_colors.rows();
}

double loss_semantic(const Mat& pred_probs, std::span<const int> gt_labels) {
  if (pred_probs.rows() != static_cast<Eigen::Index>(gt_labels.size()))
    throw std::invalid_argument("loss_semantic: batch size mismatch");
  if (gt_labels.empty()) throw std::invalid_argument("loss_semantic: empty batch");
  double acc = 0.0;
  for (Eigen::Index i = 0; i < pred_probs.rows(); ++i) {
    int l = gt_labels[static_cast<size_t>(i)];
    if (l < 0 || l >= pred_probs.cols())
      throw std::runtime_error("loss_semantic: label " + std::to_string(l) + " out of range at ray " +
                               std::to_string(i));
    acc -= std::log(std::max(pred_probs(i, l), kProbClamp));
  }
  return acc / pred_probs.rows();
}

double loss_uncert(const Mat& pred_colors, const Mat& gt_colors, const Vec& rgb_vars,
                   std::span<const std::vector<double>> ray_weights, double eta) {
  Eigen::Index n = pred_colors.rows();
  if (gt_colors.rows() != n || rgb_vars.size() != n ||
      static_cast<Eigen::Index>(ray_weights.size()) != n)
    throw std::invalid_argument("loss_uncert: batch size mismatch");
  if (n == 0) throw std::invalid_argument("loss_uncert: empty batch");
  double acc = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    double res2 = (pred_colors.row(i) - gt_colors.row(i)).squaredNorm();
    double b2 = rgb_vars[i];
    double w_sum = 0.0;
    const auto& w = ray_weights[static_cast<size_t>(i)];
    for (double wj : w) w_sum += wj;
    acc += res2 / (2.0 * b2) + 0.5 * std::log(b2) +
           (w.empty() ? 0.0 : eta / static_cast<double>(w.size()) * w_sum);
  }
  return acc / n;
}

// ---------------------------------------------------------------------------
// Taped ops
// ---------------------------------------------------------------------------

namespace {

struct McClassProbsOp final : diff::TapeOp {
  diff::VarId means, var;
  std::vector<Mat> noise;     // N draws of (rays, classes)
  std::vector<Mat> per_draw;  // softmax of each draw, kept for backward

  void backward(diff::Tape& t, diff::VarId self) override {
    const Mat& g = t.adjoint(self);
    const Mat& v = t.value(var);
    Mat& d_means = t.adjoint(means);
    Mat& d_var = t.adjoint(var);
    int n = static_cast<int>(noise.size());
    double inv_n = 1.0 / n;
    for (int k = 0; k < n; ++k) {
      const Mat& p = per_draw[static_cast<size_t>(k)];
      Vec dot = (g.array() * p.array()).rowwise().sum();
      Mat dz = inv_n * (p.array() * (g.array().colwise() - dot.array())).matrix();
      d_means += dz;
      Vec ds = (dz.array() * noise[static_cast<size_t>(k)].array()).rowwise().sum();
      for (Eigen::Index i = 0; i < ds.size(); ++i) {
        double s = std::sqrt(v(i, 0));
        // Variance gradient via d std / d var = 1/(2 std); pinned std = 0
        // contributes nothing.
        if (s > 0.0) d_var(i, 0) += ds[i] / (2.0 * s);
      }
    }
  }
};

struct RgbLossOp final : diff::TapeOp {
  diff::VarId pred;
  Mat gt;
  void backward(diff::Tape& t, diff::VarId self) override {
    double g = t.adjoint(self)(0, 0);
    const Mat& p = t.value(pred);
    t.adjoint(pred) += (2.0 * g / p.rows()) * (p - gt);
  }
};

struct SemanticCeOp final : diff::TapeOp {
  diff::VarId probs;
  std::vector<int> labels;
  void backward(diff::Tape& t, diff::VarId self) override {
    double g = t.adjoint(self)(0, 0);
    const Mat& p = t.value(probs);
    Mat& d = t.adjoint(probs);
    double scale = g / p.rows();
    for (Eigen::Index i = 0; i < p.rows(); ++i) {
      double pi = p(i, labels[static_cast<size_t>(i)]);
      if (pi >= kProbClamp) d(i, labels[static_cast<size_t>(i)]) -= scale / pi;
    }
  }
};

struct UncertLossOp final : diff::TapeOp {
  diff::VarId pred, vars, opacity;
  Mat gt;
  double eta = 0.0;
  int n_samples = 1;
  void backward(diff::Tape& t, diff::VarId self) override {
    double g = t.adjoint(self)(0, 0);
    const Mat& p = t.value(pred);
    const Mat& v = t.value(vars);
    double scale = g / p.rows();
    Mat& d_pred = t.adjoint(pred);
    Mat& d_var = t.adjoint(vars);
    Mat& d_op = t.adjoint(opacity);
    for (Eigen::Index i = 0; i < p.rows(); ++i) {
      double b2 = v(i, 0);
      Eigen::RowVector3d r = p.row(i) - gt.row(i);
      d_pred.row(i) += (scale / b2) * r;
      d_var(i, 0) += scale * (0.5 / b2 - r.squaredNorm() / (2.0 * b2 * b2));
      d_op(i, 0) += scale * eta / n_samples;
    }
  }
};

}  // namespace

diff::VarId mc_class_probs_op(diff::Tape& tape, diff::VarId sem_means, diff::VarId sem_var,
                              const std::vector<Mat>& noise) {
  if (noise.empty()) throw std::invalid_argument("mc_class_probs_op: no noise draws");
  const Mat& m = tape.value(sem_means);
  const Mat& v = tape.value(sem_var);
  if (v.cols() != 1 || v.rows() != m.rows())
    throw std::invalid_argument("mc_class_probs_op: variance must be (rays, 1)");

  auto op = std::make_unique<McClassProbsOp>();
  op->means = sem_means;
  op->var = sem_var;
  op->noise = noise;
  op->per_draw.reserve(noise.size());

  Mat acc = Mat::Zero(m.rows(), m.cols());
  for (const Mat& nz : noise) {
    if (nz.rows() != m.rows() || nz.cols() != m.cols())
      throw std::invalid_argument("mc_class_probs_op: noise shape mismatch");
    Mat p(m.rows(), m.cols());
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      double s = std::sqrt(v(i, 0));
      Vec logits = m.row(i).transpose() + s * nz.row(i).transpose();
      p.row(i) = diff::softmax_value(logits).transpose();
    }
    acc += p;
    op->per_draw.push_back(std::move(p));
  }
  acc /= static_cast<double>(noise.size());
  return tape.custom(std::move(op), std::move(acc), {sem_means, sem_var});
}

diff::VarId loss_rgb_op(diff::Tape& tape, diff::VarId pred_colors, const Mat& gt_colors) {
  const Mat& p = tape.value(pred_colors);
  if (p.rows() != gt_colors.rows() || p.cols() != gt_colors.cols())
    throw std::invalid_argument("loss_rgb_op: shape mismatch");
  auto op = std::make_unique<RgbLossOp>();
  op->pred = pred_colors;
  op->gt = gt_colors;
  Mat y(1, 1);
  y(0, 0) = (p - gt_colors).squaredNorm() / p.rows();
  return tape.custom(std::move(op), std::move(y), {pred_colors});
}

diff::VarId loss_semantic_op(diff::Tape& tape, diff::VarId pred_probs, std::vector<int> gt_labels) {
  const Mat& p = tape.value(pred_probs);
  if (p.rows() != static_cast<Eigen::Index>(gt_labels.size()))
    throw std::invalid_argument("loss_semantic_op: batch mismatch");
  double acc = 0.0;
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    int l = gt_labels[static_cast<size_t>(i)];
    if (l < 0 || l >= p.cols()) throw std::runtime_error("loss_semantic_op: label out of range");
    acc -= std::log(std::max(p(i, l), kProbClamp));
  }
  auto op = std::make_unique<SemanticCeOp>();
  op->probs = pred_probs;
  op->labels = std::move(gt_labels);
  Mat y(1, 1);
  y(0, 0) = acc / p.rows();
  return tape.custom(std::move(op), std::move(y), {pred_probs});
}

diff::VarId loss_uncert_op(diff::Tape& tape, diff::VarId pred_colors, const Mat& gt_colors,
                           diff::VarId rgb_vars, diff::VarId opacity, double eta, int n_samples) {
  const Mat& p = tape.value(pred_colors);
  const Mat& v = tape.value(rgb_vars);
  const Mat& o = tape.value(opacity);
  if (p.rows() != gt_colors.rows() || v.rows() != p.rows() || o.rows() != p.rows())
    throw std::invalid_argument("loss_uncert_op: batch mismatch");
  double acc = 0.0;
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    double res2 = (p.row(i) - gt_colors.row(i)).squaredNorm();
    acc += res2 / (2.0 * v(i, 0)) + 0.5 * std::log(v(i, 0)) + eta / n_samples * o(i, 0);
  }
  auto op = std::make_unique<UncertLossOp>();
  op->pred = pred_colors;
  op->vars = rgb_vars;
  op->opacity = opacity;
  op->gt = gt_colors;
  op->eta = eta;
  op->n_samples = n_samples;
  Mat y(1, 1);
  y(0, 0) = acc / p.rows();
  return tape.custom(std::move(op), std::move(y), {pred_colors, rgb_vars, opacity});
}

}  // namespace usf::loss
