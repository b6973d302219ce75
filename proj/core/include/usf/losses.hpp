// Copyright Contributors to the usf project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <span>
#include <vector>

#include "usf/diffmath.hpp"
#include "usf/rng.hpp"
#include "usf/types.hpp"

namespace usf::loss {

struct LossWeights {
  double omega = 1.49e-5;   // rgb term weight
  double lambda = 7.25e-2;  // semantic term weight
  double eta = 1e-3;        // opacity regularizer weight
  double beta0 = 0.01;      // uncertainty floor (variance floor beta0^2)
  int n_mc = 10;            // Monte-Carlo draws for class probabilities
};

struct LossBreakdown {
  double total = 0.0;
  double l_rgb = 0.0;
  double l_semantic = 0.0;
  double l_uncert = 0.0;
};

// Monte-Carlo approximation of E[softmax(logits)] with logits ~
// N(sem_means, sem_std^2), shared scalar std across classes, via the
// reparametrization trick. sem_std = 0 returns softmax(sem_means) exactly.
Vec approx_class_probs(const Vec& sem_means, double sem_std, int n_draws, Rng& rng);

// Mean over rays of the squared L2 color error (summed over channels).
double loss_rgb(const Mat& pred_colors, const Mat& gt_colors);

// Mean over rays of -log p[gt], p clamped at 1e-12.
double loss_semantic(const Mat& pred_probs, std::span<const int> gt_labels);

// Gaussian NLL of the color residual under the composited rgb variance plus
// the opacity regularizer: mean over rays of
//   |C - gt|^2 / (2 b2) + log(b2) / 2 + (eta / n_samples) * sum_j w_j.
double loss_uncert(const Mat& pred_colors, const Mat& gt_colors, const Vec& rgb_vars,
                   std::span<const std::vector<double>> ray_weights, double eta);

// ---------------------------------------------------------------------------
// Taped variants (used by the training graph)
// ---------------------------------------------------------------------------

// probs = (1/N) sum_n softmax(means + sqrt(var) * noise_n). `noise` holds N
// draws of shape (rays, classes). Gradients flow to means and var.
diff::VarId mc_class_probs_op(diff::Tape& tape, diff::VarId sem_means, diff::VarId sem_var,
                              const std::vector<Mat>& noise);

diff::VarId loss_rgb_op(diff::Tape& tape, diff::VarId pred_colors, const Mat& gt_colors);
diff::VarId loss_semantic_op(diff::Tape& tape, diff::VarId pred_probs,
                             std::vector<int> gt_labels);
// `opacity` is the per-ray sum of quadrature weights returned by the
// compositor; n_samples is the per-ray sample count of the regularizer.
diff::VarId loss_uncert_op(diff::Tape& tape, diff::VarId pred_colors, const Mat& gt_colors,
                           diff::VarId rgb_vars, diff::VarId opacity, double eta, int n_samples);

}  // namespace usf::loss
