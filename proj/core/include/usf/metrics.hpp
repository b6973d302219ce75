// Copyright Contributors to the usf project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <vector>

#include "usf/types.hpp"

namespace usf::metrics {

// Peak signal-to-noise ratio in dB over all pixels and channels of [0,1]
// images; +infinity for identical images.
double psnr(const Image& pred, const Image& gt);

// Single-scale SSIM: 11x11 Gaussian window (sigma 1.5), K1=0.01, K2=0.03,
// dynamic range 1. Computed per channel over valid window positions, then
// averaged across channels. Throws if the image is smaller than the window.
double ssim(const Image& pred, const Image& gt);

// Confusion counts; rows are ground truth, columns predictions.
struct SegStats {
  int n_classes = 0;
  std::vector<std::int64_t> counts;  // n_classes * n_classes, row-major

  SegStats() = default;
  explicit SegStats(int classes)
      : n_classes(classes), counts(static_cast<size_t>(classes) * classes, 0) {}

  std::int64_t& at(int gt, int pred) { return counts[static_cast<size_t>(gt) * n_classes + pred]; }
  std::int64_t at(int gt, int pred) const { return counts[static_cast<size_t>(gt) * n_classes + pred]; }
  std::int64_t total() const;
  void merge(const SegStats& other);
};

void seg_accumulate(const LabelImage& pred, const LabelImage& gt, SegStats& stats);

struct SegMetrics {
  double miou = 0.0;
  double avg_acc = 0.0;
  double total_acc = 0.0;
};

// mIoU and mean class accuracy average only classes present in the ground
// truth; total_acc is trace/total.
SegMetrics seg_metrics(const SegStats& stats);

}  // namespace usf::metrics
