// Copyright Contributors to the usf project
// SPDX-License-Identifier: Apache-2.0

#include "usf/metrics.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace usf::metrics {

double psnr(const Image& pred, const Image& gt) {
  if (pred.width != gt.width || pred.height != gt.height || pred.channels != gt.channels)
    throw std::invalid_argument("psnr: dimension mismatch");
  if (pred.data.empty()) throw std::invalid_argument("psnr: empty image");
  double mse = 0.0;
  for (size_t i = 0; i < pred.data.size(); ++i) {
    double d = pred.data[i] - gt.data[i];
    mse += d * d;
  }
  mse /= pred.data.size();
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return -10.0 * std::log10(mse);
}

namespace {

constexpr int kWindow = 11;
constexpr double kSigma = 1.5;
constexpr double kC1 = 0.01 * 0.01;  // (K1 * L)^2, L = 1
constexpr double kC2 = 0.03 * 0.03;

std::vector<double> gaussian_kernel() {
  std::vector<double> k(kWindow);
  double sum = 0.0;
  for (int i = 0; i < kWindow; ++i) {
    double d = i - (kWindow - 1) / 2.0;
    k[static_cast<size_t>(i)] = std::exp(-d * d / (2.0 * kSigma * kSigma));
    sum += k[static_cast<size_t>(i)];
  }
  for (double& v : k) v /= sum;
  return k;
}

// Separable valid-mode convolution of one channel.
Mat blur(const Mat& img, const std::vector<double>& k) {
  Eigen::Index h = img.rows(), w = img.cols();
  Mat tmp(h, w - kWindow + 1);
  for (Eigen::Index y = 0; y < h; ++y)
    for (Eigen::Index x = 0; x + kWindow <= w; ++x) {
      double acc = 0.0;
      for (int i = 0; i < kWindow; ++i) acc += k[static_cast<size_t>(i)] * img(y, x + i);
      tmp(y, x) = acc;
    }
  Mat out(h - kWindow + 1, tmp.cols());
  for (Eigen::Index x = 0; x < tmp.cols(); ++x)
    for (Eigen::Index y = 0; y + kWindow <= h; ++y) {
      double acc = 0.0;
      for (int i = 0; i < kWindow; ++i) acc += k[static_cast<size_t>(i)] * tmp(y + i, x);
      out(y, x) = acc;
    }
  return out;
}

Mat channel(const Image& img, int c) {
  Mat m(img.height, img.width);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) m(y, x) = img.at(x, y, c);
  return m;
}

}  // namespace

double ssim(const Image& pred, const Image& gt) {
  if (pred.width != gt.width || pred.height != gt.height || pred.channels != gt.channels)
    throw std::invalid_argument("ssim: dimension mismatch");
  if (pred.width < kWindow || pred.height < kWindow)
    throw std::invalid_argument("ssim: image smaller than the 11x11 window");
  static const std::vector<double> kernel = gaussian_kernel();

  double acc = 0.0;
  for (int c = 0; c < pred.channels; ++c) {
    Mat x = channel(pred, c), y = channel(gt, c);
    Mat mx = blur(x, kernel), my = blur(y, kernel);
    Mat mxx = blur(x.cwiseProduct(x), kernel);
    Mat myy = blur(y.cwiseProduct(y), kernel);
    Mat mxy = blur(x.cwiseProduct(y), kernel);
    Mat vx = mxx - mx.cwiseProduct(mx);
    Mat vy = myy - my.cwiseProduct(my);
    Mat cxy = mxy - mx.cwiseProduct(my);
    Mat num = (2.0 * mx.cwiseProduct(my).array() + kC1) * (2.0 * cxy.array() + kC2);
    Mat den = (mx.array().square() + my.array().square() + kC1) *
              (vx.array() + vy.array() + kC2);
    acc += (num.array() / den.array()).mean();
  }
  return acc / pred.channels;
}

std::int64_t SegStats::total() const {
  std::int64_t t = 0;
  for (auto v : counts) t += v;
  return t;
}

void SegStats::merge(const SegStats& other) {
  if (other.n_classes != n_classes) throw std::invalid_argument("SegStats::merge: class mismatch");
  for (size_t i = 0; i < counts.size(); ++i) counts[i] += other.counts[i];
}

void seg_accumulate(const LabelImage& pred, const LabelImage& gt, SegStats& stats) {
  if (pred.width != gt.width || pred.height != gt.height)
    throw std::invalid_argument("seg_accumulate: dimension mismatch");
  for (size_t i = 0; i < pred.data.size(); ++i) {
    int p = pred.data[i], g = gt.data[i];
    if (p < 0 || p >= stats.n_classes || g < 0 || g >= stats.n_classes)
      throw std::runtime_error("seg_accumulate: label out of range");
    ++stats.at(g, p);
  }
}

SegMetrics seg_metrics(const SegStats& stats) {
  if (stats.total() <= 0) throw std::invalid_argument("seg_metrics: empty stats");
  int n = stats.n_classes;
  double iou_sum = 0.0, acc_sum = 0.0;
  std::int64_t diag = 0;
  int present = 0;
  for (int c = 0; c < n; ++c) {
    std::int64_t row = 0, col = 0;
    for (int k = 0; k < n; ++k) {
      row += stats.at(c, k);
      col += stats.at(k, c);
    }
    std::int64_t d = stats.at(c, c);
    diag += d;
    if (row == 0) continue;  // class absent from ground truth
    ++present;
    std::int64_t uni = row + col - d;
    iou_sum += uni > 0 ? static_cast<double>(d) / uni : 0.0;
    acc_sum += static_cast<double>(d) / row;
  }
  SegMetrics m;
  if (present > 0) {
    m.miou = iou_sum / present;
    m.avg_acc = acc_sum / present;
  }
  m.total_acc = static_cast<double>(diag) / stats.total();
  return m;
}

}  // namespace usf::metrics
