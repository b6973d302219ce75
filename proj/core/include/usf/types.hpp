// Copyright Contributors to the usf project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cstdint>
#include <vector>

namespace usf {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;
using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;

// Axis-aligned bounding box, used both as scene bounds and as the
// normalization frame mapping world coordinates into the unit cube.
struct Aabb {
  Vec3 min = Vec3::Zero();
  Vec3 max = Vec3::Ones();

  Vec3 extent() const { return max - min; }
  Vec3 center() const { return 0.5 * (min + max); }

  bool contains(const Vec3& p) const {
    return (p.array() >= min.array()).all() && (p.array() <= max.array()).all();
  }

  // World point -> unit cube, clamped to [0,1] per axis.
  Vec3 to_unit_clamped(const Vec3& p) const {
    Vec3 u;
    for (int a = 0; a < 3; ++a) {
      double e = max[a] - min[a];
      double v = e > 0 ? (p[a] - min[a]) / e : 0.0;
      u[a] = std::clamp(v, 0.0, 1.0);
    }
    return u;
  }
};

// Dense interleaved image, values in [0,1]. data layout: row-major, c channels.
struct Image {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<double> data;

  Image() = default;
  Image(int w, int h, int c) : width(w), height(h), channels(c), data(static_cast<size_t>(w) * h * c, 0.0) {}

  double& at(int x, int y, int c) { return data[(static_cast<size_t>(y) * width + x) * channels + c]; }
  double at(int x, int y, int c) const { return data[(static_cast<size_t>(y) * width + x) * channels + c]; }
  size_t pixel_count() const { return static_cast<size_t>(width) * height; }
};

// Per-pixel integer class labels.
struct LabelImage {
  int width = 0;
  int height = 0;
  std::vector<int> data;

  LabelImage() = default;
  LabelImage(int w, int h) : width(w), height(h), data(static_cast<size_t>(w) * h, 0) {}

  int& at(int x, int y) { return data[static_cast<size_t>(y) * width + x]; }
  int at(int x, int y) const { return data[static_cast<size_t>(y) * width + x]; }
};

}  // namespace usf
