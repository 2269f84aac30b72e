#pragma once

// Pinhole projection, rigid-motion reprojection and differentiable bilinear
// warping. The reprojection p' = K T Z K^-1 p is built from tape ops so that
// gradients reach both the depth map and the 6-dof pose vector.

#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "semdepth/tensor.hpp"

namespace semdepth {

struct CameraIntrinsics {
  double fx = 1, fy = 1, cx = 0, cy = 0;

  void validate() const {
    if (!(fx > 0) || !(fy > 0))
      throw std::invalid_argument("intrinsics: focal lengths must be positive");
  }
};

using Mat4 = std::array<double, 16>;

inline Mat4 mat4_identity() {
  Mat4 m{};
  m[0] = m[5] = m[10] = m[15] = 1;
  return m;
}

inline Mat4 mat4_mul(const Mat4& a, const Mat4& b) {
  Mat4 r{};
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j)
      for (int k = 0; k < 4; ++k) r[i * 4 + j] += a[i * 4 + k] * b[k * 4 + j];
  return r;
}

// Rigid transform parameterized as axis-angle (radians * unit axis) plus
// translation, matching the pose network's raw output.
struct PoseSE3 {
  std::array<double, 3> axis_angle{0, 0, 0};
  std::array<double, 3> translation{0, 0, 0};

  // Rodrigues exponential map; the small-angle limit is handled by series.
  Mat4 to_matrix() const {
    const double wx = axis_angle[0], wy = axis_angle[1], wz = axis_angle[2];
    const double theta2 = wx * wx + wy * wy + wz * wz;
    const double theta = std::sqrt(theta2);
    double a, b;  // sin(t)/t and (1-cos(t))/t^2
    if (theta < 1e-8) {
      a = 1.0 - theta2 / 6.0;
      b = 0.5 - theta2 / 24.0;
    } else {
      a = std::sin(theta) / theta;
      b = (1.0 - std::cos(theta)) / theta2;
    }
    Mat4 m = mat4_identity();
    m[0] = 1 - b * (wy * wy + wz * wz);
    m[1] = b * wx * wy - a * wz;
    m[2] = b * wx * wz + a * wy;
    m[4] = b * wx * wy + a * wz;
    m[5] = 1 - b * (wx * wx + wz * wz);
    m[6] = b * wy * wz - a * wx;
    m[8] = b * wx * wz - a * wy;
    m[9] = b * wy * wz + a * wx;
    m[10] = 1 - b * (wx * wx + wy * wy);
    m[3] = translation[0];
    m[7] = translation[1];
    m[11] = translation[2];
    return m;
  }

  PoseSE3 inverse() const {
    Mat4 m = to_matrix();
    PoseSE3 inv;
    inv.axis_angle = {-axis_angle[0], -axis_angle[1], -axis_angle[2]};
    // t' = -R^T t
    for (int i = 0; i < 3; ++i)
      inv.translation[i] = -(m[0 * 4 + i] * translation[0] +
                             m[1 * 4 + i] * translation[1] +
                             m[2 * 4 + i] * translation[2]);
    return inv;
  }
};

// Homogeneous pixel coordinates for an HxW image: (u, v, 1) per pixel.
struct PixelGrid {
  int height = 0, width = 0;

  static PixelGrid make(int h, int w) { return {h, w}; }
};

// Warped coordinates with a per-pixel validity flag (points that land behind
// the camera are excluded from photometric supervision).
template <typename S>
struct WarpCoords {
  Tensor<S> u, v;                   // (N,1,H,W) source-image pixel positions
  std::vector<std::uint8_t> valid;  // per pixel, row-major
};

// p' = K T Z K^-1 p, differentiable w.r.t. depth (N=1,1,H,W) and the pose
// vector (6): axis-angle then translation.
template <typename S>
WarpCoords<S> reproject(const PixelGrid& grid, const Tensor<S>& depth,
                        const CameraIntrinsics& K, const Tensor<S>& pose6) {
  K.validate();
  const int H = grid.height, W = grid.width;
  if (depth.shape() != Shape{1, 1, H, W})
    throw std::invalid_argument("reproject: depth must be (1,1,H,W) matching grid");
  if (pose6.size() != 6)
    throw std::invalid_argument("reproject: pose must have 6 elements");
  for (S z : depth.value())
    if (!(z > S(0)))
      throw std::invalid_argument("reproject: depth must be positive");

  // Rotation R = I + a[w]x + b[w]x^2 with a=sin(t)/t, b=(1-cos(t))/t^2,
  // written entirely in scalar tape ops; eps keeps t differentiable at zero.
  auto w0 = at(pose6, 0), w1 = at(pose6, 1), w2 = at(pose6, 2);
  auto t0 = at(pose6, 3), t1 = at(pose6, 4), t2 = at(pose6, 5);
  auto theta2 = w0 * w0 + w1 * w1 + w2 * w2;
  auto theta = sqrt_eps(theta2, S(1e-12));
  auto a = sin(theta) / theta;
  auto b = (Tensor<S>::scalar(1) - cos(theta)) / (theta * theta);
  auto r00 = Tensor<S>::scalar(1) - b * (w1 * w1 + w2 * w2);
  auto r01 = b * w0 * w1 - a * w2;
  auto r02 = b * w0 * w2 + a * w1;
  auto r10 = b * w0 * w1 + a * w2;
  auto r11 = Tensor<S>::scalar(1) - b * (w0 * w0 + w2 * w2);
  auto r12 = b * w1 * w2 - a * w0;
  auto r20 = b * w0 * w2 - a * w1;
  auto r21 = b * w1 * w2 + a * w0;
  auto r22 = Tensor<S>::scalar(1) - b * (w0 * w0 + w1 * w1);

  // Normalized camera rays (constant per pixel).
  std::vector<S> rx(static_cast<std::size_t>(H) * W), ry(rx.size());
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      rx[y * W + x] = static_cast<S>((x - K.cx) / K.fx);
      ry[y * W + x] = static_cast<S>((y - K.cy) / K.fy);
    }
  auto X = Tensor<S>::from({1, 1, H, W}, std::move(rx));
  auto Y = Tensor<S>::from({1, 1, H, W}, std::move(ry));

  auto px = X * depth;
  auto py = Y * depth;
  auto cx = r00 * px + r01 * py + r02 * depth + t0;
  auto cy = r10 * px + r11 * py + r12 * depth + t1;
  auto cz = r20 * px + r21 * py + r22 * depth + t2;

  WarpCoords<S> out;
  out.valid.resize(static_cast<std::size_t>(H) * W);
  const S zmin = S(1e-4);
  for (std::size_t i = 0; i < out.valid.size(); ++i)
    out.valid[i] = cz.value()[i] > zmin ? 1 : 0;
  auto zsafe = clamp(cz, zmin, S(1e12));
  out.u = cx / zsafe * S(K.fx) + S(K.cx);
  out.v = cy / zsafe * S(K.fy) + S(K.cy);
  return out;
}

template <typename S>
WarpCoords<S> reproject(const PixelGrid& grid, const Tensor<S>& depth,
                        const CameraIntrinsics& K, const PoseSE3& pose) {
  std::vector<S> p(6);
  for (int i = 0; i < 3; ++i) {
    p[i] = static_cast<S>(pose.axis_angle[i]);
    p[3 + i] = static_cast<S>(pose.translation[i]);
  }
  return reproject(grid, depth, K, Tensor<S>::from({6}, std::move(p)));
}

// Eq. 1's sampler W(I, p'): bilinear interpolation with clamp-to-edge.
template <typename S>
Tensor<S> bilinear_warp(const Tensor<S>& source, const WarpCoords<S>& coords) {
  return bilinear_sample(source, coords.u, coords.v);
}

}  // namespace semdepth
