#include <doctest.h>

#include <cmath>
#include <random>

#include "semdepth/geometry.hpp"

using namespace semdepth;

TEST_CASE("zero pose is the identity transform") {
  PoseSE3 p;
  auto m = p.to_matrix();
  auto id = mat4_identity();
  for (int i = 0; i < 16; ++i) CHECK(m[i] == doctest::Approx(id[i]));
}

TEST_CASE("quarter turn about z maps x to y") {
  PoseSE3 p;
  p.axis_angle = {0, 0, M_PI / 2};
  auto m = p.to_matrix();
  // column of R applied to (1,0,0)
  CHECK(std::abs(m[0 * 4 + 0] - 0.0) < 1e-9);
  CHECK(std::abs(m[1 * 4 + 0] - 1.0) < 1e-9);
  CHECK(std::abs(m[2 * 4 + 0] - 0.0) < 1e-9);
}

TEST_CASE("pose composed with its inverse is the identity") {
  PoseSE3 p;
  p.axis_angle = {0.3, -0.2, 0.5};
  p.translation = {1.0, -2.0, 0.7};
  auto m = mat4_mul(p.to_matrix(), p.inverse().to_matrix());
  auto id = mat4_identity();
  for (int i = 0; i < 16; ++i) CHECK(std::abs(m[i] - id[i]) < 1e-9);
}

TEST_CASE("identity transform reprojects onto the pixel grid") {
  const int H = 6, W = 8;
  CameraIntrinsics K{50, 50, W / 2.0, H / 2.0};
  std::mt19937 rng(11);
  std::uniform_real_distribution<double> d(1.0, 20.0);
  std::vector<double> depth(H * W);
  for (auto& z : depth) z = d(rng);
  auto coords = reproject(PixelGrid::make(H, W),
                          TensorD::from({1, 1, H, W}, depth), K, PoseSE3{});
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      const int k = y * W + x;
      CHECK(coords.u.value()[k] == doctest::Approx(x).epsilon(1e-9));
      CHECK(coords.v.value()[k] == doctest::Approx(y).epsilon(1e-9));
      CHECK(coords.valid[k] == 1);
    }
}

TEST_CASE("pure x-translation shifts by fx*t/Z pixels") {
  const int H = 4, W = 6;
  CameraIntrinsics K{100, 100, W / 2.0, H / 2.0};
  PoseSE3 p;
  p.translation = {0.5, 0, 0};
  auto coords =
      reproject(PixelGrid::make(H, W),
                TensorD::filled({1, 1, H, W}, 10.0), K, p);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      const int k = y * W + x;
      CHECK(coords.u.value()[k] == doctest::Approx(x + 100 * 0.5 / 10.0));
      CHECK(coords.v.value()[k] == doctest::Approx(y));
    }
}

TEST_CASE("reprojection under identity rotation/translation is depth-scale invariant") {
  const int H = 4, W = 5;
  CameraIntrinsics K{40, 40, W / 2.0, H / 2.0};
  std::mt19937 rng(2);
  std::uniform_real_distribution<double> d(2.0, 9.0);
  std::vector<double> depth(H * W), scaled(H * W);
  for (std::size_t i = 0; i < depth.size(); ++i) {
    depth[i] = d(rng);
    scaled[i] = 3.7 * depth[i];
  }
  auto a = reproject(PixelGrid::make(H, W), TensorD::from({1, 1, H, W}, depth),
                     K, PoseSE3{});
  auto b = reproject(PixelGrid::make(H, W), TensorD::from({1, 1, H, W}, scaled),
                     K, PoseSE3{});
  for (int k = 0; k < H * W; ++k) {
    CHECK(a.u.value()[k] == doctest::Approx(b.u.value()[k]).epsilon(1e-9));
    CHECK(a.v.value()[k] == doctest::Approx(b.v.value()[k]).epsilon(1e-9));
  }
}

TEST_CASE("bilinear sampling at lattice points is exact") {
  const int H = 3, W = 4;
  std::mt19937 rng(7);
  std::uniform_real_distribution<double> d(0, 1);
  std::vector<double> img(H * W), u(H * W), v(H * W);
  for (auto& x : img) x = d(rng);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      u[y * W + x] = x;
      v[y * W + x] = y;
    }
  auto out = bilinear_sample(TensorD::from({1, 1, H, W}, img),
                             TensorD::from({1, 1, H, W}, u),
                             TensorD::from({1, 1, H, W}, v));
  for (int k = 0; k < H * W; ++k) CHECK(out.value()[k] == img[k]);
}

TEST_CASE("bilinear sampling at the center of a 2x2 image is the corner mean") {
  auto src = TensorD::from({1, 1, 2, 2}, {1, 2, 3, 4});
  auto out = bilinear_sample(src, TensorD::filled({1, 1, 2, 2}, 0.5),
                             TensorD::filled({1, 1, 2, 2}, 0.5));
  for (double o : out.value()) CHECK(o == doctest::Approx(2.5));
}

TEST_CASE("points behind the camera are flagged invalid") {
  const int H = 2, W = 2;
  CameraIntrinsics K{10, 10, 1, 1};
  PoseSE3 p;
  p.translation = {0, 0, -50.0};  // pushes scene points behind the camera
  auto coords = reproject(PixelGrid::make(H, W),
                          TensorD::filled({1, 1, H, W}, 5.0), K, p);
  for (int k = 0; k < H * W; ++k) CHECK(coords.valid[k] == 0);
}
