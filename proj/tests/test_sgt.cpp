#include <doctest.h>

#include <cmath>
#include <random>

#include "semdepth/sgt.hpp"

using namespace semdepth;

namespace {
SgtConfig k5_cfg() {
  SgtConfig c;  // defaults: K=5, T=4, m=0.3
  return c;
}
}  // namespace

TEST_CASE("uniform labels yield no boundary patches") {
  std::vector<int> labels(8 * 8, 2);
  auto sets = sample_patch_triplets(labels, 8, 8, k5_cfg());
  for (const auto& s : sets) {
    CHECK(s.negatives.empty());
    CHECK_FALSE(s.is_boundary);
  }
}

TEST_CASE("vertical class boundary through the patch center") {
  // 5x5 window around the center of a 5x5 image, split after column 2.
  std::vector<int> labels(5 * 5);
  for (int y = 0; y < 5; ++y)
    for (int x = 0; x < 5; ++x) labels[y * 5 + x] = x <= 2 ? 0 : 1;
  auto sets = sample_patch_triplets(labels, 5, 5, k5_cfg());
  REQUIRE(sets.size() == 1);  // only the center is interior
  CHECK(sets[0].positives.size() == 14);
  CHECK(sets[0].negatives.size() == 10);
  CHECK(sets[0].is_boundary);
}

TEST_CASE("a single salt-noise pixel is rejected by the threshold") {
  std::vector<int> labels(5 * 5, 0);
  labels[1 * 5 + 1] = 3;  // lone flipped pixel inside the window
  auto sets = sample_patch_triplets(labels, 5, 5, k5_cfg());
  REQUIRE(sets.size() == 1);
  CHECK(sets[0].negatives.size() == 1);
  CHECK_FALSE(sets[0].is_boundary);
}

TEST_CASE("identical features give (near) zero positive distance") {
  std::vector<int> labels(5 * 5, 0);
  auto sets = sample_patch_triplets(labels, 5, 5, k5_cfg());
  auto features = l2_normalize(TensorD::filled({1, 3, 5, 5}, 0.7), 1);
  auto [dp, dn] = patch_distances(features, sets[0]);
  REQUIRE(dp.has_value());
  CHECK_FALSE(dn.has_value());
  CHECK(dp->item() < 1e-3);
}

TEST_CASE("orthogonal unit vectors are sqrt(2) apart") {
  // anchor (1,0) at the center, neighbors (0,1)
  std::vector<int> labels(3 * 3, 1);
  labels[4] = 0;
  SgtConfig cfg;
  cfg.patch_size = 3;
  auto sets = sample_patch_triplets(labels, 3, 3, cfg);
  REQUIRE(sets.size() == 1);
  std::vector<double> f(2 * 9, 0.0);
  f[9 + 4] = 0;  // channel 1 of anchor
  f[4] = 1;      // channel 0 of anchor
  for (int k = 0; k < 9; ++k)
    if (k != 4) f[9 + k] = 1;
  auto [dp, dn] = patch_distances(TensorD::from({1, 2, 3, 3}, f), sets[0]);
  CHECK_FALSE(dp.has_value());
  REQUIRE(dn.has_value());
  CHECK(dn->item() == doctest::Approx(std::sqrt(2.0)).epsilon(1e-6));
}

TEST_CASE("patch distances match a scalar pairwise oracle") {
  const int C = 8, H = 5, W = 5;
  std::mt19937 rng(3);
  std::uniform_real_distribution<double> d(-1, 1);
  std::vector<double> f(C * H * W);
  for (auto& v : f) v = d(rng);
  std::vector<int> labels(H * W);
  std::uniform_int_distribution<int> cls(0, 1);
  for (auto& l : labels) l = cls(rng);
  auto fhat = l2_normalize(TensorD::from({1, C, H, W}, f), 1);
  auto sets = sample_patch_triplets(labels, H, W, k5_cfg());
  REQUIRE(sets.size() == 1);
  const auto& fv = fhat.value();
  auto dist = [&](int i, int j) {
    double acc = 1e-8;
    for (int c = 0; c < C; ++c) {
      const double dd = fv[c * H * W + i] - fv[c * H * W + j];
      acc += dd * dd;
    }
    return std::sqrt(acc);
  };
  auto ref = [&](const std::vector<int>& members) {
    double s = 0;
    for (int j : members) s += dist(sets[0].anchor_index, j);
    return s / members.size();
  };
  auto [dp, dn] = patch_distances(fhat, sets[0]);
  if (dp) CHECK(dp->item() == doctest::Approx(ref(sets[0].positives)).epsilon(1e-6));
  if (dn) CHECK(dn->item() == doctest::Approx(ref(sets[0].negatives)).epsilon(1e-6));
}

TEST_CASE("hinge cases of the patch triplet loss") {
  auto loss = [](double dp, double dn) {
    return patch_triplet_loss(TensorD::scalar(dp), TensorD::scalar(dn), 0.3)
        .item();
  };
  CHECK(loss(0.0, 0.5) == doctest::Approx(0.0));
  CHECK(loss(0.2, 0.3) == doctest::Approx(0.2));
  CHECK(loss(0.0, 0.0) == doctest::Approx(0.3));
}

TEST_CASE("sgt loss is zero without boundary patches") {
  std::mt19937 rng(4);
  std::uniform_real_distribution<double> d(-1, 1);
  std::vector<double> f(4 * 8 * 8);
  for (auto& v : f) v = d(rng);
  std::vector<int> labels(8 * 8, 1);
  CHECK(sgt_loss(TensorD::from({1, 4, 8, 8}, f), labels, k5_cfg()).item() ==
        doctest::Approx(0.0));
}

TEST_CASE("a single boundary patch determines the loss") {
  const int C = 3, H = 5, W = 7;
  std::mt19937 rng(5);
  std::uniform_real_distribution<double> d(-1, 1);
  std::vector<double> f(C * H * W);
  for (auto& v : f) v = d(rng);
  // split the image so exactly one interior center is a boundary patch
  std::vector<int> labels(H * W, 0);
  for (int y = 0; y < H; ++y) labels[y * W + 6] = 1;
  auto cfg = k5_cfg();
  auto sets = sample_patch_triplets(labels, H, W, cfg);
  int boundary = 0;
  const PatchTripletSet* the_set = nullptr;
  for (const auto& s : sets)
    if (s.is_boundary) {
      ++boundary;
      the_set = &s;
    }
  REQUIRE(boundary == 1);
  auto features = TensorD::from({1, C, H, W}, f);
  auto fhat = l2_normalize(features, 1);
  auto [dp, dn] = patch_distances(fhat, *the_set);
  const double want =
      patch_triplet_loss(*dp, *dn, cfg.margin).item();
  CHECK(sgt_loss(features, labels, cfg).item() ==
        doctest::Approx(want).epsilon(1e-6));
}

TEST_CASE("sgt loss is invariant to feature rescaling") {
  const int C = 4, H = 8, W = 8;
  std::mt19937 rng(6);
  std::uniform_real_distribution<double> d(-1, 1);
  std::vector<double> f(C * H * W), f10(C * H * W);
  for (std::size_t i = 0; i < f.size(); ++i) {
    f[i] = d(rng);
    f10[i] = 10.0 * f[i];
  }
  std::vector<int> labels(H * W);
  std::uniform_int_distribution<int> cls(0, 1);
  for (auto& l : labels) l = cls(rng);
  const double a = sgt_loss(TensorD::from({1, C, H, W}, f), labels, k5_cfg()).item();
  const double b =
      sgt_loss(TensorD::from({1, C, H, W}, f10), labels, k5_cfg()).item();
  CHECK(a == doctest::Approx(b).epsilon(1e-5));
}

TEST_CASE("nearest-neighbor label resize keeps class ids") {
  std::vector<int> labels = {0, 1, 2, 3};
  auto half = resize_labels_nearest(labels, 2, 2, 1, 1);
  REQUIRE(half.size() == 1);
  CHECK((half[0] == 0 || half[0] == 1 || half[0] == 2 || half[0] == 3));
  auto same = resize_labels_nearest(labels, 2, 2, 2, 2);
  CHECK(same == labels);
}
