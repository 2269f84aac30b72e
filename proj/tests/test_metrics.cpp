#include <doctest.h>

#include <random>

#include "semdepth/metrics.hpp"

using namespace semdepth;

TEST_CASE("perfect depth prediction scores perfectly") {
  std::vector<double> gt = {1.0, 5.0, 12.0, 40.0};
  auto m = evaluate_depth(gt, gt);
  CHECK(m.abs_rel == doctest::Approx(0.0));
  CHECK(m.sq_rel == doctest::Approx(0.0));
  CHECK(m.rms == doctest::Approx(0.0));
  CHECK(m.rms_log == doctest::Approx(0.0));
  CHECK(m.delta1 == doctest::Approx(1.0));
  CHECK(m.delta2 == doctest::Approx(1.0));
  CHECK(m.delta3 == doctest::Approx(1.0));
}

TEST_CASE("median scaling removes any global scale factor") {
  std::vector<double> gt = {2.0, 7.0, 19.0, 55.0, 3.3};
  std::vector<double> pred = gt;
  for (auto& p : pred) p *= 0.037;
  auto m = evaluate_depth(pred, gt);
  CHECK(m.abs_rel == doctest::Approx(0.0));
  CHECK(m.delta1 == doctest::Approx(1.0));
}

TEST_CASE("spec example with scaling disabled") {
  DepthEvalOptions opt;
  opt.median_scale = false;
  opt.min_depth = 0.01;
  auto m = evaluate_depth({3.0, 3.0}, {2.0, 4.0}, opt);
  CHECK(m.abs_rel == doctest::Approx(0.375));
  // ratios are 1.5 and 4/3; both >= 1.25, so delta1 = 0
  CHECK(m.delta1 == doctest::Approx(0.0));
}

TEST_CASE("absrel grows monotonically with noise") {
  std::mt19937 rng(1);
  std::uniform_real_distribution<double> d(1.0, 50.0);
  std::vector<double> gt(500);
  for (auto& g : gt) g = d(rng);
  double prev = -1;
  for (double sigma : {0.0, 0.05, 0.1, 0.2, 0.4}) {
    std::mt19937 noise_rng(2);
    std::normal_distribution<double> n(0.0, sigma);
    std::vector<double> pred(gt);
    for (auto& p : pred) p = std::max(0.05, p * (1.0 + n(noise_rng)));
    auto m = evaluate_depth(pred, gt);
    CHECK(m.abs_rel >= prev);
    prev = m.abs_rel;
  }
}

TEST_CASE("gt pixels outside (0, cap] are excluded") {
  DepthEvalOptions opt;
  opt.cap = 50.0;
  std::vector<double> gt = {10.0, 0.0, 200.0, 10.0};
  std::vector<double> pred = {10.0, 3.0, 4.0, 10.0};
  auto m = evaluate_depth(pred, gt, opt);
  CHECK(m.abs_rel == doctest::Approx(0.0));
}

TEST_CASE("perfect segmentation has mIoU 1") {
  std::vector<int> gt = {0, 1, 2, 1, 0};
  CHECK(evaluate_seg(gt, gt, 3) == doctest::Approx(1.0));
}

TEST_CASE("constant prediction on a half/half image scores 0.25") {
  std::vector<int> gt(100), pred(100, 0);
  for (int i = 50; i < 100; ++i) gt[i] = 1;
  CHECK(evaluate_seg(pred, gt, 2) == doctest::Approx(0.25));
}

TEST_CASE("classes absent from gt are skipped") {
  // class 2 never appears in gt and never predicted; it must not dilute mIoU
  std::vector<int> gt = {0, 0, 1, 1};
  std::vector<int> pred = {0, 0, 1, 1};
  CHECK(evaluate_seg(pred, gt, 3) == doctest::Approx(1.0));
}

TEST_CASE("evaluate_depth rejects degenerate inputs") {
  CHECK_THROWS(evaluate_depth({1.0}, {0.0}));          // nothing valid
  CHECK_THROWS(evaluate_depth({0.0}, {1.0}));          // non-positive pred
  CHECK_THROWS(evaluate_depth({1.0, 2.0}, {1.0}));     // size mismatch
}
