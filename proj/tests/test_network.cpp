#include <doctest.h>

#include <cmath>
#include <random>

#include "semdepth/network.hpp"

using namespace semdepth;

namespace {

BackboneConfig small_cfg(int h = 32, int w = 48) {
  BackboneConfig cfg;
  cfg.height = h;
  cfg.width = w;
  cfg.enc_channels = {3, 4, 5, 6};
  cfg.num_classes = 4;
  return cfg;
}

TensorF rand_image(std::mt19937& rng, int H, int W) {
  std::uniform_real_distribution<float> d(0, 1);
  std::vector<float> v(static_cast<std::size_t>(3) * H * W);
  for (auto& x : v) x = d(rng);
  return TensorF::from({1, 3, H, W}, v);
}

}  // namespace

TEST_CASE("encoder pyramid halves resolution per stage") {
  auto cfg = small_cfg(64, 192);
  Network<float> net(cfg, 1);
  std::mt19937 rng(2);
  auto pyr = net.encode(rand_image(rng, 64, 192));
  REQUIRE(pyr.size() == 5);
  const int hs[5] = {64, 32, 16, 8, 4};
  const int ws[5] = {192, 96, 48, 24, 12};
  const int cs[5] = {3, 4, 5, 6, 6};
  for (int i = 0; i < 5; ++i)
    CHECK(pyr[i].shape() == Shape{1, cs[i], hs[i], ws[i]});
}

TEST_CASE("identical inputs give identical pyramids") {
  Network<float> net(small_cfg(), 3);
  std::mt19937 rng(4);
  auto img = rand_image(rng, 32, 48);
  auto a = net.encode(img);
  auto b = net.encode(img);
  for (std::size_t i = 0; i < a.size(); ++i)
    CHECK(a[i].value() == b[i].value());
}

TEST_CASE("all-zero image produces finite outputs") {
  Network<float> net(small_cfg(), 5);
  auto out = net.forward(TensorF::zeros({1, 3, 32, 48}));
  for (float v : out.disparity.value()) CHECK(std::isfinite(v));
  for (float v : out.logits.value()) CHECK(std::isfinite(v));
}

TEST_CASE("disparity stays inside the configured inverse-depth bounds") {
  auto cfg = small_cfg();
  cfg.min_depth = 0.1;
  cfg.max_depth = 100.0;
  Network<float> net(cfg, 6);
  std::mt19937 rng(7);
  auto out = net.forward(rand_image(rng, 32, 48));
  CHECK(out.disparity.shape() == Shape{1, 1, 32, 48});
  for (float v : out.disparity.value()) {
    CHECK(v >= 0.01f);
    CHECK(v <= 10.0f);
  }
}

TEST_CASE("logits shape follows the class count") {
  Network<float> net(small_cfg(), 8);
  std::mt19937 rng(9);
  auto out = net.forward(rand_image(rng, 32, 48));
  CHECK(out.logits.shape() == Shape{1, 4, 32, 48});
}

TEST_CASE("without CMA the decoders are independent") {
  auto cfg = small_cfg();
  REQUIRE_FALSE(cfg.cma_enabled);
  std::mt19937 rng(10);
  auto img = rand_image(rng, 32, 48);

  Network<float> net(cfg, 11);
  auto disp_before = net.forward(img).disparity.value();
  auto logits_before = net.forward(img).logits.value();
  for (auto& [name, p] : net.parameters()) {
    if (name.rfind("dec_s.", 0) == 0 || name.rfind("head_s.", 0) == 0)
      for (auto& v : p.value_mut()) v += 0.37f;
  }
  CHECK(net.forward(img).disparity.value() == disp_before);

  logits_before = net.forward(img).logits.value();  // after the seg edits
  for (auto& [name, p] : net.parameters()) {
    if (name.rfind("dec_d.", 0) == 0 || name.rfind("head_d.", 0) == 0)
      for (auto& v : p.value_mut()) v += 0.21f;
  }
  CHECK(net.forward(img).logits.value() == logits_before);
}

TEST_CASE("pose head returns six finite values") {
  Network<float> net(small_cfg(), 12);
  std::mt19937 rng(13);
  auto a = rand_image(rng, 32, 48);
  auto b = rand_image(rng, 32, 48);
  auto p = net.predict_pose(a, b);
  CHECK(p.shape() == Shape{6});
  for (float v : p.value()) CHECK(std::isfinite(v));
  // raw outputs are scaled down, so initial poses are small
  for (float v : p.value()) CHECK(std::abs(v) < 1.0f);
  // swapped order is simply another prediction; nothing is asserted beyond
  // it being well-formed
  auto q = net.predict_pose(b, a);
  CHECK(q.shape() == Shape{6});
}

TEST_CASE("parameter list is stable and complete") {
  auto cfg = small_cfg();
  cfg.cma_enabled = true;
  cfg.cma.heads = 2;
  cfg.cma.layers = {1};
  Network<float> a(cfg, 14), b(cfg, 14);
  auto pa = a.parameters();
  auto pb = b.parameters();
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    CHECK(pa[i].first == pb[i].first);
    CHECK(pa[i].second.value() == pb[i].second.value());
  }
}

TEST_CASE("depth-only decode matches the joint forward when CMA is off") {
  Network<float> net(small_cfg(), 15);
  std::mt19937 rng(16);
  auto img = rand_image(rng, 32, 48);
  auto joint = net.forward(img).disparity.value();
  auto solo = net.decode_depth(net.encode(img)).value();
  REQUIRE(joint.size() == solo.size());
  for (std::size_t i = 0; i < joint.size(); ++i)
    CHECK(joint[i] == doctest::Approx(solo[i]).epsilon(1e-6));
}
