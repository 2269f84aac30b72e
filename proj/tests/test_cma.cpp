#include <doctest.h>

#include <cmath>
#include <random>

#include "semdepth/cma.hpp"
#include "semdepth/network.hpp"

using namespace semdepth;

namespace {

HeadEmbeddings<double> make_emb(unsigned seed, int C, int heads) {
  CmaConfig cfg;
  cfg.heads = heads;
  std::mt19937 rng(seed);
  return HeadEmbeddings<double>::init(C, cfg, rng);
}

TensorD rand_map(std::mt19937& rng, int C, int H, int W) {
  std::uniform_real_distribution<double> d(-1, 1);
  std::vector<double> v(static_cast<std::size_t>(C) * H * W);
  for (auto& x : v) x = d(rng);
  return TensorD::from({1, C, H, W}, v);
}

void set_const(TensorD& t, double v) {
  for (auto& x : t.value_mut()) x = v;
}

}  // namespace

TEST_CASE("constant key and query of ones score C'/sqrt(C')") {
  auto emb = make_emb(1, 2, 1);  // C'=4
  // zero both projections, drive outputs purely by bias = 1
  for (auto* w : {&emb.wk[0], &emb.wq[0]}) set_const(*w, 0.0);
  for (auto* b : {&emb.bk[0], &emb.bq[0]}) set_const(*b, 1.0);
  std::mt19937 rng(2);
  auto fd = rand_map(rng, 2, 2, 3);
  auto fs = rand_map(rng, 2, 2, 3);
  auto scores = attention_scores(fd, fs, emb);
  REQUIRE(scores.size() == 1);
  for (double v : scores[0].value())
    CHECK(v == doctest::Approx(4.0 / std::sqrt(4.0)));
}

TEST_CASE("orthogonal key and query score zero") {
  auto emb = make_emb(3, 2, 1);
  for (auto* w : {&emb.wk[0], &emb.wq[0]}) set_const(*w, 0.0);
  emb.bk[0].value_mut() = {1, 0, 0, 0};
  emb.bq[0].value_mut() = {0, 1, 0, 0};
  std::mt19937 rng(4);
  auto fd = rand_map(rng, 2, 2, 3);
  auto fs = rand_map(rng, 2, 2, 3);
  auto s0 = attention_scores(fd, fs, emb)[0];
  for (double v : s0.value())
    CHECK(v == doctest::Approx(0.0));
}

TEST_CASE("equal scores across 4 heads normalize to 0.25 each") {
  std::vector<TensorD> scores(4, TensorD::filled({1, 1, 2, 2}, 0.7));
  auto w = normalize_scores(scores);
  CHECK(w.shape() == Shape{1, 4, 2, 2});
  for (double v : w.value()) CHECK(v == doctest::Approx(0.25));
}

TEST_CASE("single-head normalization is the identity") {
  auto s = TensorD::from({1, 1, 1, 2}, {0.3, -2.0});
  auto w = normalize_scores(std::vector<TensorD>{s});
  CHECK(w.value()[0] == doctest::Approx(0.3));
  CHECK(w.value()[1] == doctest::Approx(-2.0));
}

TEST_CASE("softmax of (ln 1, ln 3) is (0.25, 0.75)") {
  auto w = normalize_scores(std::vector<TensorD>{
      TensorD::filled({1, 1, 1, 1}, std::log(1.0)),
      TensorD::filled({1, 1, 1, 1}, std::log(3.0))});
  CHECK(w.value()[0] == doctest::Approx(0.25));
  CHECK(w.value()[1] == doctest::Approx(0.75));
}

TEST_CASE("single-head refinement is score times value exactly") {
  auto emb = make_emb(5, 2, 1);
  std::mt19937 rng(6);
  auto fd = rand_map(rng, 2, 3, 4);
  auto fs = rand_map(rng, 2, 3, 4);
  auto score = attention_scores(fd, fs, emb)[0];
  auto value = conv2d(fd, emb.wv[0], emb.bv[0]);
  auto want = (score * value).value();
  auto got = refine_features(fd, fs, emb).value();
  for (std::size_t i = 0; i < want.size(); ++i)
    CHECK(got[i] == doctest::Approx(want[i]));
}

TEST_CASE("all-zero reference gives the mean over head values") {
  const int H = 4;
  auto emb = make_emb(7, 2, H);  // bq is zero-initialized
  std::mt19937 rng(8);
  auto fd = rand_map(rng, 2, 2, 3);
  auto fs = TensorD::zeros({1, 2, 2, 3});
  TensorD mean_v;
  for (int h = 0; h < H; ++h) {
    auto v = conv2d(fd, emb.wv[h], emb.bv[h]);
    mean_v = h == 0 ? v : mean_v + v;
  }
  auto want = (mean_v / double(H)).value();
  auto got = refine_features(fd, fs, emb).value();
  for (std::size_t i = 0; i < want.size(); ++i)
    CHECK(got[i] == doctest::Approx(want[i]));
}

TEST_CASE("head permutation leaves the refined features unchanged") {
  auto emb = make_emb(9, 3, 4);
  std::mt19937 rng(10);
  auto fd = rand_map(rng, 3, 3, 4);
  auto fs = rand_map(rng, 3, 3, 4);
  auto base = refine_features(fd, fs, emb).value();
  // rotate the heads by one
  auto rot = emb;
  for (auto* v : {&rot.wq, &rot.bq, &rot.wk, &rot.bk, &rot.wv, &rot.bv})
    std::rotate(v->begin(), v->begin() + 1, v->end());
  auto perm = refine_features(fd, fs, rot).value();
  for (std::size_t i = 0; i < base.size(); ++i) CHECK(perm[i] == base[i]);
}

TEST_CASE("fusion keeps the spatial and channel shape") {
  auto emb = make_emb(11, 3, 2);
  std::mt19937 rng(12);
  auto fd = rand_map(rng, 3, 4, 5);
  auto fs = rand_map(rng, 3, 4, 5);
  auto out = cma_apply(fd, fs, emb);
  CHECK(out.shape() == Shape{1, 3, 4, 5});
}

TEST_CASE("zeroed fusion convolutions output exactly zero") {
  auto emb = make_emb(13, 2, 2);
  set_const(emb.fuse2_w, 0.0);
  set_const(emb.fuse2_b, 0.0);
  std::mt19937 rng(14);
  auto fd = rand_map(rng, 2, 3, 3);
  auto fs = rand_map(rng, 2, 3, 3);
  auto out = cma_apply(fd, fs, emb);
  for (double v : out.value()) CHECK(v == 0.0);
}

TEST_CASE("bidirectional CMA is symmetric under argument swap") {
  auto emb_d = make_emb(15, 2, 2);
  auto emb_s = make_emb(16, 2, 2);
  std::mt19937 rng(17);
  auto fd = rand_map(rng, 2, 3, 4);
  auto fs = rand_map(rng, 2, 3, 4);
  auto [od, os] = cma_bidirectional(fd, fs, emb_d, emb_s);
  auto [os2, od2] = cma_bidirectional(fs, fd, emb_s, emb_d);
  CHECK(od.value() == od2.value());
  CHECK(os.value() == os2.value());
}

TEST_CASE("zeroed query path makes the output independent of the reference") {
  auto emb = make_emb(18, 2, 2);
  for (auto& w : emb.wq) set_const(w, 0.0);
  for (auto& b : emb.bq) set_const(b, 0.0);
  std::mt19937 rng(19);
  auto fd = rand_map(rng, 2, 3, 3);
  auto fs1 = rand_map(rng, 2, 3, 3);
  auto fs2 = rand_map(rng, 2, 3, 3);
  CHECK(cma_apply(fd, fs1, emb).value() == cma_apply(fd, fs2, emb).value());
}

TEST_CASE("segmentation loss reaches depth-decoder weights through CMA") {
  BackboneConfig cfg;
  cfg.height = 16;
  cfg.width = 16;
  cfg.enc_channels = {2, 2, 2, 2};
  cfg.num_classes = 3;
  cfg.cma_enabled = true;
  cfg.cma.heads = 2;
  cfg.cma.layers = {1, 2};
  Network<double> net(cfg, 21);
  std::mt19937 rng(22);
  auto img = rand_map(rng, 3, 16, 16);
  auto out = net.forward(img);
  backward(sum(out.logits * out.logits));
  double norm_with = 0;
  for (const auto& [name, p] : net.parameters())
    if (name.rfind("dec_d.", 0) == 0)
      for (double g : p.grad()) norm_with += g * g;
  CHECK(norm_with > 0.0);

  // without CMA the same loss must NOT reach the depth decoder
  cfg.cma_enabled = false;
  Network<double> plain(cfg, 21);
  auto out2 = plain.forward(img);
  backward(sum(out2.logits * out2.logits));
  double norm_without = 0;
  for (const auto& [name, p] : plain.parameters())
    if (name.rfind("dec_d.", 0) == 0)
      for (double g : p.grad()) norm_without += g * g;
  CHECK(norm_without == 0.0);
}
