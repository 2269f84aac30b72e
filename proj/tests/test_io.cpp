#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

#include "semdepth/io.hpp"
#include "semdepth/synth.hpp"

using namespace semdepth;
namespace fs = std::filesystem;

namespace {
struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("semdepth_test_" + std::to_string(std::random_device{}()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::string read_bytes(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(f), {});
}
}  // namespace

TEST_CASE("tensor files round-trip bit-identically") {
  TempDir dir;
  const auto p1 = (dir.path / "a.fsre").string();
  const auto p2 = (dir.path / "b.fsre").string();
  std::vector<NamedTensor> ts = {
      {"w", {2, 3}, {1.f, -2.f, 3.5f, 0.25f, 1e-8f, 9.f}},
      {"b", {1}, {0.125f}}};
  save_tensors(p1, ts);
  auto back = load_tensors(p1);
  REQUIRE(back.size() == 2);
  CHECK(back[0].name == "w");
  CHECK(back[0].shape == std::vector<int>{2, 3});
  CHECK(back[0].data == ts[0].data);
  CHECK(back[1].data == ts[1].data);
  save_tensors(p2, back);
  CHECK(read_bytes(p1) == read_bytes(p2));
}

TEST_CASE("empty tensor list is a valid file") {
  TempDir dir;
  const auto p = (dir.path / "empty.fsre").string();
  save_tensors(p, {});
  CHECK(load_tensors(p).empty());
}

TEST_CASE("truncated tensor file raises an explicit error") {
  TempDir dir;
  const auto p = (dir.path / "t.fsre").string();
  save_tensors(p, {{"w", {4}, {1, 2, 3, 4}}});
  auto bytes = read_bytes(p);
  std::ofstream(p, std::ios::binary)
      << bytes.substr(0, bytes.size() / 2);
  CHECK_THROWS(load_tensors(p));
}

TEST_CASE("bad magic is rejected") {
  TempDir dir;
  const auto p = (dir.path / "m.fsre").string();
  std::ofstream(p, std::ios::binary) << "NOPE" << std::string(16, '\0');
  CHECK_THROWS(load_tensors(p));
}

TEST_CASE("ppm images round-trip") {
  TempDir dir;
  const auto p = (dir.path / "img.ppm").string();
  const int H = 3, W = 5;
  std::vector<float> rgb(3 * H * W);
  for (std::size_t i = 0; i < rgb.size(); ++i)
    rgb[i] = static_cast<float>(i) / rgb.size();
  write_ppm(p, rgb, H, W);
  int h = 0, w = 0;
  auto back = read_ppm(p, h, w);
  REQUIRE(h == H);
  REQUIRE(w == W);
  // 8-bit quantization bound
  for (std::size_t i = 0; i < rgb.size(); ++i)
    CHECK(std::abs(back[i] - rgb[i]) <= 0.5f / 255.f + 1e-6f);
}

TEST_CASE("pfm header is well-formed") {
  TempDir dir;
  const auto p = (dir.path / "d.pfm").string();
  write_pfm(p, {1.f, 2.f, 3.f, 4.f, 5.f, 6.f}, 2, 3);
  std::ifstream f(p, std::ios::binary);
  std::string kind, dims, scale;
  std::getline(f, kind);
  std::getline(f, dims);
  std::getline(f, scale);
  CHECK(kind == "Pf");
  CHECK(dims == "3 2");
  CHECK(std::stod(scale) < 0);  // little-endian marker
}

TEST_CASE("datasets round-trip through the on-disk layout") {
  TempDir dir;
  SceneSpec spec;
  spec.height = 32;
  spec.width = 64;
  spec.seed = 5;
  std::vector<SceneSample> samples = {make_scene_sample(spec)};
  write_dataset(dir.path.string(), samples);
  auto back = load_dataset(dir.path.string());
  REQUIRE(back.size() == 1);
  CHECK(back[0].height == 32);
  CHECK(back[0].width == 64);
  CHECK(back[0].gt_depth == samples[0].gt_depth);
  CHECK(back[0].gt_semantics == samples[0].gt_semantics);
  for (int i = 0; i < 3; ++i) {
    CHECK(std::abs(back[0].intrinsics.fx - samples[0].intrinsics.fx) < 1e-9);
    CHECK(std::abs(back[0].pose_next.translation[i] -
                   samples[0].pose_next.translation[i]) < 1e-9);
    CHECK(std::abs(back[0].pose_prev.axis_angle[i] -
                   samples[0].pose_prev.axis_angle[i]) < 1e-9);
  }
  // frames go through 8-bit PPM quantization
  for (int f = 0; f < 3; ++f)
    for (std::size_t i = 0; i < samples[0].frames[f].size(); ++i)
      CHECK(std::abs(back[0].frames[f][i] - samples[0].frames[f][i]) <=
            0.5f / 255.f + 1e-6f);
}

TEST_CASE("config files parse key=value with comments") {
  auto cfg = Config::from_string("# comment\nalpha = 0.5\nname=run1\n"
                                 "flags=1,2,3\nfast=true\n");
  CHECK(cfg.get_double("alpha", 0) == doctest::Approx(0.5));
  CHECK(cfg.get_string("name", "") == "run1");
  CHECK(cfg.get_int_list("flags", {}) == std::vector<int>{1, 2, 3});
  CHECK(cfg.get_bool("fast", false));
  CHECK_NOTHROW(cfg.check_all_consumed());
}

TEST_CASE("unknown config keys are an error") {
  auto cfg = Config::from_string("alpha=0.5\ntypo_key=1\n");
  CHECK(cfg.get_double("alpha", 0) == doctest::Approx(0.5));
  CHECK_THROWS(cfg.check_all_consumed());
}

TEST_CASE("duplicate config keys are an error") {
  CHECK_THROWS(Config::from_string("a=1\na=2\n"));
}
