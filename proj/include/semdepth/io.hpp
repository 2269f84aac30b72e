#pragma once

// File formats: "FSRE" tensor checkpoints, binary PPM (P6) images, PFM depth
// maps, dataset manifests and plain-text key=value configs.

#include <map>
#include <set>
#include <string>
#include <vector>

#include "semdepth/synth.hpp"

namespace semdepth {

struct NamedTensor {
  std::string name;
  std::vector<int> shape;
  std::vector<float> data;
};

// Checkpoint format: magic "FSRE", u32 version, u32 entry count, then per
// entry: u32 name length, name bytes, u32 rank, u32 extents, little-endian
// f32 payload. Round-trips bit-identically.
void save_tensors(const std::string& path,
                  const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> load_tensors(const std::string& path);

// rgb is (3,H,W) in [0,1].
void write_ppm(const std::string& path, const std::vector<float>& rgb,
               int height, int width);
std::vector<float> read_ppm(const std::string& path, int& height, int& width);

// Grayscale PFM, little-endian.
void write_pfm(const std::string& path, const std::vector<float>& values,
               int height, int width);

// One sample per manifest line: frame paths, ground-truth tensor path,
// intrinsics (fx fy cx cy) and the two relative poses (6 values each).
void write_dataset(const std::string& dir,
                   const std::vector<SceneSample>& samples);
std::vector<SceneSample> load_dataset(const std::string& dir);

// key=value configuration; '#' starts a comment. Every key must be consumed
// by a typed getter; leftovers are an error.
class Config {
 public:
  Config() = default;
  static Config from_file(const std::string& path);
  static Config from_string(const std::string& text);

  bool has(const std::string& key) const { return values_.count(key) > 0; }
  std::string get_string(const std::string& key, const std::string& fallback);
  double get_double(const std::string& key, double fallback);
  int get_int(const std::string& key, int fallback);
  bool get_bool(const std::string& key, bool fallback);
  std::vector<int> get_int_list(const std::string& key,
                                std::vector<int> fallback);

  // Throws if any key was never consumed (catches typos in config files).
  void check_all_consumed() const;

 private:
  std::map<std::string, std::string> values_;
  std::set<std::string> consumed_;
};

}  // namespace semdepth
