#pragma once

// Procedural driving-like scenes with exact ground-truth depth, semantics,
// intrinsics and inter-frame poses. Z-buffered ray/quad intersection per
// pixel; textures are smooth procedural patterns so every surface carries
// photometric gradient.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "semdepth/geometry.hpp"

namespace semdepth {

// Semantic classes of the synthetic world.
enum SynthClass : int {
  kRoad = 0,
  kBuilding = 1,
  kCar = 2,
  kVegetation = 3,
  kSky = 4,
  kPole = 5,
  kNumSynthClasses = 6
};

struct SceneSpec {
  unsigned seed = 1;
  int object_count = 8;
  int height = 64, width = 192;
  double min_object_depth = 4.0, max_object_depth = 30.0;
  double forward_step = 0.4;   // camera translation per frame (scene units)
  double rotation_jitter = 0.01;  // radians, per-frame random rotation
  double texture_frequency = 1.0;
  bool textureless = false;    // constant-color surfaces (degenerate case)
};

// A textured quad: p0 + a*e1 + b*e2, (a,b) in [0,1]^2, in world coordinates.
struct Quad {
  std::array<double, 3> p0, e1, e2;
  int class_id = 0;
  std::array<double, 3> base_color{0.5, 0.5, 0.5};
  double freq_a = 1, freq_b = 1, phase = 0;
};

struct Scene {
  std::vector<Quad> quads;
  double sky_depth = 90.0;
  bool textureless = false;
  std::array<double, 3> sky_color{0.55, 0.65, 0.8};
};

struct RenderedFrame {
  std::vector<float> rgb;       // (3,H,W), values in [0,1]
  std::vector<float> depth;     // (H,W), scene units, > 0
  std::vector<int> semantics;   // (H,W)
};

// Frame triplet with exact ground truth for the center frame.
struct SceneSample {
  int height = 0, width = 0;
  std::array<std::vector<float>, 3> frames;  // t-1, t, t+1; (3,H,W) each
  std::vector<float> gt_depth;               // of frame t
  std::vector<int> gt_semantics;             // of frame t
  PoseSE3 pose_prev;                         // T_{t -> t-1}
  PoseSE3 pose_next;                         // T_{t -> t+1}
  CameraIntrinsics intrinsics;
};

Scene generate_scene(const SceneSpec& spec);

// cam_to_world maps camera coordinates to world coordinates.
RenderedFrame render_frame(const Scene& scene, const PoseSE3& cam_to_world,
                           const CameraIntrinsics& K, int height, int width);

SceneSample make_scene_sample(const SceneSpec& spec);

// Pseudo-label noise: boundary jitter by up to `jitter` px plus isolated
// random class flips at `flip_rate`.
std::vector<int> corrupt_labels(const std::vector<int>& semantics, int height,
                                int width, int jitter, double flip_rate,
                                int num_classes, unsigned seed);

// Pixels of I_t that are visible (not occluded) in the frame reached by
// `pose` (T_{t -> other}); test use only.
std::vector<std::uint8_t> occlusion_free_mask(const SceneSample& sample,
                                              const PoseSE3& pose,
                                              const std::vector<float>& other_depth,
                                              double tolerance = 0.25);

PoseSE3 pose_from_matrix(const Mat4& m);

class Config;

// Scene generation settings from a key=value file; `count` is the number of
// samples to generate. Rejects unknown keys.
SceneSpec parse_scene_spec(Config& cfg, int& count);

}  // namespace semdepth
