#include "semdepth/synth.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

#include "semdepth/io.hpp"

namespace semdepth {

namespace {

constexpr double kPi = 3.14159265358979323846;

using Vec3 = std::array<double, 3>;

Vec3 add(const Vec3& a, const Vec3& b) {
  return {a[0] + b[0], a[1] + b[1], a[2] + b[2]};
}
Vec3 sub(const Vec3& a, const Vec3& b) {
  return {a[0] - b[0], a[1] - b[1], a[2] - b[2]};
}
Vec3 scale(const Vec3& a, double s) { return {a[0] * s, a[1] * s, a[2] * s}; }
Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2],
          a[0] * b[1] - a[1] * b[0]};
}
double dot(const Vec3& a, const Vec3& b) {
  return a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
}

Vec3 transform_point(const Mat4& m, const Vec3& p) {
  Vec3 r;
  for (int i = 0; i < 3; ++i)
    r[i] = m[i * 4 + 0] * p[0] + m[i * 4 + 1] * p[1] + m[i * 4 + 2] * p[2] +
           m[i * 4 + 3];
  return r;
}

Vec3 transform_dir(const Mat4& m, const Vec3& d) {
  Vec3 r;
  for (int i = 0; i < 3; ++i)
    r[i] = m[i * 4 + 0] * d[0] + m[i * 4 + 1] * d[1] + m[i * 4 + 2] * d[2];
  return r;
}

Mat4 invert_rigid(const Mat4& m) {
  Mat4 r = mat4_identity();
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) r[i * 4 + j] = m[j * 4 + i];
  for (int i = 0; i < 3; ++i) {
    r[i * 4 + 3] = -(r[i * 4 + 0] * m[3] + r[i * 4 + 1] * m[7] +
                     r[i * 4 + 2] * m[11]);
  }
  return r;
}

// Ray (origin 0, direction d, in quad-local frame already) vs quad. Returns
// the ray parameter t or a negative value on miss. (a, b) receive the quad
// coordinates of the hit.
double intersect_quad(const Vec3& origin, const Vec3& dir, const Quad& q,
                      double& a, double& b) {
  const Vec3 n = cross(q.e1, q.e2);
  const double denom = dot(n, dir);
  if (std::abs(denom) < 1e-12) return -1;
  const double t = dot(n, sub(q.p0, origin)) / denom;
  if (t <= 1e-6) return -1;
  const Vec3 hit = sub(add(origin, scale(dir, t)), q.p0);
  // Decompose hit = a*e1 + b*e2 via the Gram system.
  const double e11 = dot(q.e1, q.e1), e22 = dot(q.e2, q.e2),
               e12 = dot(q.e1, q.e2);
  const double det = e11 * e22 - e12 * e12;
  if (std::abs(det) < 1e-12) return -1;
  const double h1 = dot(hit, q.e1), h2 = dot(hit, q.e2);
  a = (e22 * h1 - e12 * h2) / det;
  b = (e11 * h2 - e12 * h1) / det;
  if (a < 0 || a > 1 || b < 0 || b > 1) return -1;
  return t;
}

std::array<double, 3> shade(const Quad& q, double a, double b,
                            bool textureless) {
  if (textureless) return q.base_color;
  const double wave =
      0.5 * std::sin(2 * kPi * (q.freq_a * a + q.phase)) *
      std::sin(2 * kPi * (q.freq_b * b + 0.5 * q.phase));
  const double m = 0.78 + 0.22 * wave;
  std::array<double, 3> c;
  for (int i = 0; i < 3; ++i) c[i] = std::clamp(q.base_color[i] * m, 0.0, 1.0);
  return c;
}

std::array<double, 3> class_color(int cls, std::mt19937& rng) {
  std::uniform_real_distribution<double> jit(-0.08, 0.08);
  std::array<double, 3> base;
  switch (cls) {
    case kRoad: base = {0.35, 0.35, 0.38}; break;
    case kBuilding: base = {0.62, 0.5, 0.42}; break;
    case kCar: base = {0.7, 0.25, 0.25}; break;
    case kVegetation: base = {0.25, 0.55, 0.28}; break;
    case kPole: base = {0.75, 0.72, 0.3}; break;
    default: base = {0.55, 0.65, 0.8}; break;
  }
  for (auto& v : base) v = std::clamp(v + jit(rng), 0.05, 0.95);
  return base;
}

}  // namespace

PoseSE3 pose_from_matrix(const Mat4& m) {
  PoseSE3 p;
  p.translation = {m[3], m[7], m[11]};
  const double tr = m[0] + m[5] + m[10];
  const double c = std::clamp((tr - 1.0) / 2.0, -1.0, 1.0);
  const double theta = std::acos(c);
  const Vec3 skew = {m[9] - m[6], m[2] - m[8], m[4] - m[1]};
  if (theta < 1e-7) {
    p.axis_angle = scale(skew, 0.5);
  } else {
    p.axis_angle = scale(skew, theta / (2.0 * std::sin(theta)));
  }
  return p;
}

Scene generate_scene(const SceneSpec& spec) {
  if (spec.object_count < 0 || spec.height < 16 || spec.width < 16)
    throw std::invalid_argument("scene spec: bad object count or resolution");
  std::mt19937 rng(spec.seed);
  Scene scene;
  scene.textureless = spec.textureless;

  // Ground plane (y points down in camera coordinates; camera is 1.5 units
  // above the road).
  Quad ground;
  ground.p0 = {-40.0, 1.5, 1.0};
  ground.e1 = {80.0, 0.0, 0.0};
  ground.e2 = {0.0, 0.0, 110.0};
  ground.class_id = kRoad;
  ground.base_color = class_color(kRoad, rng);
  ground.freq_a = 14 * spec.texture_frequency;
  ground.freq_b = 26 * spec.texture_frequency;
  ground.phase = 0.21;
  scene.quads.push_back(ground);

  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::uniform_real_distribution<double> ux(-10.0, 10.0);
  std::uniform_real_distribution<double> uz(spec.min_object_depth,
                                            spec.max_object_depth);
  const int classes[4] = {kBuilding, kCar, kVegetation, kPole};
  for (int i = 0; i < spec.object_count; ++i) {
    Quad q;
    q.class_id = classes[i % 4];
    const double z = uz(rng);
    double w, h;
    switch (q.class_id) {
      case kBuilding: w = 5 + 6 * u01(rng); h = 5 + 4 * u01(rng); break;
      case kCar: w = 2 + 1.5 * u01(rng); h = 1.3 + 0.4 * u01(rng); break;
      case kVegetation: w = 2 + 2 * u01(rng); h = 2.5 + 2 * u01(rng); break;
      default: w = 0.5 + 0.4 * u01(rng); h = 4 + 2 * u01(rng); break;
    }
    const double x = ux(rng) * (0.3 + z / 18.0);
    const double ybase = 1.5;  // standing on the road
    q.p0 = {x - w / 2, ybase - h, z};
    // Some quads oblique (rotated about the vertical axis).
    const double ang = u01(rng) < 0.5 ? 0.0 : (u01(rng) - 0.5) * 1.2;
    q.e1 = {w * std::cos(ang), 0.0, w * std::sin(ang)};
    q.e2 = {0.0, h, 0.0};
    q.base_color = class_color(q.class_id, rng);
    q.freq_a = (1.0 + 2.0 * u01(rng)) * spec.texture_frequency;
    q.freq_b = (1.0 + 2.0 * u01(rng)) * spec.texture_frequency;
    q.phase = u01(rng);
    scene.quads.push_back(q);
  }
  return scene;
}

RenderedFrame render_frame(const Scene& scene, const PoseSE3& cam_to_world,
                           const CameraIntrinsics& K, int height, int width) {
  K.validate();
  RenderedFrame out;
  out.rgb.assign(static_cast<std::size_t>(3) * height * width, 0.f);
  out.depth.assign(static_cast<std::size_t>(height) * width, 0.f);
  out.semantics.assign(static_cast<std::size_t>(height) * width, kSky);

  // Move the quads into the camera frame once; rays are then (xn, yn, 1) from
  // the origin and the ray parameter equals the camera-frame depth.
  const Mat4 w2c = invert_rigid(cam_to_world.to_matrix());
  std::vector<Quad> local = scene.quads;
  for (auto& q : local) {
    q.p0 = transform_point(w2c, q.p0);
    q.e1 = transform_dir(w2c, q.e1);
    q.e2 = transform_dir(w2c, q.e2);
  }

  const std::size_t hw = static_cast<std::size_t>(height) * width;
#pragma omp parallel for schedule(static)
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const Vec3 dir = {(x - K.cx) / K.fx, (y - K.cy) / K.fy, 1.0};
      double best_t = scene.sky_depth;
      std::array<double, 3> color = scene.sky_color;
      int cls = kSky;
      if (!scene.textureless) {
        const double g = 0.06 * std::sin(2 * kPi * (0.9 * dir[0] + 0.35)) *
                         std::cos(2 * kPi * (0.8 * dir[1]));
        for (auto& c : color) c = std::clamp(c + g, 0.0, 1.0);
      }
      for (const auto& q : local) {
        double a, b;
        const double t = intersect_quad({0, 0, 0}, dir, q, a, b);
        if (t > 0 && t < best_t) {
          best_t = t;
          color = shade(q, a, b, scene.textureless);
          cls = q.class_id;
        }
      }
      const std::size_t k = static_cast<std::size_t>(y) * width + x;
      out.depth[k] = static_cast<float>(best_t);
      out.semantics[k] = cls;
      for (int c = 0; c < 3; ++c)
        out.rgb[c * hw + k] = static_cast<float>(color[c]);
    }
  }
  return out;
}

SceneSample make_scene_sample(const SceneSpec& spec) {
  Scene scene = generate_scene(spec);
  std::mt19937 rng(spec.seed ^ 0x9e3779b9u);
  std::uniform_real_distribution<double> jit(-spec.rotation_jitter,
                                             spec.rotation_jitter);
  std::uniform_real_distribution<double> lat(-0.15, 0.15);

  CameraIntrinsics K;
  K.fx = K.fy = 0.55 * spec.width;
  K.cx = spec.width / 2.0 - 0.5;
  K.cy = spec.height / 2.0 - 0.5;

  // Camera advances along +z with small per-frame rotation and lateral drift.
  std::array<PoseSE3, 3> cam;
  for (int f = 0; f < 3; ++f) {
    cam[f].axis_angle = {jit(rng), jit(rng), jit(rng) * 0.3};
    cam[f].translation = {f == 1 ? 0.0 : lat(rng), 0.0,
                          (f - 1) * spec.forward_step};
  }
  cam[1].axis_angle = {0, 0, 0};  // frame t is the reference
  cam[1].translation = {0, 0, 0};

  SceneSample s;
  s.height = spec.height;
  s.width = spec.width;
  s.intrinsics = K;
  for (int f = 0; f < 3; ++f) {
    RenderedFrame r = render_frame(scene, cam[f], K, spec.height, spec.width);
    s.frames[f] = std::move(r.rgb);
    if (f == 1) {
      s.gt_depth = std::move(r.depth);
      s.gt_semantics = std::move(r.semantics);
    }
  }
  // T_{t -> other} maps camera-t coordinates into the other camera's frame.
  s.pose_prev = pose_from_matrix(
      mat4_mul(invert_rigid(cam[0].to_matrix()), cam[1].to_matrix()));
  s.pose_next = pose_from_matrix(
      mat4_mul(invert_rigid(cam[2].to_matrix()), cam[1].to_matrix()));
  return s;
}

std::vector<int> corrupt_labels(const std::vector<int>& semantics, int height,
                                int width, int jitter, double flip_rate,
                                int num_classes, unsigned seed) {
  if (jitter < 0 || flip_rate < 0 || flip_rate >= 1)
    throw std::invalid_argument("corrupt_labels: bad jitter or flip rate");
  std::vector<int> out(semantics.size());
  std::mt19937 rng(seed);
  std::uniform_int_distribution<int> dj(-jitter, jitter);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::uniform_int_distribution<int> dc(0, num_classes - 1);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      int sy = y, sx = x;
      if (jitter > 0) {
        sy = std::clamp(y + dj(rng), 0, height - 1);
        sx = std::clamp(x + dj(rng), 0, width - 1);
      }
      out[y * width + x] = semantics[sy * width + sx];
    }
  if (flip_rate > 0)
    for (auto& v : out)
      if (u01(rng) < flip_rate) v = dc(rng);
  return out;
}

std::vector<std::uint8_t> occlusion_free_mask(
    const SceneSample& sample, const PoseSE3& pose,
    const std::vector<float>& other_depth, double tolerance) {
  const int H = sample.height, W = sample.width;
  const Mat4 T = pose.to_matrix();
  const CameraIntrinsics& K = sample.intrinsics;
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(H) * W, 0);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      const std::size_t k = static_cast<std::size_t>(y) * W + x;
      const double z = sample.gt_depth[k];
      const Vec3 p = {(x - K.cx) / K.fx * z, (y - K.cy) / K.fy * z, z};
      const Vec3 q = transform_point(T, p);
      if (q[2] <= 1e-6) continue;
      const double u = K.fx * q[0] / q[2] + K.cx;
      const double v = K.fy * q[1] / q[2] + K.cy;
      const int ui = static_cast<int>(std::lround(u));
      const int vi = static_cast<int>(std::lround(v));
      if (ui < 1 || ui >= W - 1 || vi < 1 || vi >= H - 1) continue;
      const double seen = other_depth[static_cast<std::size_t>(vi) * W + ui];
      if (q[2] <= seen + tolerance) mask[k] = 1;
    }
  return mask;
}

SceneSpec parse_scene_spec(Config& cfg, int& count) {
  SceneSpec s;
  count = cfg.get_int("count", 200);
  s.seed = static_cast<unsigned>(cfg.get_int("seed", 1));
  s.object_count = cfg.get_int("object_count", s.object_count);
  s.height = cfg.get_int("height", s.height);
  s.width = cfg.get_int("width", s.width);
  s.min_object_depth = cfg.get_double("min_object_depth", s.min_object_depth);
  s.max_object_depth = cfg.get_double("max_object_depth", s.max_object_depth);
  s.forward_step = cfg.get_double("forward_step", s.forward_step);
  s.rotation_jitter = cfg.get_double("rotation_jitter", s.rotation_jitter);
  s.texture_frequency =
      cfg.get_double("texture_frequency", s.texture_frequency);
  s.textureless = cfg.get_bool("textureless", s.textureless);
  cfg.check_all_consumed();
  if (count < 1) throw std::invalid_argument("scene spec: count must be >= 1");
  return s;
}

}  // namespace semdepth
