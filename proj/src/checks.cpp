#include "semdepth/checks.hpp"

#include <cmath>
#include <cstdio>
#include <functional>
#include <random>

#include "semdepth/cma.hpp"
#include "semdepth/geometry.hpp"
#include "semdepth/losses.hpp"
#include "semdepth/metrics.hpp"
#include "semdepth/network.hpp"
#include "semdepth/sgt.hpp"
#include "semdepth/tensor.hpp"

namespace semdepth::checks {

namespace {

using semdepth::Tensor;
using TD = semdepth::TensorD;

std::vector<double> rand_vec(std::mt19937& rng, std::size_t n, double lo,
                             double hi) {
  std::uniform_real_distribution<double> d(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

std::vector<int> rand_labels(std::mt19937& rng, std::size_t n, int classes) {
  std::uniform_int_distribution<int> d(0, classes - 1);
  std::vector<int> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

// Runs `instance` with per-instance seeds and records the worst error.
CheckResult run(const std::string& name, double limit, int instances,
                const std::function<double(std::mt19937&)>& instance) {
  CheckResult r;
  r.name = name;
  r.limit = limit;
  for (int i = 0; i < instances; ++i) {
    std::mt19937 rng(1234u + 977u * static_cast<unsigned>(i));
    r.worst = std::max(r.worst, instance(rng));
  }
  r.passed = r.worst < limit;
  return r;
}

double gc(const std::function<TD(const TD&)>& f, const TD& x,
          double step = 1e-5) {
  return gradient_check<double>(f, x, step);
}

// ---------------------------------------------------------------------------
// independent scalar oracles (plain loops, no tensor library involvement)

double bilerp_ref(const std::vector<double>& img, int H, int W, double x,
                  double y) {
  x = std::min(std::max(x, 0.0), static_cast<double>(W - 1));
  y = std::min(std::max(y, 0.0), static_cast<double>(H - 1));
  int x0 = std::min(static_cast<int>(x), W - 2);
  int y0 = std::min(static_cast<int>(y), H - 2);
  const double fx = x - x0, fy = y - y0;
  return (1 - fy) * ((1 - fx) * img[y0 * W + x0] + fx * img[y0 * W + x0 + 1]) +
         fy * ((1 - fx) * img[(y0 + 1) * W + x0] +
               fx * img[(y0 + 1) * W + x0 + 1]);
}

struct AutomaskRef {
  double mean = 0;
  std::size_t included = 0;
};

AutomaskRef automask_ref(const std::vector<double>& l0,
                         const std::vector<double>& l1,
                         const std::vector<double>& i0,
                         const std::vector<double>& i1,
                         const std::vector<std::uint8_t>& v0,
                         const std::vector<std::uint8_t>& v1) {
  AutomaskRef r;
  double acc = 0;
  for (std::size_t k = 0; k < l0.size(); ++k) {
    const double big = 1e6;
    const double w = std::min(v0[k] ? l0[k] : big, v1[k] ? l1[k] : big);
    const double id = std::min(i0[k], i1[k]);
    if (w < id) {
      acc += w;
      ++r.included;
    }
  }
  if (r.included) r.mean = acc / r.included;
  return r;
}

double sgt_ref(const std::vector<double>& feat, int C, int H, int W,
               const std::vector<int>& labels, int K, int T, double margin,
               double eps) {
  // Normalize each pixel's channel vector.
  std::vector<double> fn(feat.size());
  for (int k = 0; k < H * W; ++k) {
    double n2 = 0;
    for (int c = 0; c < C; ++c) n2 += feat[c * H * W + k] * feat[c * H * W + k];
    const double inv = 1.0 / std::sqrt(n2 + eps);
    for (int c = 0; c < C; ++c) fn[c * H * W + k] = feat[c * H * W + k] * inv;
  }
  const int r = K / 2;
  double total = 0;
  std::size_t count = 0;
  for (int y = r; y < H - r; ++y)
    for (int x = r; x < W - r; ++x) {
      const int anchor = y * W + x;
      double dp = 0, dn = 0;
      int np = 0, nn = 0;
      for (int dy = -r; dy <= r; ++dy)
        for (int dx = -r; dx <= r; ++dx) {
          if (dy == 0 && dx == 0) continue;
          const int j = (y + dy) * W + (x + dx);
          double d2 = 0;
          for (int c = 0; c < C; ++c) {
            const double d = fn[c * H * W + anchor] - fn[c * H * W + j];
            d2 += d * d;
          }
          const double dist = std::sqrt(d2 + eps);
          if (labels[j] == labels[anchor]) {
            dp += dist;
            ++np;
          } else {
            dn += dist;
            ++nn;
          }
        }
      if (np > T && nn > T) {
        ++count;
        total += std::max(0.0, dp / np + margin - dn / nn);
      }
    }
  return count ? total / count : 0.0;
}

// Scalar multi-embedding attention: per-pixel refined feature from raw
// projection matrices.
std::vector<double> cma_refine_ref(
    const std::vector<double>& fd, const std::vector<double>& fs, int C,
    int Cp, int HW, const std::vector<std::vector<double>>& wq,
    const std::vector<std::vector<double>>& bq,
    const std::vector<std::vector<double>>& wk,
    const std::vector<std::vector<double>>& bk,
    const std::vector<std::vector<double>>& wv,
    const std::vector<std::vector<double>>& bv) {
  const int H = static_cast<int>(wq.size());
  std::vector<double> out(static_cast<std::size_t>(Cp) * HW, 0.0);
  std::vector<double> scores(H);
  for (int i = 0; i < HW; ++i) {
    for (int h = 0; h < H; ++h) {
      double a = 0;
      for (int e = 0; e < Cp; ++e) {
        double k = bk[h][e], q = bq[h][e];
        for (int c = 0; c < C; ++c) {
          k += wk[h][e * C + c] * fd[c * HW + i];
          q += wq[h][e * C + c] * fs[c * HW + i];
        }
        a += k * q;
      }
      scores[h] = a / std::sqrt(static_cast<double>(Cp));
    }
    std::vector<double> rho(H, 1.0);
    if (H > 1) {
      double mx = scores[0];
      for (double s : scores) mx = std::max(mx, s);
      double z = 0;
      for (int h = 0; h < H; ++h) {
        rho[h] = std::exp(scores[h] - mx);
        z += rho[h];
      }
      for (auto& r : rho) r /= z;
    } else {
      rho[0] = scores[0];
    }
    for (int h = 0; h < H; ++h)
      for (int e = 0; e < Cp; ++e) {
        double v = bv[h][e];
        for (int c = 0; c < C; ++c) v += wv[h][e * C + c] * fd[c * HW + i];
        out[e * HW + i] += rho[h] * v;
      }
  }
  return out;
}

DepthMetrics depth_metrics_ref(std::vector<double> pred,
                               std::vector<double> gt, double cap,
                               double min_depth) {
  std::vector<double> gv, pv;
  for (std::size_t i = 0; i < gt.size(); ++i)
    if (gt[i] > 0 && gt[i] <= cap) {
      gv.push_back(gt[i]);
      pv.push_back(pred[i]);
    }
  auto med = [](std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
  };
  const double s = med(gv) / med(pv);
  DepthMetrics m{};
  for (std::size_t i = 0; i < gv.size(); ++i) {
    double p = s * pv[i];
    p = std::min(std::max(p, min_depth), cap);
    const double g = gv[i];
    m.abs_rel += std::abs(g - p) / g;
    m.sq_rel += (g - p) * (g - p) / g;
    m.rms += (g - p) * (g - p);
    m.rms_log += std::pow(std::log(g) - std::log(p), 2);
    const double ratio = std::max(g / p, p / g);
    if (ratio < 1.25) m.delta1 += 1;
    if (ratio < 1.5625) m.delta2 += 1;
    if (ratio < 1.953125) m.delta3 += 1;
  }
  const double n = static_cast<double>(gv.size());
  m.abs_rel /= n;
  m.sq_rel /= n;
  m.rms = std::sqrt(m.rms / n);
  m.rms_log = std::sqrt(m.rms_log / n);
  m.delta1 /= n;
  m.delta2 /= n;
  m.delta3 /= n;
  return m;
}

double miou_ref(const std::vector<int>& pred, const std::vector<int>& gt,
                int classes) {
  std::vector<std::vector<long long>> cm(classes,
                                         std::vector<long long>(classes, 0));
  for (std::size_t i = 0; i < gt.size(); ++i) ++cm[gt[i]][pred[i]];
  double sum = 0;
  int count = 0;
  for (int c = 0; c < classes; ++c) {
    long long row = 0, col = 0;
    for (int k = 0; k < classes; ++k) {
      row += cm[c][k];
      col += cm[k][c];
    }
    if (row == 0) continue;
    const long long tp = cm[c][c];
    sum += static_cast<double>(tp) / static_cast<double>(row + col - tp);
    ++count;
  }
  return sum / count;
}

// ---------------------------------------------------------------------------
// gradient-check instances

TD rand_tensor(std::mt19937& rng, Shape shape, double lo, double hi) {
  return TD::from(std::move(shape), rand_vec(rng, shape_size(shape), lo, hi));
}

std::vector<CheckResult> gradient_checks_ops(int instances) {
  std::vector<CheckResult> out;
  auto add = [&](const std::string& name, double limit,
                 std::function<double(std::mt19937&)> fn) {
    out.push_back(run("grad/" + name, limit, instances, fn));
  };

  add("polynomial_sum_squares", 1e-7, [](std::mt19937& rng) {
    return gc([](const TD& t) { return sum(t * t); },
              rand_tensor(rng, {8}, -2, 2));
  });
  add("arithmetic_mix", 1e-4, [](std::mt19937& rng) {
    auto b = rand_tensor(rng, {2, 3}, 0.5, 2.0);
    return gc([b](const TD& t) { return sum(t * b + t / b - b); },
              rand_tensor(rng, {2, 3}, 0.5, 2.0));
  });
  add("broadcast_channel", 1e-4, [](std::mt19937& rng) {
    auto b = rand_tensor(rng, {1, 3, 1, 1}, 0.5, 1.5);
    return gc([b](const TD& t) { return sum(t * b); },
              rand_tensor(rng, {1, 3, 2, 2}, -1, 1));
  });
  add("sigmoid_elu_exp_log", 1e-4, [](std::mt19937& rng) {
    return gc(
        [](const TD& t) {
          return sum(sigmoid(t)) + sum(elu(t)) + sum(exp(t)) +
                 sum(log(t + 3.0));
        },
        rand_tensor(rng, {10}, -1.5, 1.5));
  });
  add("sqrt_eps_at_zero", 1e-4, [](std::mt19937& rng) {
    auto x = rand_tensor(rng, {6}, 0.0, 1.0);
    x.value_mut()[0] = 0.0;  // derivative must stay finite here
    return gc([](const TD& t) { return sum(sqrt_eps(t * t)); }, x, 1e-6);
  });
  add("abs_away_from_kink", 1e-4, [](std::mt19937& rng) {
    auto x = rand_tensor(rng, {8}, 0.05, 1.0);
    std::uniform_int_distribution<int> sign(0, 1);
    for (auto& v : x.value_mut())
      if (sign(rng)) v = -v;
    return gc([](const TD& t) { return sum(abs(t)); }, x);
  });
  add("clamp_interior", 1e-4, [](std::mt19937& rng) {
    return gc([](const TD& t) { return sum(clamp(t, -10.0, 10.0) * t); },
              rand_tensor(rng, {8}, -2, 2));
  });
  add("minimum", 1e-4, [](std::mt19937& rng) {
    auto b = rand_tensor(rng, {8}, 0.0, 1.0);
    auto x = rand_tensor(rng, {8}, 1.1, 2.0);  // no ties
    return gc([b](const TD& t) { return sum(minimum(t, b) + minimum(b, t)); },
              x);
  });
  add("softmax", 1e-4, [](std::mt19937& rng) {
    auto w = rand_tensor(rng, {2, 4}, -1, 1);
    return gc([w](const TD& t) { return sum(softmax(t, 1) * w); },
              rand_tensor(rng, {2, 4}, -2, 2));
  });
  add("l2_normalize", 1e-4, [](std::mt19937& rng) {
    auto w = rand_tensor(rng, {1, 3, 2, 2}, -1, 1);
    return gc([w](const TD& t) { return sum(l2_normalize(t, 1) * w); },
              rand_tensor(rng, {1, 3, 2, 2}, -1, 1));
  });
  add("sum_mean_axis", 1e-4, [](std::mt19937& rng) {
    auto w = rand_tensor(rng, {2, 1, 3}, -1, 1);
    return gc([w](const TD& t) { return sum(mean(t, 1) * w) + mean(sum(t, 2)); },
              rand_tensor(rng, {2, 4, 3}, -1, 1));
  });
  add("concat_slice_at", 1e-4, [](std::mt19937& rng) {
    auto b = rand_tensor(rng, {2, 2}, -1, 1);
    return gc(
        [b](const TD& t) {
          auto c = concat<double>({t, b}, 1);
          return sum(slice(c, 1, 1, 2) * slice(c, 1, 0, 2)) + at(c, 1);
        },
        rand_tensor(rng, {2, 2}, -1, 1));
  });
  add("matmul", 1e-4, [](std::mt19937& rng) {
    auto b = rand_tensor(rng, {3, 2}, -1, 1);
    return gc([b](const TD& t) { return sum(matmul(t, b)); },
              rand_tensor(rng, {2, 3}, -1, 1));
  });
  add("conv2d_3x3_zero", 1e-4, [](std::mt19937& rng) {
    auto w = rand_tensor(rng, {2, 3, 3, 3}, -0.5, 0.5);
    auto b = rand_tensor(rng, {2}, -0.1, 0.1);
    return gc([w, b](const TD& t) { return sum(conv2d(t, w, b)); },
              rand_tensor(rng, {1, 3, 4, 5}, -1, 1));
  });
  add("conv2d_3x3_reflect_weightgrad", 1e-4, [](std::mt19937& rng) {
    auto x = rand_tensor(rng, {1, 2, 4, 4}, -1, 1);
    auto b = rand_tensor(rng, {2}, -0.1, 0.1);
    return gc(
        [x, b](const TD& w) {
          return sum(conv2d(x, w, b, 1, Padding::Reflect));
        },
        rand_tensor(rng, {2, 2, 3, 3}, -0.5, 0.5));
  });
  add("conv2d_stride2_nobias", 1e-4, [](std::mt19937& rng) {
    auto w = rand_tensor(rng, {2, 2, 3, 3}, -0.5, 0.5);
    return gc([w](const TD& t) { return sum(conv2d(t, w, 2)); },
              rand_tensor(rng, {1, 2, 6, 6}, -1, 1));
  });
  add("avg_pool3", 1e-4, [](std::mt19937& rng) {
    auto w = rand_tensor(rng, {1, 2, 4, 4}, -1, 1);
    return gc([w](const TD& t) { return sum(avg_pool3(t) * w); },
              rand_tensor(rng, {1, 2, 4, 4}, -1, 1));
  });
  add("upsample_resize", 1e-4, [](std::mt19937& rng) {
    return gc(
        [](const TD& t) {
          return sum(upsample2x_nearest(t)) +
                 sum(resize_bilinear(t, 5, 7) * 0.5) +
                 sum(resize_nearest(t, 2, 3));
        },
        rand_tensor(rng, {1, 2, 3, 4}, -1, 1));
  });
  add("sin_cos", 1e-4, [](std::mt19937& rng) {
    return gc([](const TD& t) { return sum(sin(t) * 0.5) + sum(cos(t)); },
              rand_tensor(rng, {6}, -2, 2));
  });
  return out;
}

std::vector<CheckResult> gradient_checks_geometry(int instances) {
  std::vector<CheckResult> out;
  auto add = [&](const std::string& name, double limit,
                 std::function<double(std::mt19937&)> fn) {
    out.push_back(run("grad/" + name, limit, instances, fn));
  };

  add("bilinear_sample_source", 1e-4, [](std::mt19937& rng) {
    const int H = 5, W = 6;
    std::uniform_real_distribution<double> fu(0.05, 0.95);
    std::vector<double> uu(H * W), vv(H * W);
    std::uniform_int_distribution<int> ix(0, W - 2), iy(0, H - 2);
    for (int k = 0; k < H * W; ++k) {
      uu[k] = ix(rng) + fu(rng);
      vv[k] = iy(rng) + fu(rng);
    }
    auto u = TD::from({1, 1, H, W}, uu);
    auto v = TD::from({1, 1, H, W}, vv);
    return gc([u, v](const TD& t) { return sum(bilinear_sample(t, u, v)); },
              rand_tensor(rng, {1, 2, H, W}, -1, 1));
  });
  add("bilinear_sample_coords", 1e-4, [](std::mt19937& rng) {
    const int H = 5, W = 6;
    auto src = rand_tensor(rng, {1, 2, H, W}, -1, 1);
    std::uniform_real_distribution<double> fu(0.05, 0.95);
    std::uniform_int_distribution<int> ix(0, W - 2), iy(0, H - 2);
    std::vector<double> coords(2 * H * W);
    for (int k = 0; k < H * W; ++k) {
      coords[k] = ix(rng) + fu(rng);
      coords[H * W + k] = iy(rng) + fu(rng);
    }
    return gc(
        [src, H, W](const TD& t) {
          auto u = reshape(slice(t, 0, 0, H * W), {1, 1, H, W});
          auto v = reshape(slice(t, 0, H * W, H * W), {1, 1, H, W});
          return sum(bilinear_sample(src, u, v));
        },
        TD::from({2 * H * W}, coords));
  });
  add("reproject_depth", 1e-4, [](std::mt19937& rng) {
    const int H = 4, W = 5;
    CameraIntrinsics K{10, 10, W / 2.0, H / 2.0};
    auto pose = TD::from({6}, {0.02, -0.01, 0.03, 0.05, -0.02, 0.1});
    auto img = rand_tensor(rng, {1, 2, H, W}, 0, 1);
    return gc(
        [K, pose, img, H, W](const TD& depth) {
          auto coords = reproject(PixelGrid::make(H, W), depth, K, pose);
          return sum(bilinear_warp(img, coords)) + sum(coords.u) * 0.01;
        },
        rand_tensor(rng, {1, 1, H, W}, 3.0, 6.0));
  });
  add("reproject_pose", 1e-4, [](std::mt19937& rng) {
    const int H = 4, W = 5;
    CameraIntrinsics K{10, 10, W / 2.0, H / 2.0};
    auto depth = rand_tensor(rng, {1, 1, H, W}, 3.0, 6.0);
    auto img = rand_tensor(rng, {1, 2, H, W}, 0, 1);
    return gc(
        [K, depth, img, H, W](const TD& pose) {
          auto coords = reproject(PixelGrid::make(H, W), depth, K, pose);
          return sum(bilinear_warp(img, coords));
        },
        rand_tensor(rng, {6}, -0.05, 0.05));
  });
  return out;
}

std::vector<CheckResult> gradient_checks_losses(int instances) {
  std::vector<CheckResult> out;
  auto add = [&](const std::string& name, double limit,
                 std::function<double(std::mt19937&)> fn) {
    out.push_back(run("grad/" + name, limit, instances, fn));
  };

  add("ssim", 1e-4, [](std::mt19937& rng) {
    auto b = rand_tensor(rng, {1, 1, 6, 6}, 0.1, 0.9);
    return gc([b](const TD& t) { return mean(ssim(t, b)); },
              rand_tensor(rng, {1, 1, 6, 6}, 0.1, 0.9));
  });
  add("photometric_ssim_l1_8x8", 1e-4, [](std::mt19937& rng) {
    auto b = rand_tensor(rng, {1, 3, 8, 8}, 0.1, 0.9);
    return gc(
        [b](const TD& t) { return mean(photometric_loss(t, b, 0.85)); },
        rand_tensor(rng, {1, 3, 8, 8}, 0.1, 0.9));
  });
  add("smoothness", 1e-4, [](std::mt19937& rng) {
    auto img = rand_tensor(rng, {1, 3, 5, 6}, 0, 1);
    return gc([img](const TD& d) { return smoothness_loss(d, img); },
              rand_tensor(rng, {1, 1, 5, 6}, 0.5, 2.0));
  });
  add("cross_entropy", 1e-4, [](std::mt19937& rng) {
    auto labels = rand_labels(rng, 12, 4);
    labels[0] = -1;  // one ignored pixel
    return gc(
        [labels](const TD& t) { return cross_entropy_loss(t, labels, -1); },
        rand_tensor(rng, {1, 4, 3, 4}, -1, 1));
  });
  add("min_reprojection_automask", 1e-4, [](std::mt19937& rng) {
    const int H = 4, W = 5;
    ReprojectionBundle<double> proto;
    proto.identity[0] = rand_tensor(rng, {1, 1, H, W}, 0.4, 0.9);
    proto.identity[1] = rand_tensor(rng, {1, 1, H, W}, 0.4, 0.9);
    std::uniform_int_distribution<int> coin(0, 9);
    for (int f = 0; f < 2; ++f) {
      proto.valid[f].assign(H * W, 1);
      for (auto& v : proto.valid[f])
        if (coin(rng) == 0) v = 0;
    }
    auto other = rand_tensor(rng, {1, 1, H, W}, 0.0, 0.6);
    return gc(
        [proto, other](const TD& t) {
          ReprojectionBundle<double> b = proto;
          b.warped[0] = t;
          b.warped[1] = other;
          return min_reprojection_automask(b).loss;
        },
        rand_tensor(rng, {1, 1, H, W}, 0.0, 0.6));
  });
  add("total_loss", 1e-4, [](std::mt19937& rng) {
    LossWeights w;
    return gc(
        [w](const TD& t) {
          LossParts<double> parts;
          parts.photometric = at(t, 0);
          parts.smoothness = at(t, 1);
          parts.cross_entropy = at(t, 2);
          parts.sgt = {at(t, 3), at(t, 0) * at(t, 3)};
          return total_loss(parts, w);
        },
        rand_tensor(rng, {4}, 0.1, 1.0));
  });
  return out;
}

std::vector<CheckResult> gradient_checks_sgt(int instances) {
  std::vector<CheckResult> out;
  auto add = [&](const std::string& name, double limit,
                 std::function<double(std::mt19937&)> fn) {
    out.push_back(run("grad/" + name, limit, instances, fn));
  };

  add("patch_distances", 1e-4, [](std::mt19937& rng) {
    const int C = 3, H = 5, W = 5;
    SgtConfig cfg;
    cfg.patch_size = 3;
    cfg.threshold = 1;
    auto labels = rand_labels(rng, H * W, 2);
    auto tri = sample_patch_triplets(labels, H, W, cfg);
    PatchTripletSet target = tri[tri.size() / 2];
    return gc(
        [target](const TD& t) {
          auto fhat = l2_normalize(t, 1);
          auto [dp, dn] = patch_distances(fhat, target);
          TD total = TD::scalar(0.0);
          if (dp) total = total + *dp;
          if (dn) total = total + *dn * 0.5;
          return total;
        },
        rand_tensor(rng, {1, C, H, W}, -1, 1));
  });
  add("sgt_loss_away_from_hinge", 1e-4, [](std::mt19937& rng) {
    const int C = 4, H = 8, W = 8;
    SgtConfig cfg;
    cfg.patch_size = 3;
    cfg.threshold = 2;
    // Rejection-sample instances whose active patches sit near the hinge
    // kink, where the loss is only sub-differentiable.
    for (int attempt = 0; attempt < 50; ++attempt) {
      auto labels = rand_labels(rng, H * W, 2);
      auto x = rand_tensor(rng, {1, C, H, W}, -1, 1);
      auto tri = sample_patch_triplets(labels, H, W, cfg);
      bool near_kink = false;
      // Recompute per-patch hinges with the scalar oracle pieces.
      std::vector<double> fn = x.value();
      for (int k = 0; k < H * W; ++k) {
        double n2 = 1e-8;
        for (int c = 0; c < C; ++c) n2 += fn[c * H * W + k] * fn[c * H * W + k];
        for (int c = 0; c < C; ++c) fn[c * H * W + k] /= std::sqrt(n2);
      }
      for (const auto& t : tri) {
        if (!t.is_boundary) continue;
        auto dist = [&](int i, int j) {
          double d2 = 1e-8;
          for (int c = 0; c < C; ++c) {
            const double d = fn[c * H * W + i] - fn[c * H * W + j];
            d2 += d * d;
          }
          return std::sqrt(d2);
        };
        double dp = 0, dn = 0;
        for (int j : t.positives) dp += dist(t.anchor_index, j);
        for (int j : t.negatives) dn += dist(t.anchor_index, j);
        const double hinge =
            dp / t.positives.size() + cfg.margin - dn / t.negatives.size();
        if (std::abs(hinge) < 1e-3) near_kink = true;
      }
      if (near_kink) continue;
      return gc([labels, cfg, H, W](
                    const TD& t) { return sgt_loss(t, labels, cfg); },
                x);
    }
    return 1.0;  // could not build a clean instance; count as failure
  });
  return out;
}

std::vector<CheckResult> gradient_checks_cma(int instances) {
  std::vector<CheckResult> out;
  auto add = [&](const std::string& name, double limit,
                 std::function<double(std::mt19937&)> fn) {
    out.push_back(run("grad/" + name, limit, instances, fn));
  };

  auto make_emb = [](std::mt19937& rng, int C, int heads) {
    CmaConfig cfg;
    cfg.heads = heads;
    cfg.embed_ratio = 2.0;
    return HeadEmbeddings<double>::init(C, cfg, rng);
  };

  add("attention_scores", 1e-4, [make_emb](std::mt19937& rng) {
    const int C = 2, H = 3, W = 4;
    auto emb = make_emb(rng, C, 2);
    auto fs = rand_tensor(rng, {1, C, H, W}, -1, 1);
    return gc(
        [emb, fs](const TD& t) {
          auto scores = attention_scores(t, fs, emb);
          TD total = TD::scalar(0.0);
          for (auto& s : scores) total = total + sum(s);
          return total;
        },
        rand_tensor(rng, {1, C, H, W}, -1, 1));
  });
  add("refine_softmax_heads", 1e-4, [make_emb](std::mt19937& rng) {
    const int C = 2, H = 3, W = 4;
    auto emb = make_emb(rng, C, 4);
    auto fs = rand_tensor(rng, {1, C, H, W}, -1, 1);
    return gc(
        [emb, fs](const TD& t) { return sum(refine_features(t, fs, emb)); },
        rand_tensor(rng, {1, C, H, W}, -1, 1));
  });
  add("refine_identity_single_head", 1e-4, [make_emb](std::mt19937& rng) {
    const int C = 2, H = 3, W = 4;
    auto emb = make_emb(rng, C, 1);
    auto fd = rand_tensor(rng, {1, C, H, W}, -1, 1);
    return gc(
        [emb, fd](const TD& t) { return sum(refine_features(fd, t, emb)); },
        rand_tensor(rng, {1, C, H, W}, -1, 1));
  });
  add("fuse_and_full_cma", 1e-4, [make_emb](std::mt19937& rng) {
    const int C = 2, H = 3, W = 4;
    auto emb = make_emb(rng, C, 2);
    auto fs = rand_tensor(rng, {1, C, H, W}, -1, 1);
    return gc([emb, fs](const TD& t) { return sum(cma_apply(t, fs, emb)); },
              rand_tensor(rng, {1, C, H, W}, -1, 1));
  });
  add("cma_weights", 1e-4, [make_emb](std::mt19937& rng) {
    const int C = 2, H = 3, W = 4;
    auto emb = make_emb(rng, C, 2);
    auto fd = rand_tensor(rng, {1, C, H, W}, -1, 1);
    auto fs = rand_tensor(rng, {1, C, H, W}, -1, 1);
    const Shape wshape = emb.wq[0].shape();
    return gc(
        [emb, fd, fs, wshape](const TD& t) {
          HeadEmbeddings<double> e = emb;
          e.wq[0] = reshape(t, wshape);
          return sum(cma_apply(fd, fs, e));
        },
        rand_tensor(rng, {static_cast<int>(shape_size(wshape))}, -0.5, 0.5));
  });
  return out;
}

std::vector<CheckResult> gradient_checks_network(int instances) {
  std::vector<CheckResult> out;
  auto add = [&](const std::string& name, double limit, int inst,
                 std::function<double(std::mt19937&)> fn) {
    out.push_back(run("grad/" + name, limit, inst, fn));
  };

  BackboneConfig cfg;
  cfg.height = 16;
  cfg.width = 16;
  cfg.enc_channels = {2, 2, 3, 3};
  cfg.num_classes = 3;
  cfg.cma_enabled = true;
  cfg.cma.heads = 2;
  cfg.cma.layers = {1};

  add("network_blocks_input", 1e-4, std::max(1, instances / 4),
      [cfg](std::mt19937& rng) {
        std::uniform_int_distribution<unsigned> seed(1, 1u << 20);
        Network<double> net(cfg, seed(rng));
        return gc(
            [&net](const TD& t) {
              auto o = net.forward(t);
              return sum(o.disparity) + mean(o.logits * o.logits);
            },
            rand_tensor(rng, {1, 3, cfg.height, cfg.width}, 0, 1));
      });
  add("pose_network_input", 1e-4, std::max(1, instances / 4),
      [cfg](std::mt19937& rng) {
        std::uniform_int_distribution<unsigned> seed(1, 1u << 20);
        Network<double> net(cfg, seed(rng));
        auto other = rand_tensor(rng, {1, 3, cfg.height, cfg.width}, 0, 1);
        return gc(
            [&net, other](const TD& t) {
              auto p = net.predict_pose(t, other);
              return sum(p * p) * 1e4;
            },
            rand_tensor(rng, {1, 3, cfg.height, cfg.width}, 0, 1));
      });
  // Parameter gradients: analytic backward vs finite differences on a random
  // subset of coordinates of every parameter tensor.
  add("network_parameter_grads", 1e-4, 1, [cfg](std::mt19937& rng) {
    Network<double> net(cfg, 99);
    auto img = rand_tensor(rng, {1, 3, cfg.height, cfg.width}, 0, 1);
    auto loss_fn = [&]() {
      auto o = net.forward(img);
      return sum(o.disparity) + mean(o.logits * o.logits);
    };
    auto loss = loss_fn();
    backward(loss);
    auto params = net.parameters();
    double worst = 0;
    std::uniform_int_distribution<std::size_t> pick;
    for (auto& [name, p] : params) {
      auto analytic = p.grad();
      for (int probe = 0; probe < 3; ++probe) {
        const std::size_t k =
            pick(rng, std::uniform_int_distribution<std::size_t>::param_type(
                          0, p.size() - 1));
        const double step = 1e-5;
        const double orig = p.value()[k];
        p.value_mut()[k] = orig + step;
        const double fp = loss_fn().item();
        p.value_mut()[k] = orig - step;
        const double fm = loss_fn().item();
        p.value_mut()[k] = orig;
        const double numeric = (fp - fm) / (2 * step);
        worst = std::max(worst, std::abs(analytic[k] - numeric) /
                                    std::max(1.0, std::abs(analytic[k])));
      }
    }
    return worst;
  });
  return out;
}

// ---------------------------------------------------------------------------
// oracle equivalence suites

std::vector<CheckResult> oracle_checks(int instances) {
  std::vector<CheckResult> out;
  auto add = [&](const std::string& name, double limit,
                 std::function<double(std::mt19937&)> fn) {
    out.push_back(run("oracle/" + name, limit, instances, fn));
  };

  add("bilinear_warp", 1e-6, [](std::mt19937& rng) {
    const int H = 16, W = 16;
    auto img = rand_vec(rng, H * W, 0, 1);
    std::uniform_real_distribution<double> du(0, W - 1), dv(0, H - 1);
    std::vector<double> uu(H * W), vv(H * W);
    for (int k = 0; k < H * W; ++k) {
      uu[k] = du(rng);
      vv[k] = dv(rng);
    }
    auto outp = bilinear_sample(TD::from({1, 1, H, W}, img),
                                TD::from({1, 1, H, W}, uu),
                                TD::from({1, 1, H, W}, vv));
    double worst = 0;
    for (int k = 0; k < H * W; ++k)
      worst = std::max(worst, std::abs(outp.value()[k] -
                                       bilerp_ref(img, H, W, uu[k], vv[k])));
    return worst;
  });
  add("min_reprojection_automask", 1e-6, [](std::mt19937& rng) {
    const int H = 6, W = 7;
    ReprojectionBundle<double> b;
    std::array<std::vector<double>, 2> l, id;
    for (int f = 0; f < 2; ++f) {
      l[f] = rand_vec(rng, H * W, 0, 1);
      id[f] = rand_vec(rng, H * W, 0, 1);
      b.warped[f] = TD::from({1, 1, H, W}, l[f]);
      b.identity[f] = TD::from({1, 1, H, W}, id[f]);
      b.valid[f].assign(H * W, 1);
      std::uniform_int_distribution<int> coin(0, 4);
      for (auto& v : b.valid[f])
        if (coin(rng) == 0) v = 0;
    }
    auto got = min_reprojection_automask(b);
    auto want = automask_ref(l[0], l[1], id[0], id[1], b.valid[0], b.valid[1]);
    if (got.included != want.included) return 1.0;
    return std::abs(got.loss.item() - want.mean);
  });
  add("sgt_loss", 1e-6, [](std::mt19937& rng) {
    const int C = 8, H = 16, W = 16;
    SgtConfig cfg;  // K=5, T=4, m=0.3
    auto labels = rand_labels(rng, H * W, 3);
    auto feat = rand_vec(rng, static_cast<std::size_t>(C) * H * W, -1, 1);
    const double got =
        sgt_loss(TD::from({1, C, H, W}, feat), labels, cfg).item();
    const double want =
        sgt_ref(feat, C, H, W, labels, cfg.patch_size, cfg.threshold,
                cfg.margin, 1e-8);
    return std::abs(got - want);
  });
  for (int heads : {1, 2, 4}) {
    add("attention_H" + std::to_string(heads), 1e-6,
        [heads](std::mt19937& rng) {
          const int C = 2, HW_H = 3, HW_W = 4, HW = HW_H * HW_W;
          CmaConfig cfg;
          cfg.heads = heads;
          auto emb = HeadEmbeddings<double>::init(C, cfg, rng);
          const int Cp = emb.embed;
          auto fd = rand_vec(rng, C * HW, -1, 1);
          auto fs = rand_vec(rng, C * HW, -1, 1);
          std::vector<std::vector<double>> wq, bq, wk, bk, wv, bv;
          for (int h = 0; h < heads; ++h) {
            wq.push_back(emb.wq[h].value());
            bq.push_back(emb.bq[h].value());
            wk.push_back(emb.wk[h].value());
            bk.push_back(emb.bk[h].value());
            wv.push_back(emb.wv[h].value());
            bv.push_back(emb.bv[h].value());
          }
          auto got = refine_features(TD::from({1, C, HW_H, HW_W}, fd),
                                     TD::from({1, C, HW_H, HW_W}, fs), emb);
          auto want =
              cma_refine_ref(fd, fs, C, Cp, HW, wq, bq, wk, bk, wv, bv);
          double worst = 0;
          for (std::size_t k = 0; k < want.size(); ++k)
            worst = std::max(worst, std::abs(got.value()[k] - want[k]));
          return worst;
        });
  }
  add("evaluate_depth", 1e-6, [](std::mt19937& rng) {
    const int n = 60;
    auto gt = rand_vec(rng, n, 0.5, 120.0);  // some beyond the cap
    auto pred = rand_vec(rng, n, 0.5, 90.0);
    DepthEvalOptions opt;
    opt.cap = 100.0;
    opt.min_depth = 0.1;
    const auto got = evaluate_depth(pred, gt, opt);
    const auto want = depth_metrics_ref(pred, gt, opt.cap, opt.min_depth);
    const double pairs[][2] = {
        {got.abs_rel, want.abs_rel}, {got.sq_rel, want.sq_rel},
        {got.rms, want.rms},         {got.rms_log, want.rms_log},
        {got.delta1, want.delta1},   {got.delta2, want.delta2},
        {got.delta3, want.delta3}};
    double worst = 0;
    for (const auto& p : pairs) worst = std::max(worst, std::abs(p[0] - p[1]));
    return worst;
  });
  add("evaluate_seg", 1e-12, [](std::mt19937& rng) {
    const int n = 64;
    auto gt = rand_labels(rng, n, 3);
    auto pred = rand_labels(rng, n, 3);
    return std::abs(evaluate_seg(pred, gt, 3) - miou_ref(pred, gt, 3));
  });
  add("conv2d_vs_serial_reference", 1e-6, [](std::mt19937& rng) {
    const int N = 1, Cin = 3, H = 7, W = 8, Cout = 2, K = 3;
    auto x = rand_vec(rng, static_cast<std::size_t>(N) * Cin * H * W, -1, 1);
    auto w = rand_vec(rng, static_cast<std::size_t>(Cout) * Cin * K * K, -1, 1);
    auto b = rand_vec(rng, Cout, -1, 1);
    for (auto pad : {Padding::Zero, Padding::Reflect}) {
      std::vector<double> got(static_cast<std::size_t>(N) * Cout * H * W);
      std::vector<double> want(got.size());
      kernels::conv2d_forward(x.data(), w.data(), b.data(), got.data(), N, Cin,
                              H, W, Cout, K, 1, pad);
      kernels::ref::conv2d_forward(x.data(), w.data(), b.data(), want.data(),
                                   N, Cin, H, W, Cout, K, 1, pad);
      for (std::size_t k = 0; k < got.size(); ++k)
        if (std::abs(got[k] - want[k]) > 1e-9) return 1.0;
    }
    return 0.0;
  });
  return out;
}

}  // namespace

std::vector<CheckResult> run_gradient_checks(const std::string& module,
                                             int instances) {
  std::vector<CheckResult> out;
  auto append = [&](std::vector<CheckResult> v) {
    out.insert(out.end(), v.begin(), v.end());
  };
  const bool all = module == "all";
  if (all || module == "ops") append(gradient_checks_ops(instances));
  if (all || module == "geometry") append(gradient_checks_geometry(instances));
  if (all || module == "losses") append(gradient_checks_losses(instances));
  if (all || module == "sgt") append(gradient_checks_sgt(instances));
  if (all || module == "cma") append(gradient_checks_cma(instances));
  if (all || module == "network") append(gradient_checks_network(instances));
  if (out.empty())
    throw std::invalid_argument("unknown grad-check module: " + module);
  return out;
}

std::vector<CheckResult> run_oracle_checks(int instances) {
  return oracle_checks(instances);
}

bool all_passed(const std::vector<CheckResult>& results) {
  for (const auto& r : results)
    if (!r.passed) return false;
  return true;
}

void print_results(const std::vector<CheckResult>& results) {
  for (const auto& r : results)
    std::printf("%-42s %s  (max err %.3g, limit %.3g)\n", r.name.c_str(),
                r.passed ? "PASS" : "FAIL", r.worst, r.limit);
}

}  // namespace semdepth::checks
