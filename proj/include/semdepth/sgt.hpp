#pragma once

// Semantics-guided triplet loss: patch-based candidate sampling over a class
// label map, mean Euclidean distances between L2-normalized depth features,
// margin hinge, and aggregation over boundary patches only.

#include <cmath>
#include <limits>
#include <optional>
#include <stdexcept>
#include <vector>

#include "semdepth/tensor.hpp"

namespace semdepth {

struct PatchTripletSet {
  int anchor_index = 0;          // flat spatial index of the patch center
  std::vector<int> positives;    // same class as the anchor
  std::vector<int> negatives;    // different class
  bool is_boundary = false;      // |P+| > T and |P-| > T
};

struct SgtConfig {
  int patch_size = 5;            // K, odd
  double margin = 0.3;           // m
  int threshold = 4;             // T, defaults to K-1
  std::vector<int> layers = {1, 2, 3};
  double weight = 0.1;           // delta

  void validate() const {
    if (patch_size < 3 || patch_size % 2 == 0)
      throw std::invalid_argument("sgt: patch size must be odd and >= 3");
    if (!(margin > 0)) throw std::invalid_argument("sgt: margin must be > 0");
    if (threshold < 0 || threshold >= patch_size * patch_size - 1)
      throw std::invalid_argument("sgt: threshold out of range");
  }
};

// One triplet set per interior pixel (centers where the full KxK window fits).
inline std::vector<PatchTripletSet> sample_patch_triplets(
    const std::vector<int>& labels, int H, int W, const SgtConfig& cfg) {
  cfg.validate();
  if (labels.size() != static_cast<std::size_t>(H) * W)
    throw std::invalid_argument("sgt: label map size mismatch");
  const int K = cfg.patch_size, r = K / 2;
  if (H < K || W < K)
    throw std::invalid_argument("sgt: image smaller than the patch");
  std::vector<PatchTripletSet> out;
  out.reserve(static_cast<std::size_t>(H - 2 * r) * (W - 2 * r));
  for (int y = r; y < H - r; ++y)
    for (int x = r; x < W - r; ++x) {
      PatchTripletSet set;
      set.anchor_index = y * W + x;
      const int anchor_class = labels[set.anchor_index];
      for (int dy = -r; dy <= r; ++dy)
        for (int dx = -r; dx <= r; ++dx) {
          if (dy == 0 && dx == 0) continue;
          const int j = (y + dy) * W + (x + dx);
          (labels[j] == anchor_class ? set.positives : set.negatives).push_back(j);
        }
      set.is_boundary =
          static_cast<int>(set.positives.size()) > cfg.threshold &&
          static_cast<int>(set.negatives.size()) > cfg.threshold;
      out.push_back(std::move(set));
    }
  return out;
}

// Channel vectors of `features` (1,C,h,w) at the given flat spatial indices,
// as an (M,C) tensor.
template <typename S>
Tensor<S> gather_pixels(const Tensor<S>& features,
                        const std::vector<int>& indices) {
  const Shape& s = features.shape();
  if (s.size() != 4 || s[0] != 1)
    throw std::invalid_argument("gather_pixels: features must be (1,C,h,w)");
  const int C = s[1];
  const std::size_t hw = static_cast<std::size_t>(s[2]) * s[3];
  const int M = static_cast<int>(indices.size());
  std::vector<S> out(static_cast<std::size_t>(M) * C);
  const auto& fv = features.value();
  for (int m = 0; m < M; ++m)
    for (int c = 0; c < C; ++c)
      out[m * C + c] = fv[c * hw + indices[m]];
  auto pf = features.node();
  return detail::make_result<S>(
      {M, C}, std::move(out), {features},
      [pf, indices, C, hw](Node<S>& n) {
        detail::ensure_grad(*pf);
        for (std::size_t m = 0; m < indices.size(); ++m)
          for (int c = 0; c < C; ++c)
            pf->grad[c * hw + indices[m]] += n.grad[m * C + c];
      },
      "gather_pixels");
}

// Mean Euclidean distances between the anchor feature and the positive /
// negative members. Expects channel-normalized features; absent sets yield
// absent distances.
template <typename S>
std::pair<std::optional<Tensor<S>>, std::optional<Tensor<S>>> patch_distances(
    const Tensor<S>& features, const PatchTripletSet& triplet,
    S eps = S(1e-8)) {
  if (triplet.positives.empty() && triplet.negatives.empty())
    throw std::invalid_argument("patch_distances: both member sets empty");
  auto anchor = gather_pixels(features, {triplet.anchor_index});
  auto dist = [&](const std::vector<int>& members) {
    auto diff = gather_pixels(features, members) - anchor;
    return mean(sqrt_eps(sum(diff * diff, 1), eps));
  };
  std::pair<std::optional<Tensor<S>>, std::optional<Tensor<S>>> out;
  if (!triplet.positives.empty()) out.first = dist(triplet.positives);
  if (!triplet.negatives.empty()) out.second = dist(triplet.negatives);
  return out;
}

// max(0, d+ + m - d-)
template <typename S>
Tensor<S> patch_triplet_loss(const Tensor<S>& d_plus, const Tensor<S>& d_minus,
                             S margin) {
  return clamp(d_plus + margin - d_minus, S(0),
               std::numeric_limits<S>::max());
}

namespace detail {

// Fused triplet loss over all boundary patches of one feature map, with an
// analytic backward; equivalent to composing patch_distances and the hinge
// per patch but without the per-patch graph overhead.
template <typename S>
Tensor<S> sgt_boundary_loss(const Tensor<S>& fhat,
                            const std::vector<PatchTripletSet>& triplets,
                            S margin, S eps) {
  const Shape& s = fhat.shape();
  const int C = s[1];
  const std::size_t hw = static_cast<std::size_t>(s[2]) * s[3];
  const auto& fv = fhat.value();

  auto pair_dist = [&](int i, int j) {
    S acc = S(0);
    for (int c = 0; c < C; ++c) {
      const S d = fv[c * hw + i] - fv[c * hw + j];
      acc += d * d;
    }
    return std::sqrt(acc + eps);
  };

  std::size_t count = 0;
  S total = S(0);
  std::vector<std::uint8_t> active(triplets.size(), 0);
  for (std::size_t t = 0; t < triplets.size(); ++t) {
    const auto& tr = triplets[t];
    if (!tr.is_boundary) continue;
    ++count;
    S dp = S(0), dn = S(0);
    for (int j : tr.positives) dp += pair_dist(tr.anchor_index, j);
    for (int j : tr.negatives) dn += pair_dist(tr.anchor_index, j);
    dp /= S(tr.positives.size());
    dn /= S(tr.negatives.size());
    const S hinge = dp + margin - dn;
    if (hinge > S(0)) {
      total += hinge;
      active[t] = 1;
    }
  }
  if (count == 0) return Tensor<S>::scalar(S(0));
  const S loss = total / S(count);

  auto pf = fhat.node();
  return detail::make_result<S>(
      {1}, {loss}, {fhat},
      [pf, triplets, active, count, C, hw, eps](Node<S>& n) {
        detail::ensure_grad(*pf);
        const S g = n.grad[0] / S(count);
        auto& fv2 = pf->value;
        auto& gv = pf->grad;
        // d dist(i,j)/dF(i) = (F(i)-F(j))/dist; hinge adds +1 per positive
        // pair and -1 per negative pair.
        auto add_pair = [&](int i, int j, S w) {
          S acc = S(0);
          std::vector<S> diff(C);
          for (int c = 0; c < C; ++c) {
            diff[c] = fv2[c * hw + i] - fv2[c * hw + j];
            acc += diff[c] * diff[c];
          }
          const S inv = w / std::sqrt(acc + eps);
          for (int c = 0; c < C; ++c) {
            const S d = diff[c] * inv;
            gv[c * hw + i] += d;
            gv[c * hw + j] -= d;
          }
        };
        for (std::size_t t = 0; t < triplets.size(); ++t) {
          if (!active[t]) continue;
          const auto& tr = triplets[t];
          const S wp = g / S(tr.positives.size());
          const S wn = -g / S(tr.negatives.size());
          for (int j : tr.positives) add_pair(tr.anchor_index, j, wp);
          for (int j : tr.negatives) add_pair(tr.anchor_index, j, wn);
        }
      },
      "sgt_boundary_loss");
}

}  // namespace detail

// L_SGT for one decoder layer: mean hinge over boundary patches, zero when
// none exist. Features are L2-normalized along the channel axis internally;
// the label map must already be at the feature map's resolution.
template <typename S>
Tensor<S> sgt_loss(const Tensor<S>& features, const std::vector<int>& labels,
                   const SgtConfig& cfg) {
  const Shape& s = features.shape();
  if (s.size() != 4 || s[0] != 1)
    throw std::invalid_argument("sgt_loss: features must be (1,C,h,w)");
  auto triplets = sample_patch_triplets(labels, s[2], s[3], cfg);
  bool any = false;
  for (const auto& t : triplets) any = any || t.is_boundary;
  if (!any) return Tensor<S>::scalar(S(0));
  auto fhat = l2_normalize(features, 1, S(1e-8));
  return detail::sgt_boundary_loss(fhat, triplets, S(cfg.margin), S(1e-8));
}

// Nearest-neighbor downsampling of a class-id map to a feature resolution.
inline std::vector<int> resize_labels_nearest(const std::vector<int>& labels,
                                              int H, int W, int Ho, int Wo) {
  std::vector<int> out(static_cast<std::size_t>(Ho) * Wo);
  for (int y = 0; y < Ho; ++y) {
    const int sy = std::min(static_cast<int>((y + 0.5) * H / Ho), H - 1);
    for (int x = 0; x < Wo; ++x) {
      const int sx = std::min(static_cast<int>((x + 0.5) * W / Wo), W - 1);
      out[y * Wo + x] = labels[sy * W + sx];
    }
  }
  return out;
}

}  // namespace semdepth
