#pragma once

// Self-supervision loss stack: SSIM+L1 photometric loss, minimum reprojection
// with auto-mask, edge-aware smoothness, segmentation cross-entropy and the
// weighted total.

#include <array>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "semdepth/tensor.hpp"

namespace semdepth {

struct LossWeights {
  double alpha = 0.85;  // SSIM/L1 mix
  double beta = 0.001;  // smoothness
  double gamma = 0.3;   // cross-entropy
  double delta = 0.1;   // SGT

  void validate() const {
    if (alpha < 0 || alpha > 1)
      throw std::invalid_argument("loss weights: alpha must be in [0,1]");
    if (beta < 0 || gamma < 0 || delta < 0)
      throw std::invalid_argument("loss weights: beta/gamma/delta must be >= 0");
  }
};

// Per-pixel SSIM with 3x3 mean/variance windows, C1=0.01^2, C2=0.03^2.
template <typename S>
Tensor<S> ssim(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.shape() != b.shape())
    throw std::invalid_argument("ssim: shape mismatch");
  const S c1 = S(0.01 * 0.01), c2 = S(0.03 * 0.03);
  auto mu_a = avg_pool3(a);
  auto mu_b = avg_pool3(b);
  auto var_a = avg_pool3(a * a) - mu_a * mu_a;
  auto var_b = avg_pool3(b * b) - mu_b * mu_b;
  auto cov = avg_pool3(a * b) - mu_a * mu_b;
  auto num = (S(2) * mu_a * mu_b + c1) * (S(2) * cov + c2);
  auto den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2);
  return num / den;
}

// alpha*(1-SSIM)/2 + (1-alpha)*|target - warped|, channel-averaged -> (N,1,H,W).
template <typename S>
Tensor<S> photometric_loss(const Tensor<S>& target, const Tensor<S>& warped,
                           S alpha) {
  if (target.shape() != warped.shape())
    throw std::invalid_argument("photometric_loss: shape mismatch");
  auto dssim = (Tensor<S>::scalar(1) - ssim(target, warped)) * S(0.5);
  auto l1 = abs(target - warped);
  return mean(dssim * alpha + l1 * (S(1) - alpha), 1);
}

// Loss maps for the two reference frames plus the unwarped (identity) maps.
template <typename S>
struct ReprojectionBundle {
  std::array<Tensor<S>, 2> warped;    // photometric loss of warped frames
  std::array<Tensor<S>, 2> identity;  // photometric loss of raw frames
  std::array<std::vector<std::uint8_t>, 2> valid;  // reprojection validity
};

template <typename S>
struct MaskedPhotometric {
  Tensor<S> loss;                   // scalar
  std::size_t included = 0;         // pixels passing the auto-mask
  bool empty = false;               // no pixel survived; loss is 0
  std::vector<std::uint8_t> mask;   // per-pixel inclusion, for inspection
};

// Per-pixel min over the two warped losses; a pixel contributes only when
// that min is strictly smaller than the min over the identity losses.
template <typename S>
MaskedPhotometric<S> min_reprojection_automask(const ReprojectionBundle<S>& b) {
  const Shape& s = b.warped[0].shape();
  for (int f = 0; f < 2; ++f) {
    if (b.warped[f].shape() != s || b.identity[f].shape() != s)
      throw std::invalid_argument("automask: bundle shape mismatch");
    if (b.valid[f].size() != b.warped[f].size())
      throw std::invalid_argument("automask: validity mask size mismatch");
  }
  const std::size_t n = b.warped[0].size();
  const S big = S(1e6);
  // Invalid projections are pushed above any identity loss so the mask drops
  // them; the multiply-by-0 keeps their gradient path dead.
  std::array<Tensor<S>, 2> guarded;
  for (int f = 0; f < 2; ++f) {
    std::vector<S> keep(n), fill(n);
    for (std::size_t i = 0; i < n; ++i) {
      keep[i] = b.valid[f][i] ? S(1) : S(0);
      fill[i] = b.valid[f][i] ? S(0) : big;
    }
    guarded[f] = b.warped[f] * Tensor<S>::from(s, std::move(keep)) +
                 Tensor<S>::from(s, std::move(fill));
  }
  auto per_pixel = minimum(guarded[0], guarded[1]);

  MaskedPhotometric<S> out;
  out.mask.resize(n);
  std::vector<S> mask(n);
  for (std::size_t i = 0; i < n; ++i) {
    const S id_min =
        std::min(b.identity[0].value()[i], b.identity[1].value()[i]);
    const bool inc = per_pixel.value()[i] < id_min;
    out.mask[i] = inc;
    mask[i] = inc ? S(1) : S(0);
    if (inc) ++out.included;
  }
  if (out.included == 0) {
    out.empty = true;
    out.loss = Tensor<S>::scalar(S(0));
    return out;
  }
  out.loss = sum(per_pixel * Tensor<S>::from(s, std::move(mask))) /
             S(static_cast<double>(out.included));
  return out;
}

// Edge-aware smoothness on mean-normalized disparity (forward differences).
template <typename S>
Tensor<S> smoothness_loss(const Tensor<S>& disparity, const Tensor<S>& image) {
  const Shape& ds = disparity.shape();
  const Shape& is = image.shape();
  if (ds.size() != 4 || is.size() != 4 || ds[2] != is[2] || ds[3] != is[3] ||
      ds[1] != 1)
    throw std::invalid_argument("smoothness_loss: disparity (N,1,H,W) and image (N,C,H,W)");
  if (ds[2] < 2 || ds[3] < 2)
    throw std::invalid_argument("smoothness_loss: degenerate 1-pixel dimension");
  const int H = ds[2], W = ds[3];
  auto norm = disparity / (mean(disparity) + S(1e-7));
  auto dx = abs(slice(norm, 3, 1, W - 1) - slice(norm, 3, 0, W - 1));
  auto dy = abs(slice(norm, 2, 1, H - 1) - slice(norm, 2, 0, H - 1));
  auto ix = mean(abs(slice(image, 3, 1, W - 1) - slice(image, 3, 0, W - 1)), 1);
  auto iy = mean(abs(slice(image, 2, 1, H - 1) - slice(image, 2, 0, H - 1)), 1);
  return mean(dx * exp(-ix)) + mean(dy * exp(-iy));
}

// Mean over non-ignored pixels of -log softmax(logits)[label].
template <typename S>
Tensor<S> cross_entropy_loss(const Tensor<S>& logits,
                             const std::vector<int>& labels, int ignore_id) {
  const Shape& s = logits.shape();
  if (s.size() != 4 || s[0] != 1)
    throw std::invalid_argument("cross_entropy_loss: logits must be (1,C,H,W)");
  const int C = s[1], H = s[2], W = s[3];
  if (labels.size() != static_cast<std::size_t>(H) * W)
    throw std::invalid_argument("cross_entropy_loss: label map size mismatch");
  std::vector<S> onehot(logits.size(), S(0));
  std::size_t valid = 0;
  for (int k = 0; k < H * W; ++k) {
    const int lbl = labels[k];
    if (lbl == ignore_id) continue;
    if (lbl < 0 || lbl >= C)
      throw std::invalid_argument("cross_entropy_loss: label out of range");
    onehot[static_cast<std::size_t>(lbl) * H * W + k] = S(1);
    ++valid;
  }
  if (valid == 0) return Tensor<S>::scalar(S(0));
  auto ls = log_softmax(logits, 1);
  return -sum(ls * Tensor<S>::from(s, std::move(onehot))) /
         S(static_cast<double>(valid));
}

template <typename S>
struct LossParts {
  Tensor<S> photometric;             // L_ph, masked scalar
  Tensor<S> smoothness;              // L_sm
  Tensor<S> cross_entropy;           // L_CE
  std::vector<Tensor<S>> sgt;        // L_SGT per configured layer
};

// L_ph + beta*L_sm + gamma*L_CE + delta * sum_l L_SGT(l)
template <typename S>
Tensor<S> total_loss(const LossParts<S>& parts, const LossWeights& w) {
  w.validate();
  auto total = parts.photometric + parts.smoothness * S(w.beta) +
               parts.cross_entropy * S(w.gamma);
  for (const auto& l : parts.sgt) total = total + l * S(w.delta);
  return total;
}

}  // namespace semdepth
