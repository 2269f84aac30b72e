#pragma once

// Toy-scale shared-encoder, dual-decoder network (depth + segmentation) with
// skip connections and CMA attachment points, plus the 6-dof pose network.

#include <array>
#include <map>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "semdepth/cma.hpp"
#include "semdepth/tensor.hpp"

namespace semdepth {

struct BackboneConfig {
  int height = 64, width = 192;          // divisible by 16
  std::array<int, 4> enc_channels = {16, 32, 64, 128};
  int num_classes = 6;
  double min_depth = 0.1, max_depth = 100.0;
  CmaConfig cma;
  bool cma_enabled = false;

  void validate() const {
    if (height % 16 != 0 || width % 16 != 0)
      throw std::invalid_argument("backbone: input size must be divisible by 16");
    for (int c : enc_channels)
      if (c < 1) throw std::invalid_argument("backbone: bad channel width");
    if (num_classes < 2)
      throw std::invalid_argument("backbone: need at least 2 classes");
    if (!(min_depth > 0) || !(max_depth > min_depth))
      throw std::invalid_argument("backbone: bad depth range");
  }

  // Decoder block output channels, l = 0..4 (coarse to fine). Kept wider
  // than the mirrored encoder widths at the fine end: the triplet loss and
  // the attention embeddings degrade on very low-dimensional features.
  std::array<int, 5> dec_channels() const {
    return {enc_channels[3], enc_channels[3], enc_channels[2], enc_channels[1],
            enc_channels[1]};
  }
};

template <typename S>
struct NetworkOutputs {
  Tensor<S> disparity;              // (1,1,H,W), sigmoid-scaled inverse depth
  Tensor<S> logits;                 // (1,num_classes,H,W)
  std::vector<Tensor<S>> feat_d;    // per-layer depth features (post-CMA)
  std::vector<Tensor<S>> feat_s;    // per-layer segmentation features
};

template <typename S>
class Network {
 public:
  Network(const BackboneConfig& cfg, unsigned seed) : cfg_(cfg) {
    cfg.validate();
    std::mt19937 rng(seed);
    const auto& ec = cfg.enc_channels;
    const auto dc = cfg.dec_channels();

    enc_w_.push_back(kaiming_uniform<S>({ec[0], 3, 3, 3}, 27, rng));
    enc_w_.push_back(kaiming_uniform<S>({ec[1], ec[0], 3, 3}, ec[0] * 9, rng));
    enc_w_.push_back(kaiming_uniform<S>({ec[2], ec[1], 3, 3}, ec[1] * 9, rng));
    enc_w_.push_back(kaiming_uniform<S>({ec[3], ec[2], 3, 3}, ec[2] * 9, rng));
    enc_w_.push_back(kaiming_uniform<S>({ec[3], ec[3], 3, 3}, ec[3] * 9, rng));
    for (int i = 0; i < 5; ++i)
      enc_b_.push_back(Tensor<S>::zeros({enc_w_[i].shape()[0]}, true));

    auto make_decoder = [&](std::vector<Tensor<S>>& ws,
                            std::vector<Tensor<S>>& bs) {
      // Block l consumes the previous block's output (upsampled for l>=1)
      // concatenated with the encoder skip at the same resolution.
      const int skips[5] = {0, ec[3], ec[2], ec[1], ec[0]};
      int prev = ec[3];
      for (int l = 0; l < 5; ++l) {
        const int cin = (l == 0 ? prev : prev + skips[l]);
        ws.push_back(kaiming_uniform<S>({dc[l], cin, 3, 3}, cin * 9, rng));
        bs.push_back(Tensor<S>::zeros({dc[l]}, true));
        prev = dc[l];
      }
    };
    make_decoder(dec_d_w_, dec_d_b_);
    make_decoder(dec_s_w_, dec_s_b_);

    depth_head_w_ = kaiming_uniform<S>({1, dc[4], 3, 3}, dc[4] * 9, rng);
    depth_head_b_ = Tensor<S>::zeros({1}, true);
    seg_head_w_ =
        kaiming_uniform<S>({cfg.num_classes, dc[4], 3, 3}, dc[4] * 9, rng);
    seg_head_b_ = Tensor<S>::zeros({cfg.num_classes}, true);

    if (cfg.cma_enabled) {
      for (int l : cfg.cma.layers) {
        if (l < 0 || l > 4) throw std::invalid_argument("cma: bad layer id");
        cma_d_.emplace(l, HeadEmbeddings<S>::init(dc[l], cfg.cma, rng));
        cma_s_.emplace(l, HeadEmbeddings<S>::init(dc[l], cfg.cma, rng));
      }
    }

    // Pose network: small conv encoder on the channel-concatenated pair.
    const int pc[4] = {16, 32, 64, 64};
    int prev = 6;
    for (int i = 0; i < 4; ++i) {
      pose_w_.push_back(kaiming_uniform<S>({pc[i], prev, 3, 3}, prev * 9, rng));
      pose_b_.push_back(Tensor<S>::zeros({pc[i]}, true));
      prev = pc[i];
    }
    pose_head_w_ = kaiming_uniform<S>({6, prev, 1, 1}, prev, rng);
    pose_head_b_ = Tensor<S>::zeros({6}, true);
  }

  const BackboneConfig& config() const { return cfg_; }

  // 5 feature maps at strides 1, 2, 4, 8, 16.
  std::vector<Tensor<S>> encode(const Tensor<S>& image) const {
    if (image.shape() != Shape{1, 3, cfg_.height, cfg_.width})
      throw std::invalid_argument("encode: image shape mismatch");
    std::vector<Tensor<S>> feats;
    Tensor<S> x = image;
    for (int i = 0; i < 5; ++i) {
      x = elu(conv2d(x, enc_w_[i], enc_b_[i], i == 0 ? 1 : 2,
                     i == 0 ? Padding::Reflect : Padding::Zero));
      feats.push_back(x);
    }
    return feats;
  }

  // Joint decode of both decoders; CMA (when enabled) couples them at the
  // configured layers, so block l+1 of each decoder consumes the fused maps.
  NetworkOutputs<S> forward(const Tensor<S>& image) const {
    auto pyr = encode(image);
    NetworkOutputs<S> out;
    Tensor<S> xd = pyr[4];
    Tensor<S> xs = pyr[4];
    for (int l = 0; l < 5; ++l) {
      auto block = [&](Tensor<S> x, const std::vector<Tensor<S>>& ws,
                       const std::vector<Tensor<S>>& bs) {
        if (l > 0) x = concat<S>({upsample2x_nearest(x), pyr[4 - l]}, 1);
        return elu(conv2d(x, ws[l], bs[l]));
      };
      xd = block(xd, dec_d_w_, dec_d_b_);
      xs = block(xs, dec_s_w_, dec_s_b_);
      if (cfg_.cma_enabled && cma_d_.count(l)) {
        auto fused = cma_bidirectional(xd, xs, cma_d_.at(l), cma_s_.at(l));
        xd = fused.first;
        xs = fused.second;
      }
      out.feat_d.push_back(xd);
      out.feat_s.push_back(xs);
    }
    out.disparity = disparity_from_features(xd);
    out.logits = conv2d(xs, seg_head_w_, seg_head_b_);
    return out;
  }

  // Depth-only decode (unit tests for dependency isolation).
  Tensor<S> decode_depth(const std::vector<Tensor<S>>& pyr) const {
    Tensor<S> x = pyr[4];
    for (int l = 0; l < 5; ++l) {
      if (l > 0) x = concat<S>({upsample2x_nearest(x), pyr[4 - l]}, 1);
      x = elu(conv2d(x, dec_d_w_[l], dec_d_b_[l]));
    }
    return disparity_from_features(x);
  }

  // Relative pose from a channel-concatenated frame pair; raw outputs are
  // scaled by 0.01 before use as axis-angle + translation.
  Tensor<S> predict_pose(const Tensor<S>& frame_a,
                         const Tensor<S>& frame_b) const {
    auto x = concat<S>({frame_a, frame_b}, 1);
    for (std::size_t i = 0; i < pose_w_.size(); ++i)
      x = elu(conv2d(x, pose_w_[i], pose_b_[i], 2, Padding::Zero));
    x = conv2d(x, pose_head_w_, pose_head_b_);
    auto pooled = mean(mean(x, 2), 3);  // (1,6,1,1)
    return reshape(pooled, {6}) * S(0.01);
  }

  std::vector<std::pair<std::string, Tensor<S>>> parameters() const {
    std::vector<std::pair<std::string, Tensor<S>>> out;
    for (int i = 0; i < 5; ++i) {
      out.emplace_back("enc.w" + std::to_string(i), enc_w_[i]);
      out.emplace_back("enc.b" + std::to_string(i), enc_b_[i]);
    }
    for (int l = 0; l < 5; ++l) {
      out.emplace_back("dec_d.w" + std::to_string(l), dec_d_w_[l]);
      out.emplace_back("dec_d.b" + std::to_string(l), dec_d_b_[l]);
      out.emplace_back("dec_s.w" + std::to_string(l), dec_s_w_[l]);
      out.emplace_back("dec_s.b" + std::to_string(l), dec_s_b_[l]);
    }
    out.emplace_back("head_d.w", depth_head_w_);
    out.emplace_back("head_d.b", depth_head_b_);
    out.emplace_back("head_s.w", seg_head_w_);
    out.emplace_back("head_s.b", seg_head_b_);
    for (const auto& [l, emb] : cma_d_)
      emb.collect("cma_d.l" + std::to_string(l), out);
    for (const auto& [l, emb] : cma_s_)
      emb.collect("cma_s.l" + std::to_string(l), out);
    for (std::size_t i = 0; i < pose_w_.size(); ++i) {
      out.emplace_back("pose.w" + std::to_string(i), pose_w_[i]);
      out.emplace_back("pose.b" + std::to_string(i), pose_b_[i]);
    }
    out.emplace_back("pose_head.w", pose_head_w_);
    out.emplace_back("pose_head.b", pose_head_b_);
    return out;
  }

 private:
  Tensor<S> disparity_from_features(const Tensor<S>& x) const {
    auto sig = sigmoid(conv2d(x, depth_head_w_, depth_head_b_));
    const S lo = S(1.0 / cfg_.max_depth), hi = S(1.0 / cfg_.min_depth);
    return sig * (hi - lo) + Tensor<S>::scalar(lo);
  }

  BackboneConfig cfg_;
  std::vector<Tensor<S>> enc_w_, enc_b_;
  std::vector<Tensor<S>> dec_d_w_, dec_d_b_, dec_s_w_, dec_s_b_;
  Tensor<S> depth_head_w_, depth_head_b_, seg_head_w_, seg_head_b_;
  std::map<int, HeadEmbeddings<S>> cma_d_, cma_s_;
  std::vector<Tensor<S>> pose_w_, pose_b_;
  Tensor<S> pose_head_w_, pose_head_b_;
};

}  // namespace semdepth
