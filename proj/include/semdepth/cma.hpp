#pragma once

// Cross-task multi-embedding attention: per-pixel cross-task similarity
// through H projection subspaces, softmax-over-heads weighting, and a
// convolutional fusion layer. Deployed bidirectionally between the depth and
// segmentation decoders.

#include <cmath>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "semdepth/tensor.hpp"

namespace semdepth {

struct CmaConfig {
  int heads = 4;             // H
  double embed_ratio = 2.0;  // C' / C
  std::vector<int> layers = {0, 1, 2};

  void validate() const {
    if (heads < 1) throw std::invalid_argument("cma: heads must be >= 1");
    if (!(embed_ratio > 0))
      throw std::invalid_argument("cma: embed ratio must be > 0");
  }
  int embed_dim(int channels) const {
    return std::max(1, static_cast<int>(channels * embed_ratio));
  }
  bool attaches(int layer) const {
    for (int l : layers)
      if (l == layer) return true;
    return false;
  }
};

template <typename S>
Tensor<S> kaiming_uniform(Shape shape, int fan_in, std::mt19937& rng) {
  const double limit = std::sqrt(1.0 / fan_in);
  std::uniform_real_distribution<double> dist(-limit, limit);
  std::vector<S> data(shape_size(shape));
  for (auto& v : data) v = static_cast<S>(dist(rng));
  return Tensor<S>::from(std::move(shape), std::move(data), true);
}

// Parameters of one CMA direction at one layer: per-head query/key/value 1x1
// embeddings C->C', a shared output projection C'->C, and two 3x3 fusion
// convolutions on the 2C concatenation.
template <typename S>
struct HeadEmbeddings {
  std::vector<Tensor<S>> wq, bq, wk, bk, wv, bv;  // one entry per head
  Tensor<S> ww, bw;
  Tensor<S> fuse1_w, fuse1_b, fuse2_w, fuse2_b;
  int channels = 0, embed = 0;

  static HeadEmbeddings init(int C, const CmaConfig& cfg, std::mt19937& rng) {
    cfg.validate();
    HeadEmbeddings e;
    e.channels = C;
    e.embed = cfg.embed_dim(C);
    for (int h = 0; h < cfg.heads; ++h) {
      e.wq.push_back(kaiming_uniform<S>({e.embed, C, 1, 1}, C, rng));
      e.bq.push_back(Tensor<S>::zeros({e.embed}, true));
      e.wk.push_back(kaiming_uniform<S>({e.embed, C, 1, 1}, C, rng));
      e.bk.push_back(Tensor<S>::zeros({e.embed}, true));
      e.wv.push_back(kaiming_uniform<S>({e.embed, C, 1, 1}, C, rng));
      e.bv.push_back(Tensor<S>::zeros({e.embed}, true));
    }
    e.ww = kaiming_uniform<S>({C, e.embed, 1, 1}, e.embed, rng);
    e.bw = Tensor<S>::zeros({C}, true);
    e.fuse1_w = kaiming_uniform<S>({C, 2 * C, 3, 3}, 2 * C * 9, rng);
    e.fuse1_b = Tensor<S>::zeros({C}, true);
    e.fuse2_w = kaiming_uniform<S>({C, C, 3, 3}, C * 9, rng);
    e.fuse2_b = Tensor<S>::zeros({C}, true);
    return e;
  }

  void collect(const std::string& prefix,
               std::vector<std::pair<std::string, Tensor<S>>>& out) const {
    for (std::size_t h = 0; h < wq.size(); ++h) {
      const std::string hp = prefix + ".h" + std::to_string(h);
      out.emplace_back(hp + ".wq", wq[h]);
      out.emplace_back(hp + ".bq", bq[h]);
      out.emplace_back(hp + ".wk", wk[h]);
      out.emplace_back(hp + ".bk", bk[h]);
      out.emplace_back(hp + ".wv", wv[h]);
      out.emplace_back(hp + ".bv", bv[h]);
    }
    out.emplace_back(prefix + ".ww", ww);
    out.emplace_back(prefix + ".bw", bw);
    out.emplace_back(prefix + ".fuse1_w", fuse1_w);
    out.emplace_back(prefix + ".fuse1_b", fuse1_b);
    out.emplace_back(prefix + ".fuse2_w", fuse2_w);
    out.emplace_back(prefix + ".fuse2_b", fuse2_b);
  }
};

// A^h(i) = <phi_k^h(target(i)), phi_q^h(reference(i))> / sqrt(C'), one
// (N,1,h,w) score map per head. Key and value read the target; the query
// reads the reference.
template <typename S>
std::vector<Tensor<S>> attention_scores(const Tensor<S>& target,
                                        const Tensor<S>& reference,
                                        const HeadEmbeddings<S>& emb) {
  if (target.shape()[2] != reference.shape()[2] ||
      target.shape()[3] != reference.shape()[3])
    throw std::invalid_argument("attention_scores: spatial shape mismatch");
  const S scale = S(1) / static_cast<S>(std::sqrt(static_cast<double>(emb.embed)));
  std::vector<Tensor<S>> scores;
  for (std::size_t h = 0; h < emb.wk.size(); ++h) {
    auto k = conv2d(target, emb.wk[h], emb.bk[h]);
    auto q = conv2d(reference, emb.wq[h], emb.bq[h]);
    scores.push_back(sum(k * q, 1) * scale);
  }
  return scores;
}

// rho: identity for a single head, shift-stabilized softmax over heads
// otherwise. Output is (N,H,h,w). The denominator is an order-invariant sum
// so permuting heads (with their embeddings) leaves the weights bit-exact.
template <typename S>
Tensor<S> normalize_scores(const std::vector<Tensor<S>>& scores) {
  if (scores.size() == 1) return scores[0];
  std::vector<S> shift_v = scores[0].value();
  for (std::size_t h = 1; h < scores.size(); ++h) {
    const auto& v = scores[h].value();
    for (std::size_t j = 0; j < shift_v.size(); ++j)
      shift_v[j] = std::max(shift_v[j], v[j]);
  }
  // constant shift: softmax is invariant to it, so gradients stay exact
  auto shift = Tensor<S>::from(scores[0].shape(), std::move(shift_v));
  std::vector<Tensor<S>> e;
  e.reserve(scores.size());
  for (const auto& s : scores) e.push_back(exp(s - shift));
  auto denom = ordered_sum(e);
  std::vector<Tensor<S>> w;
  w.reserve(e.size());
  for (const auto& eh : e) w.push_back(eh / denom);
  return concat(w, 1);
}

// F'(i) = sum_h rho(A^h(i)) * phi_v^h(target(i)); strictly pixel-wise.
template <typename S>
Tensor<S> refine_features(const Tensor<S>& target, const Tensor<S>& reference,
                          const HeadEmbeddings<S>& emb) {
  auto weights = normalize_scores(attention_scores(target, reference, emb));
  std::vector<Tensor<S>> terms;
  for (std::size_t h = 0; h < emb.wv.size(); ++h) {
    auto v = conv2d(target, emb.wv[h], emb.bv[h]);
    auto w = emb.wv.size() == 1 ? weights
                                : slice(weights, 1, static_cast<int>(h), 1);
    terms.push_back(w * v);
  }
  return terms.size() == 1 ? terms[0] : ordered_sum(terms);
}

// Two 3x3 convolutions (ELU after the first) on [phi_w(F'), F]; output keeps
// the input's channel count and spatial shape and feeds decoder layer l+1.
template <typename S>
Tensor<S> fuse(const Tensor<S>& original, const Tensor<S>& refined,
               const HeadEmbeddings<S>& emb) {
  auto projected = conv2d(refined, emb.ww, emb.bw);
  if (projected.shape() != original.shape())
    throw std::invalid_argument("fuse: channel mismatch after projection");
  auto cat = concat<S>({projected, original}, 1);
  auto mid = elu(conv2d(cat, emb.fuse1_w, emb.fuse1_b, 1, Padding::Zero));
  return conv2d(mid, emb.fuse2_w, emb.fuse2_b, 1, Padding::Zero);
}

template <typename S>
Tensor<S> cma_apply(const Tensor<S>& target, const Tensor<S>& reference,
                    const HeadEmbeddings<S>& emb) {
  return fuse(target, refine_features(target, reference, emb), emb);
}

// Two independent CMA applications with roles swapped, both reading the same
// input features (no sequential dependency).
template <typename S>
std::pair<Tensor<S>, Tensor<S>> cma_bidirectional(
    const Tensor<S>& depth_features, const Tensor<S>& seg_features,
    const HeadEmbeddings<S>& depth_emb, const HeadEmbeddings<S>& seg_emb) {
  return {cma_apply(depth_features, seg_features, depth_emb),
          cma_apply(seg_features, depth_features, seg_emb)};
}

}  // namespace semdepth
