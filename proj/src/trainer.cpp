#include "semdepth/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <stdexcept>

#include "semdepth/geometry.hpp"

namespace semdepth {

void TrainConfig::validate() const {
  if (epochs < 1 || batch_size < 1)
    throw std::invalid_argument("train config: bad epochs or batch size");
  if (!(learning_rate > 0))
    throw std::invalid_argument("train config: learning rate must be > 0");
  if (grad_clip < 0)
    throw std::invalid_argument("train config: grad_clip must be >= 0");
  for (std::size_t i = 1; i < milestones.size(); ++i)
    if (milestones[i] <= milestones[i - 1])
      throw std::invalid_argument("train config: milestones must be strictly increasing");
  weights.validate();
  sgt.validate();
  backbone.validate();
}

Adam::Adam(double lr, double beta1, double beta2, double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

void Adam::step(std::vector<std::pair<std::string, TensorF>>& params,
                const std::vector<std::vector<float>>& grads) {
  if (m_.empty()) {
    m_.resize(params.size());
    v_.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_[i].assign(params[i].second.size(), 0.0);
      v_[i].assign(params[i].second.size(), 0.0);
    }
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, t_);
  const double bc2 = 1.0 - std::pow(beta2_, t_);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& value = params[i].second.value_mut();
    const auto& g = grads[i];
    for (std::size_t k = 0; k < value.size(); ++k) {
      m_[i][k] = beta1_ * m_[i][k] + (1 - beta1_) * g[k];
      v_[i][k] = beta2_ * v_[i][k] + (1 - beta2_) * g[k] * g[k];
      const double mh = m_[i][k] / bc1;
      const double vh = v_[i][k] / bc2;
      value[k] -= static_cast<float>(lr_ * mh / (std::sqrt(vh) + eps_));
    }
  }
}

namespace {

TensorF image_tensor(const std::vector<float>& rgb, int h, int w) {
  return TensorF::from({1, 3, h, w}, rgb);
}

struct SampleLoss {
  TensorF total;
  float ph = 0, sm = 0, ce = 0, sgt = 0;
};

// Forward pass and loss assembly for one frame triplet.
SampleLoss sample_loss(const Network<float>& net, const SceneSample& sample,
                       const std::vector<int>& pseudo_labels,
                       const TrainConfig& cfg) {
  const int H = sample.height, W = sample.width;
  auto target = image_tensor(sample.frames[1], H, W);
  auto prev = image_tensor(sample.frames[0], H, W);
  auto next = image_tensor(sample.frames[2], H, W);

  auto out = net.forward(target);
  auto depth = TensorF::scalar(1.f) / out.disparity;

  const float alpha = static_cast<float>(cfg.weights.alpha);
  const PixelGrid grid = PixelGrid::make(H, W);
  ReprojectionBundle<float> bundle;
  const TensorF refs[2] = {prev, next};
  for (int f = 0; f < 2; ++f) {
    auto pose = net.predict_pose(target, refs[f]);
    auto coords = reproject(grid, depth, sample.intrinsics, pose);
    auto warped = bilinear_warp(refs[f], coords);
    bundle.warped[f] = photometric_loss(target, warped, alpha);
    bundle.identity[f] = photometric_loss(target, refs[f], alpha);
    bundle.valid[f] = std::move(coords.valid);
  }
  auto masked = min_reprojection_automask(bundle);

  SampleLoss r;
  auto total = masked.loss;
  r.ph = masked.loss.item();

  auto smooth = smoothness_loss(out.disparity, target);
  r.sm = smooth.item();
  total = total + smooth * static_cast<float>(cfg.weights.beta);

  if (cfg.seg_enabled) {
    auto ce = cross_entropy_loss(out.logits, pseudo_labels, -1);
    r.ce = ce.item();
    total = total + ce * static_cast<float>(cfg.weights.gamma);
  }
  if (cfg.sgt_enabled) {
    for (int l : cfg.sgt.layers) {
      const auto& feat = out.feat_d[l];
      auto labels_l = resize_labels_nearest(pseudo_labels, H, W,
                                            feat.shape()[2], feat.shape()[3]);
      auto lsgt = sgt_loss(feat, labels_l, cfg.sgt);
      r.sgt += lsgt.item();
      total = total + lsgt * static_cast<float>(cfg.weights.delta);
    }
  }
  r.total = total;
  return r;
}

}  // namespace

TensorF training_loss(const Network<float>& net, const SceneSample& sample,
                      const std::vector<int>& pseudo_labels,
                      const TrainConfig& cfg) {
  return sample_loss(net, sample, pseudo_labels, cfg).total;
}

std::vector<float> predict_disparity(const Network<float>& net,
                                     const std::vector<float>& rgb, int height,
                                     int width) {
  auto out = net.forward(image_tensor(rgb, height, width));
  return out.disparity.value();
}

DepthMetrics evaluate_network_depth(const Network<float>& net,
                                    const std::vector<SceneSample>& dataset,
                                    int max_samples, double cap) {
  std::vector<double> pred, gt;
  const int n = std::min<int>(max_samples, static_cast<int>(dataset.size()));
  DepthEvalOptions opt;
  opt.cap = cap;
  opt.min_depth = net.config().min_depth;
  DepthMetrics acc;
  for (int i = 0; i < n; ++i) {
    const auto& s = dataset[i];
    auto disp = predict_disparity(net, s.frames[1], s.height, s.width);
    pred.assign(disp.size(), 0.0);
    for (std::size_t k = 0; k < disp.size(); ++k) pred[k] = 1.0 / disp[k];
    gt.assign(s.gt_depth.begin(), s.gt_depth.end());
    const DepthMetrics m = evaluate_depth(pred, gt, opt);
    acc.abs_rel += m.abs_rel;
    acc.sq_rel += m.sq_rel;
    acc.rms += m.rms;
    acc.rms_log += m.rms_log;
    acc.delta1 += m.delta1;
    acc.delta2 += m.delta2;
    acc.delta3 += m.delta3;
  }
  acc.abs_rel /= n;
  acc.sq_rel /= n;
  acc.rms /= n;
  acc.rms_log /= n;
  acc.delta1 /= n;
  acc.delta2 /= n;
  acc.delta3 /= n;
  return acc;
}

double evaluate_network_seg(const Network<float>& net,
                            const std::vector<SceneSample>& dataset,
                            int max_samples) {
  const int n = std::min<int>(max_samples, static_cast<int>(dataset.size()));
  double acc = 0;
  for (int i = 0; i < n; ++i) {
    const auto& s = dataset[i];
    auto out = net.forward(image_tensor(s.frames[1], s.height, s.width));
    const auto& logits = out.logits.value();
    const int C = out.logits.shape()[1];
    const std::size_t hw = static_cast<std::size_t>(s.height) * s.width;
    std::vector<int> pred(hw, 0);
    for (std::size_t k = 0; k < hw; ++k) {
      int best = 0;
      for (int c = 1; c < C; ++c)
        if (logits[c * hw + k] > logits[best * hw + k]) best = c;
      pred[k] = best;
    }
    acc += evaluate_seg(pred, s.gt_semantics, C);
  }
  return acc / n;
}

void save_checkpoint(const Network<float>& net, const std::string& path) {
  // "__meta" carries the backbone hyperparameters so a checkpoint is
  // self-describing; load_checkpoint skips it during parameter matching.
  const BackboneConfig& c = net.config();
  std::vector<float> meta = {
      static_cast<float>(c.height),       static_cast<float>(c.width),
      static_cast<float>(c.enc_channels[0]),
      static_cast<float>(c.enc_channels[1]),
      static_cast<float>(c.enc_channels[2]),
      static_cast<float>(c.enc_channels[3]),
      static_cast<float>(c.num_classes),  static_cast<float>(c.min_depth),
      static_cast<float>(c.max_depth),    c.cma_enabled ? 1.0f : 0.0f,
      static_cast<float>(c.cma.heads),    static_cast<float>(c.cma.embed_ratio)};
  for (int l : c.cma.layers) meta.push_back(static_cast<float>(l));
  std::vector<NamedTensor> tensors;
  tensors.push_back({"__meta", {static_cast<int>(meta.size())}, meta});
  for (const auto& [name, t] : net.parameters())
    tensors.push_back({name, t.shape(), t.value()});
  save_tensors(path, tensors);
}

BackboneConfig checkpoint_backbone(const std::string& path) {
  auto tensors = load_tensors(path);
  if (tensors.empty() || tensors[0].name != "__meta" ||
      tensors[0].data.size() < 12)
    throw std::runtime_error("checkpoint: missing __meta header");
  const auto& m = tensors[0].data;
  BackboneConfig c;
  c.height = static_cast<int>(m[0]);
  c.width = static_cast<int>(m[1]);
  for (int i = 0; i < 4; ++i) c.enc_channels[i] = static_cast<int>(m[2 + i]);
  c.num_classes = static_cast<int>(m[6]);
  c.min_depth = m[7];
  c.max_depth = m[8];
  c.cma_enabled = m[9] != 0.0f;
  c.cma.heads = static_cast<int>(m[10]);
  c.cma.embed_ratio = m[11];
  c.cma.layers.clear();
  for (std::size_t i = 12; i < m.size(); ++i)
    c.cma.layers.push_back(static_cast<int>(m[i]));
  c.validate();
  return c;
}

void load_checkpoint(Network<float>& net, const std::string& path) {
  auto tensors = load_tensors(path);
  if (!tensors.empty() && tensors[0].name == "__meta")
    tensors.erase(tensors.begin());
  auto params = net.parameters();
  if (tensors.size() != params.size())
    throw std::runtime_error("checkpoint: parameter count mismatch (" +
                             std::to_string(tensors.size()) + " vs " +
                             std::to_string(params.size()) + ")");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (tensors[i].name != params[i].first ||
        tensors[i].shape != params[i].second.shape())
      throw std::runtime_error("checkpoint: mismatch at parameter '" +
                               tensors[i].name + "'");
    params[i].second.value_mut() = tensors[i].data;
  }
}

TrainResult train(const TrainConfig& config,
                  const std::vector<SceneSample>& dataset,
                  const std::string& out_dir) {
  config.validate();
  if (dataset.empty()) throw std::invalid_argument("train: empty dataset");
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);

  Network<float> net(config.backbone, config.seed);
  auto params = net.parameters();
  Adam opt(config.learning_rate);
  std::mt19937 shuffle_rng(config.seed + 17);

  // Pseudo-labels: corrupted exact semantics, fixed for the whole run.
  std::vector<std::vector<int>> pseudo(dataset.size());
  for (std::size_t i = 0; i < dataset.size(); ++i)
    pseudo[i] = corrupt_labels(dataset[i].gt_semantics, dataset[i].height,
                               dataset[i].width, config.pseudo_label_jitter,
                               config.pseudo_label_flip,
                               config.backbone.num_classes,
                               config.seed + 1000 + static_cast<unsigned>(i));

  TrainResult result;
  result.log_path = (fs::path(out_dir) / "train_log.txt").string();
  result.checkpoint_path = (fs::path(out_dir) / "model.fsre").string();
  std::ofstream log(result.log_path);
  if (!log) throw std::runtime_error("cannot write log: " + result.log_path);

  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<std::vector<float>> grad_acc(params.size());

  double lr = config.learning_rate;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    for (int ms : config.milestones)
      if (epoch == ms + 1) lr *= config.decay;
    opt.set_learning_rate(lr);
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    EpochStats stats;
    stats.epoch = epoch;
    stats.lr = lr;
    std::size_t steps = 0;
    for (std::size_t start = 0; start < order.size();
         start += config.batch_size) {
      const std::size_t end =
          std::min(order.size(), start + config.batch_size);
      for (auto& g : grad_acc) g.clear();
      for (std::size_t i = 0; i < params.size(); ++i)
        grad_acc[i].assign(params[i].second.size(), 0.f);
      double batch_loss = 0;
      for (std::size_t bi = start; bi < end; ++bi) {
        const auto& sample = dataset[order[bi]];
        SampleLoss sl;
        try {
          sl = sample_loss(net, sample, pseudo[order[bi]], config);
        } catch (const std::runtime_error& e) {
          throw std::runtime_error("training aborted at epoch " +
                                   std::to_string(epoch) + ": " + e.what());
        }
        if (!std::isfinite(sl.total.item()))
          throw std::runtime_error("training aborted: non-finite total loss");
        auto scaled = sl.total / static_cast<float>(end - start);
        backward(scaled);
        for (std::size_t i = 0; i < params.size(); ++i) {
          const auto g = params[i].second.grad();
          for (std::size_t k = 0; k < g.size(); ++k) grad_acc[i][k] += g[k];
        }
        batch_loss += sl.total.item() / (end - start);
        stats.l_ph += sl.ph;
        stats.l_sm += sl.sm;
        stats.l_ce += sl.ce;
        stats.l_sgt += sl.sgt;
      }
      if (config.grad_clip > 0) {
        double sq = 0;
        for (const auto& g : grad_acc)
          for (float v : g) sq += static_cast<double>(v) * v;
        const double norm = std::sqrt(sq);
        if (norm > config.grad_clip) {
          const float s = static_cast<float>(config.grad_clip / norm);
          for (auto& g : grad_acc)
            for (float& v : g) v *= s;
        }
      }
      opt.step(params, grad_acc);
      stats.loss += batch_loss;
      ++steps;
    }
    stats.loss /= steps;
    stats.l_ph /= order.size();
    stats.l_sm /= order.size();
    stats.l_ce /= order.size();
    stats.l_sgt /= order.size();
    stats.depth = evaluate_network_depth(net, dataset, config.eval_samples,
                                         config.backbone.max_depth);
    stats.miou = config.seg_enabled
                     ? evaluate_network_seg(net, dataset, config.eval_samples)
                     : 0.0;
    result.epochs.push_back(stats);

    char line[512];
    std::snprintf(line, sizeof(line),
                  "epoch=%d\tlr=%.3g\tloss=%.6f\tl_ph=%.6f\tl_sm=%.6f\t"
                  "l_ce=%.6f\tl_sgt=%.6f\tabs_rel=%.6f\tsq_rel=%.6f\t"
                  "rms=%.6f\trms_log=%.6f\tdelta1=%.6f\tdelta2=%.6f\t"
                  "delta3=%.6f\tmiou=%.6f",
                  stats.epoch, stats.lr, stats.loss, stats.l_ph, stats.l_sm,
                  stats.l_ce, stats.l_sgt, stats.depth.abs_rel,
                  stats.depth.sq_rel, stats.depth.rms, stats.depth.rms_log,
                  stats.depth.delta1, stats.depth.delta2, stats.depth.delta3,
                  stats.miou);
    log << line << "\n";
    log.flush();
  }
  save_checkpoint(net, result.checkpoint_path);
  return result;
}

double edge_f_score(const std::vector<float>& disparity,
                    const std::vector<int>& semantics, int height, int width,
                    double percentile, int tolerance) {
  const std::size_t hw = static_cast<std::size_t>(height) * width;
  if (disparity.size() != hw || semantics.size() != hw)
    throw std::invalid_argument("edge_f_score: size mismatch");
  // Disparity edges: gradient magnitude above the given percentile.
  std::vector<float> mag(hw, 0.f);
  for (int y = 0; y < height - 1; ++y)
    for (int x = 0; x < width - 1; ++x) {
      const std::size_t k = static_cast<std::size_t>(y) * width + x;
      const float gx = disparity[k + 1] - disparity[k];
      const float gy = disparity[k + width] - disparity[k];
      mag[k] = std::sqrt(gx * gx + gy * gy);
    }
  std::vector<float> sorted(mag);
  std::sort(sorted.begin(), sorted.end());
  const float thr =
      sorted[std::min(hw - 1, static_cast<std::size_t>(hw * percentile / 100.0))];
  std::vector<std::uint8_t> pred_edge(hw, 0), gt_edge(hw, 0);
  for (std::size_t k = 0; k < hw; ++k) pred_edge[k] = mag[k] > thr;
  for (int y = 0; y < height - 1; ++y)
    for (int x = 0; x < width - 1; ++x) {
      const std::size_t k = static_cast<std::size_t>(y) * width + x;
      if (semantics[k] != semantics[k + 1] ||
          semantics[k] != semantics[k + width])
        gt_edge[k] = 1;
    }
  auto near = [&](const std::vector<std::uint8_t>& map, int y, int x) {
    for (int dy = -tolerance; dy <= tolerance; ++dy)
      for (int dx = -tolerance; dx <= tolerance; ++dx) {
        const int yy = y + dy, xx = x + dx;
        if (yy >= 0 && yy < height && xx >= 0 && xx < width &&
            map[static_cast<std::size_t>(yy) * width + xx])
          return true;
      }
    return false;
  };
  std::size_t pred_total = 0, pred_hit = 0, gt_total = 0, gt_hit = 0;
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      const std::size_t k = static_cast<std::size_t>(y) * width + x;
      if (pred_edge[k]) {
        ++pred_total;
        if (near(gt_edge, y, x)) ++pred_hit;
      }
      if (gt_edge[k]) {
        ++gt_total;
        if (near(pred_edge, y, x)) ++gt_hit;
      }
    }
  if (pred_total == 0 || gt_total == 0) return 0.0;
  const double precision = static_cast<double>(pred_hit) / pred_total;
  const double recall = static_cast<double>(gt_hit) / gt_total;
  if (precision + recall == 0) return 0.0;
  return 2 * precision * recall / (precision + recall);
}

TrainConfig parse_train_config(Config& cfg) {
  TrainConfig c;
  c.epochs = cfg.get_int("epochs", c.epochs);
  c.batch_size = cfg.get_int("batch_size", c.batch_size);
  c.learning_rate = cfg.get_double("learning_rate", c.learning_rate);
  c.milestones = cfg.get_int_list("milestones", c.milestones);
  c.decay = cfg.get_double("decay", c.decay);
  c.grad_clip = cfg.get_double("grad_clip", c.grad_clip);
  c.weights.alpha = cfg.get_double("alpha", c.weights.alpha);
  c.weights.beta = cfg.get_double("beta", c.weights.beta);
  c.weights.gamma = cfg.get_double("gamma", c.weights.gamma);
  c.weights.delta = cfg.get_double("delta", c.weights.delta);
  c.sgt.patch_size = cfg.get_int("sgt_patch_size", c.sgt.patch_size);
  c.sgt.margin = cfg.get_double("sgt_margin", c.sgt.margin);
  c.sgt.threshold = cfg.get_int("sgt_threshold", c.sgt.patch_size - 1);
  c.sgt.layers = cfg.get_int_list("sgt_layers", c.sgt.layers);
  c.sgt.weight = c.weights.delta;
  c.sgt_enabled = cfg.get_bool("sgt_enabled", c.sgt_enabled);
  c.seg_enabled = cfg.get_bool("seg_enabled", c.seg_enabled);
  c.backbone.height = cfg.get_int("height", c.backbone.height);
  c.backbone.width = cfg.get_int("width", c.backbone.width);
  auto ec = cfg.get_int_list("enc_channels",
                             {c.backbone.enc_channels.begin(),
                              c.backbone.enc_channels.end()});
  if (ec.size() != 4)
    throw std::invalid_argument("config: enc_channels needs 4 entries");
  std::copy(ec.begin(), ec.end(), c.backbone.enc_channels.begin());
  c.backbone.num_classes = cfg.get_int("num_classes", c.backbone.num_classes);
  c.backbone.min_depth = cfg.get_double("min_depth", c.backbone.min_depth);
  c.backbone.max_depth = cfg.get_double("max_depth", c.backbone.max_depth);
  c.backbone.cma_enabled = cfg.get_bool("cma_enabled", c.backbone.cma_enabled);
  c.backbone.cma.heads = cfg.get_int("cma_heads", c.backbone.cma.heads);
  c.backbone.cma.embed_ratio =
      cfg.get_double("cma_embed_ratio", c.backbone.cma.embed_ratio);
  c.backbone.cma.layers =
      cfg.get_int_list("cma_layers", c.backbone.cma.layers);
  c.seed = static_cast<unsigned>(cfg.get_int("seed", 1));
  c.pseudo_label_jitter =
      cfg.get_int("pseudo_label_jitter", c.pseudo_label_jitter);
  c.pseudo_label_flip =
      cfg.get_double("pseudo_label_flip", c.pseudo_label_flip);
  c.eval_samples = cfg.get_int("eval_samples", c.eval_samples);
  cfg.check_all_consumed();
  c.validate();
  return c;
}

}  // namespace semdepth
