#pragma once

// Training loop: Adam on all network parameters, learning-rate milestones,
// per-epoch metrics log, checkpoint save/load.

#include <string>
#include <vector>

#include "semdepth/io.hpp"
#include "semdepth/losses.hpp"
#include "semdepth/metrics.hpp"
#include "semdepth/network.hpp"
#include "semdepth/sgt.hpp"
#include "semdepth/synth.hpp"

namespace semdepth {

struct TrainConfig {
  int epochs = 20;
  int batch_size = 4;
  double learning_rate = 1.5e-4;
  std::vector<int> milestones = {10, 15};  // epochs after which lr decays
  double decay = 0.1;
  double grad_clip = 10.0;  // global-norm clip per batch; 0 disables
  LossWeights weights;      // alpha=0.85, beta=0.001, gamma=0.3, delta=0.1
  SgtConfig sgt;            // K=5, m=0.3, T=K-1, layers {1,2,3}
  BackboneConfig backbone;  // includes CmaConfig (H=4, C'=2C, layers {0,1,2})
  bool seg_enabled = true;  // train the segmentation branch with L_CE
  bool sgt_enabled = true;
  unsigned seed = 1;
  int pseudo_label_jitter = 1;      // px, noise applied to training labels
  double pseudo_label_flip = 0.005;
  int eval_samples = 24;            // per-epoch metric subset

  void validate() const;
};

struct EpochStats {
  int epoch = 0;
  double lr = 0, loss = 0, l_ph = 0, l_sm = 0, l_ce = 0, l_sgt = 0;
  DepthMetrics depth;
  double miou = 0;
};

struct TrainResult {
  std::vector<EpochStats> epochs;
  std::string checkpoint_path;
  std::string log_path;
};

class Adam {
 public:
  Adam(double lr, double beta1 = 0.9, double beta2 = 0.999,
       double eps = 1e-8);

  void set_learning_rate(double lr) { lr_ = lr; }
  double learning_rate() const { return lr_; }

  // One update from externally accumulated gradients, index-aligned with the
  // parameter list.
  void step(std::vector<std::pair<std::string, TensorF>>& params,
            const std::vector<std::vector<float>>& grads);

 private:
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

TrainResult train(const TrainConfig& config,
                  const std::vector<SceneSample>& dataset,
                  const std::string& out_dir);

void save_checkpoint(const Network<float>& net, const std::string& path);
void load_checkpoint(Network<float>& net, const std::string& path);

// Backbone hyperparameters recorded in a checkpoint's "__meta" entry.
BackboneConfig checkpoint_backbone(const std::string& path);

// Training settings from a key=value file; rejects unknown keys.
TrainConfig parse_train_config(Config& cfg);

// Depth metrics of a trained network over (a subset of) a dataset.
DepthMetrics evaluate_network_depth(const Network<float>& net,
                                    const std::vector<SceneSample>& dataset,
                                    int max_samples, double cap);
double evaluate_network_seg(const Network<float>& net,
                            const std::vector<SceneSample>& dataset,
                            int max_samples);

// Full training objective for one frame triplet, as a graph tensor
// (exposed for descent probes and ablation-equivalence tests).
TensorF training_loss(const Network<float>& net, const SceneSample& sample,
                      const std::vector<int>& pseudo_labels,
                      const TrainConfig& cfg);

// Disparity map (H*W) predicted for one RGB frame.
std::vector<float> predict_disparity(const Network<float>& net,
                                     const std::vector<float>& rgb, int height,
                                     int width);

// Boundary-sharpness probe: F-score of depth edges (disparity gradient above
// the given percentile) against semantic boundary pixels, with a pixel match
// tolerance.
double edge_f_score(const std::vector<float>& disparity,
                    const std::vector<int>& semantics, int height, int width,
                    double percentile = 95.0, int tolerance = 2);

}  // namespace semdepth
