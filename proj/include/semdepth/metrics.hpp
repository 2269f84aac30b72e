#pragma once

// Depth evaluation (median scaling, seven standard metrics) and segmentation
// mIoU.

#include <stdexcept>
#include <vector>

namespace semdepth {

struct DepthMetrics {
  double abs_rel = 0, sq_rel = 0, rms = 0, rms_log = 0;
  double delta1 = 0, delta2 = 0, delta3 = 0;
};

struct DepthEvalOptions {
  double cap = 100.0;        // max depth considered, scene units
  double min_depth = 0.1;    // clamp floor after scaling
  bool median_scale = true;  // per-image median(gt)/median(pred)
};

DepthMetrics evaluate_depth(const std::vector<double>& pred,
                            const std::vector<double>& gt,
                            const DepthEvalOptions& opt = {});

// Per-class IoU averaged over classes present in gt.
double evaluate_seg(const std::vector<int>& pred, const std::vector<int>& gt,
                    int num_classes);

}  // namespace semdepth
