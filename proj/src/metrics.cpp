#include "semdepth/metrics.hpp"

#include <algorithm>
#include <cmath>

namespace semdepth {

namespace {
double median(std::vector<double> v) {
  const std::size_t n = v.size();
  std::nth_element(v.begin(), v.begin() + n / 2, v.end());
  double hi = v[n / 2];
  if (n % 2 == 1) return hi;
  std::nth_element(v.begin(), v.begin() + n / 2 - 1, v.end());
  return 0.5 * (hi + v[n / 2 - 1]);
}
}  // namespace

DepthMetrics evaluate_depth(const std::vector<double>& pred,
                            const std::vector<double>& gt,
                            const DepthEvalOptions& opt) {
  if (pred.size() != gt.size())
    throw std::invalid_argument("evaluate_depth: size mismatch");
  std::vector<double> gv, pv;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (gt[i] > 0 && gt[i] <= opt.cap) {
      if (!(pred[i] > 0))
        throw std::invalid_argument("evaluate_depth: non-positive prediction");
      gv.push_back(gt[i]);
      pv.push_back(pred[i]);
    }
  }
  if (gv.empty())
    throw std::invalid_argument("evaluate_depth: no valid ground-truth pixels");

  double s = 1.0;
  if (opt.median_scale) s = median(gv) / median(pv);
  DepthMetrics m;
  for (std::size_t i = 0; i < gv.size(); ++i) {
    const double p = std::clamp(s * pv[i], opt.min_depth, opt.cap);
    const double g = gv[i];
    const double d = g - p;
    m.abs_rel += std::abs(d) / g;
    m.sq_rel += d * d / g;
    m.rms += d * d;
    const double dl = std::log(g) - std::log(p);
    m.rms_log += dl * dl;
    const double ratio = std::max(g / p, p / g);
    m.delta1 += ratio < 1.25;
    m.delta2 += ratio < 1.25 * 1.25;
    m.delta3 += ratio < 1.25 * 1.25 * 1.25;
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

double evaluate_seg(const std::vector<int>& pred, const std::vector<int>& gt,
                    int num_classes) {
  if (pred.size() != gt.size())
    throw std::invalid_argument("evaluate_seg: size mismatch");
  std::vector<long long> tp(num_classes, 0), fp(num_classes, 0),
      fn(num_classes, 0), present(num_classes, 0);
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const int g = gt[i], p = pred[i];
    if (g < 0 || g >= num_classes || p < 0 || p >= num_classes)
      throw std::invalid_argument("evaluate_seg: class id out of range");
    present[g] = 1;
    if (p == g) {
      ++tp[g];
    } else {
      ++fp[p];
      ++fn[g];
    }
  }
  double sum = 0;
  int count = 0;
  for (int c = 0; c < num_classes; ++c) {
    if (!present[c]) continue;
    const double denom = static_cast<double>(tp[c] + fp[c] + fn[c]);
    sum += denom > 0 ? tp[c] / denom : 0.0;
    ++count;
  }
  if (count == 0)
    throw std::invalid_argument("evaluate_seg: no class present in gt");
  return sum / count;
}

}  // namespace semdepth
