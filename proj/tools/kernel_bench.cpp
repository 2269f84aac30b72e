// Micro-benchmark: OpenMP kernels vs their serial reference implementations.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <random>
#include <vector>

#include "semdepth/kernels.hpp"

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

template <class F>
double time_best_of(int reps, F&& fn) {
  double best = 1e30;
  for (int r = 0; r < reps; ++r) {
    auto t0 = Clock::now();
    fn();
    best = std::min(best, ms_since(t0));
  }
  return best;
}

}  // namespace

int main() {
  using namespace semdepth::kernels;
  std::mt19937 rng(7);
  std::uniform_real_distribution<float> d(-1, 1);

  const int N = 1, Cin = 32, H = 64, W = 192, Cout = 32, K = 3;
  std::vector<float> x(static_cast<std::size_t>(N) * Cin * H * W);
  std::vector<float> w(static_cast<std::size_t>(Cout) * Cin * K * K);
  std::vector<float> b(Cout);
  for (auto& v : x) v = d(rng);
  for (auto& v : w) v = d(rng);
  for (auto& v : b) v = d(rng);
  std::vector<float> out(static_cast<std::size_t>(N) * Cout * H * W);
  std::vector<float> ref(out.size());

  const double t_omp = time_best_of(5, [&] {
    conv2d_forward(x.data(), w.data(), b.data(), out.data(), N, Cin, H, W,
                   Cout, K, 1, Padding::Zero);
  });
  const double t_ref = time_best_of(5, [&] {
    semdepth::kernels::ref::conv2d_forward(x.data(), w.data(), b.data(),
                                           ref.data(), N, Cin, H, W, Cout, K,
                                           1, Padding::Zero);
  });
  float worst = 0;
  for (std::size_t i = 0; i < out.size(); ++i)
    worst = std::max(worst, std::abs(out[i] - ref[i]));
  std::printf("conv2d 3x3 %dx%dx%dx%d: omp %.2f ms, serial %.2f ms, "
              "speedup %.2fx, max dev %.2g\n",
              Cin, H, W, Cout, t_omp, t_ref, t_ref / t_omp, worst);

  std::vector<float> pooled(x.size()), pooled_ref(x.size());
  const double p_omp = time_best_of(5, [&] {
    avg_pool3_forward(x.data(), pooled.data(), N, Cin, H, W);
  });
  const double p_ref = time_best_of(5, [&] {
    semdepth::kernels::ref::avg_pool3_forward(x.data(), pooled_ref.data(), N,
                                              Cin, H, W);
  });
  worst = 0;
  for (std::size_t i = 0; i < pooled.size(); ++i)
    worst = std::max(worst, std::abs(pooled[i] - pooled_ref[i]));
  std::printf("avg_pool3 %dx%dx%d: omp %.2f ms, serial %.2f ms, "
              "speedup %.2fx, max dev %.2g\n",
              Cin, H, W, p_omp, p_ref, p_ref / p_omp, worst);
  return worst < 1e-5f ? 0 : 1;
}
