#pragma once

// Low-level dense kernels shared by the tensor ops. Each kernel has an
// OpenMP-parallel version (used by the library) and a serial reference
// version under kernels::ref (used by tests and the benchmark to check
// the parallel path).

#include <cstddef>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace semdepth::kernels {

enum class Padding { Zero, Reflect };

// Reflect index for pad=1 windows: -1 -> 1, n -> n-2.
inline int reflect(int i, int n) {
  if (i < 0) return -i;
  if (i >= n) return 2 * n - i - 2;
  return i;
}

// Output-column range [xa, xb) whose raw input column x*stride+off stays
// inside [0, W); columns outside it only contribute under reflect padding.
inline void col_range(int Wo, int W, int stride, int off, int& xa, int& xb) {
  xa = off >= 0 ? 0 : (-off + stride - 1) / stride;
  if (xa > Wo) xa = Wo;
  xb = (W - 1 - off) / stride + 1;
  if (xb < xa) xb = xa;
  if (xb > Wo) xb = Wo;
}

// The kernels below are organized as per-(ky,kx) row sweeps: the in-range
// column span is a branch-free inner loop the compiler can vectorize, and
// the few out-of-range columns are touched only under reflect padding.

template <typename S>
void conv2d_forward(const S* in, const S* w, const S* b, S* out, int N,
                    int Cin, int H, int W, int Cout, int K, int stride,
                    Padding pad) {
  const int P = K / 2;
  const int Ho = (H + 2 * P - K) / stride + 1;
  const int Wo = (W + 2 * P - K) / stride + 1;
#pragma omp parallel for collapse(2) schedule(static)
  for (int n = 0; n < N; ++n) {
    for (int o = 0; o < Cout; ++o) {
      S* op = out + ((static_cast<std::size_t>(n) * Cout + o) * Ho) * Wo;
      const S bias = b ? b[o] : S(0);
      for (int k = 0; k < Ho * Wo; ++k) op[k] = bias;
      for (int i = 0; i < Cin; ++i) {
        const S* ip = in + ((static_cast<std::size_t>(n) * Cin + i) * H) * W;
        const S* wp = w + ((static_cast<std::size_t>(o) * Cin + i) * K) * K;
        for (int ky = 0; ky < K; ++ky) {
          for (int kx = 0; kx < K; ++kx) {
            const S wv = wp[ky * K + kx];
            const int off = kx - P;
            int xa, xb;
            col_range(Wo, W, stride, off, xa, xb);
            for (int y = 0; y < Ho; ++y) {
              int iy = y * stride + ky - P;
              if (iy < 0 || iy >= H) {
                if (pad != Padding::Reflect) continue;
                iy = reflect(iy, H);
              }
              const S* irow = ip + static_cast<std::size_t>(iy) * W;
              S* orow = op + static_cast<std::size_t>(y) * Wo;
              if (stride == 1) {
                for (int x = xa; x < xb; ++x) orow[x] += irow[x + off] * wv;
              } else {
                for (int x = xa; x < xb; ++x)
                  orow[x] += irow[x * stride + off] * wv;
              }
              if (pad == Padding::Reflect) {
                for (int x = 0; x < xa; ++x)
                  orow[x] += irow[reflect(x * stride + off, W)] * wv;
                for (int x = xb; x < Wo; ++x)
                  orow[x] += irow[reflect(x * stride + off, W)] * wv;
              }
            }
          }
        }
      }
    }
  }
}

// Gradient w.r.t. the input. Parallel over input channels so accumulation
// targets are disjoint across threads.
template <typename S>
void conv2d_backward_input(const S* go, const S* w, S* gin, int N, int Cin,
                           int H, int W, int Cout, int K, int stride,
                           Padding pad) {
  const int P = K / 2;
  const int Ho = (H + 2 * P - K) / stride + 1;
  const int Wo = (W + 2 * P - K) / stride + 1;
#pragma omp parallel for collapse(2) schedule(static)
  for (int n = 0; n < N; ++n) {
    for (int i = 0; i < Cin; ++i) {
      S* gp = gin + ((static_cast<std::size_t>(n) * Cin + i) * H) * W;
      for (int o = 0; o < Cout; ++o) {
        const S* gop = go + ((static_cast<std::size_t>(n) * Cout + o) * Ho) * Wo;
        const S* wp = w + ((static_cast<std::size_t>(o) * Cin + i) * K) * K;
        for (int ky = 0; ky < K; ++ky) {
          for (int kx = 0; kx < K; ++kx) {
            const S wv = wp[ky * K + kx];
            const int off = kx - P;
            int xa, xb;
            col_range(Wo, W, stride, off, xa, xb);
            for (int y = 0; y < Ho; ++y) {
              int iy = y * stride + ky - P;
              if (iy < 0 || iy >= H) {
                if (pad != Padding::Reflect) continue;
                iy = reflect(iy, H);
              }
              const S* grow = gop + static_cast<std::size_t>(y) * Wo;
              S* gin_row = gp + static_cast<std::size_t>(iy) * W;
              if (stride == 1) {
                for (int x = xa; x < xb; ++x) gin_row[x + off] += grow[x] * wv;
              } else {
                for (int x = xa; x < xb; ++x)
                  gin_row[x * stride + off] += grow[x] * wv;
              }
              if (pad == Padding::Reflect) {
                for (int x = 0; x < xa; ++x)
                  gin_row[reflect(x * stride + off, W)] += grow[x] * wv;
                for (int x = xb; x < Wo; ++x)
                  gin_row[reflect(x * stride + off, W)] += grow[x] * wv;
              }
            }
          }
        }
      }
    }
  }
}

template <typename S>
void conv2d_backward_weight(const S* go, const S* in, S* gw, S* gb, int N,
                            int Cin, int H, int W, int Cout, int K, int stride,
                            Padding pad) {
  const int P = K / 2;
  const int Ho = (H + 2 * P - K) / stride + 1;
  const int Wo = (W + 2 * P - K) / stride + 1;
#pragma omp parallel for schedule(static)
  for (int o = 0; o < Cout; ++o) {
    for (int n = 0; n < N; ++n) {
      const S* gop = go + ((static_cast<std::size_t>(n) * Cout + o) * Ho) * Wo;
      if (gb) {
        S acc = S(0);
        for (int k = 0; k < Ho * Wo; ++k) acc += gop[k];
        gb[o] += acc;
      }
      for (int i = 0; i < Cin; ++i) {
        const S* ip = in + ((static_cast<std::size_t>(n) * Cin + i) * H) * W;
        S* gwp = gw + ((static_cast<std::size_t>(o) * Cin + i) * K) * K;
        for (int ky = 0; ky < K; ++ky) {
          for (int kx = 0; kx < K; ++kx) {
            const int off = kx - P;
            int xa, xb;
            col_range(Wo, W, stride, off, xa, xb);
            S acc = S(0);
            for (int y = 0; y < Ho; ++y) {
              int iy = y * stride + ky - P;
              if (iy < 0 || iy >= H) {
                if (pad != Padding::Reflect) continue;
                iy = reflect(iy, H);
              }
              const S* grow = gop + static_cast<std::size_t>(y) * Wo;
              const S* irow = ip + static_cast<std::size_t>(iy) * W;
              if (stride == 1) {
                for (int x = xa; x < xb; ++x) acc += grow[x] * irow[x + off];
              } else {
                for (int x = xa; x < xb; ++x)
                  acc += grow[x] * irow[x * stride + off];
              }
              if (pad == Padding::Reflect) {
                for (int x = 0; x < xa; ++x)
                  acc += grow[x] * irow[reflect(x * stride + off, W)];
                for (int x = xb; x < Wo; ++x)
                  acc += grow[x] * irow[reflect(x * stride + off, W)];
              }
            }
            gwp[ky * K + kx] += acc;
          }
        }
      }
    }
  }
}

// 3x3 mean filter, stride 1, reflect padding (the SSIM window).
template <typename S>
void avg_pool3_forward(const S* in, S* out, int N, int C, int H, int W) {
#pragma omp parallel for collapse(2) schedule(static)
  for (int n = 0; n < N; ++n) {
    for (int c = 0; c < C; ++c) {
      const S* ip = in + ((static_cast<std::size_t>(n) * C + c) * H) * W;
      S* op = out + ((static_cast<std::size_t>(n) * C + c) * H) * W;
      // Separable: vertical 3-tap sum into a scratch row, then horizontal.
      std::vector<S> col(W);
      for (int y = 0; y < H; ++y) {
        const S* r0 = ip + static_cast<std::size_t>(reflect(y - 1, H)) * W;
        const S* r1 = ip + static_cast<std::size_t>(y) * W;
        const S* r2 = ip + static_cast<std::size_t>(reflect(y + 1, H)) * W;
        for (int x = 0; x < W; ++x) col[x] = r0[x] + r1[x] + r2[x];
        S* orow = op + static_cast<std::size_t>(y) * W;
        orow[0] = (col[reflect(-1, W)] + col[0] + col[1]) / S(9);
        for (int x = 1; x < W - 1; ++x)
          orow[x] = (col[x - 1] + col[x] + col[x + 1]) / S(9);
        orow[W - 1] = (col[W - 2] + col[W - 1] + col[reflect(W, W)]) / S(9);
      }
    }
  }
}

template <typename S>
void avg_pool3_backward(const S* go, S* gin, int N, int C, int H, int W) {
#pragma omp parallel for collapse(2) schedule(static)
  for (int n = 0; n < N; ++n) {
    for (int c = 0; c < C; ++c) {
      const S* gop = go + ((static_cast<std::size_t>(n) * C + c) * H) * W;
      S* gp = gin + ((static_cast<std::size_t>(n) * C + c) * H) * W;
      for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
          const S g = gop[y * W + x] / S(9);
          for (int dy = -1; dy <= 1; ++dy) {
            int iy = reflect(y + dy, H);
            for (int dx = -1; dx <= 1; ++dx) {
              int ix = reflect(x + dx, W);
              gp[iy * W + ix] += g;
            }
          }
        }
      }
    }
  }
}

// Bilinear sampling with clamp-to-edge. Coordinates are pixel positions in
// the source image; one (u,v) pair per output pixel, shared across channels.
template <typename S>
void bilinear_sample_forward(const S* src, const S* u, const S* v, S* out,
                             int N, int C, int H, int W) {
#pragma omp parallel for collapse(2) schedule(static)
  for (int n = 0; n < N; ++n) {
    for (int c = 0; c < C; ++c) {
      const S* sp = src + ((static_cast<std::size_t>(n) * C + c) * H) * W;
      S* op = out + ((static_cast<std::size_t>(n) * C + c) * H) * W;
      const S* up = u + static_cast<std::size_t>(n) * H * W;
      const S* vp = v + static_cast<std::size_t>(n) * H * W;
      for (int k = 0; k < H * W; ++k) {
        S x = up[k];
        S y = vp[k];
        if (x < S(0)) x = S(0);
        if (x > S(W - 1)) x = S(W - 1);
        if (y < S(0)) y = S(0);
        if (y > S(H - 1)) y = S(H - 1);
        int x0 = static_cast<int>(x);
        int y0 = static_cast<int>(y);
        if (x0 > W - 2) x0 = W - 2;
        if (y0 > H - 2) y0 = H - 2;
        if (W == 1) x0 = 0;
        if (H == 1) y0 = 0;
        const int x1 = W == 1 ? 0 : x0 + 1;
        const int y1 = H == 1 ? 0 : y0 + 1;
        const S fx = x - S(x0);
        const S fy = y - S(y0);
        const S v00 = sp[y0 * W + x0], v01 = sp[y0 * W + x1];
        const S v10 = sp[y1 * W + x0], v11 = sp[y1 * W + x1];
        op[k] = (S(1) - fy) * ((S(1) - fx) * v00 + fx * v01) +
                fy * ((S(1) - fx) * v10 + fx * v11);
      }
    }
  }
}

namespace ref {

// Serial reference implementations, kept deliberately close to the textbook
// formulas. Used to validate the OpenMP kernels and in the benchmark.

template <typename S>
void conv2d_forward(const S* in, const S* w, const S* b, S* out, int N,
                    int Cin, int H, int W, int Cout, int K, int stride,
                    Padding pad) {
  const int P = K / 2;
  const int Ho = (H + 2 * P - K) / stride + 1;
  const int Wo = (W + 2 * P - K) / stride + 1;
  for (int n = 0; n < N; ++n)
    for (int o = 0; o < Cout; ++o)
      for (int y = 0; y < Ho; ++y)
        for (int x = 0; x < Wo; ++x) {
          S acc = b ? b[o] : S(0);
          for (int i = 0; i < Cin; ++i)
            for (int ky = 0; ky < K; ++ky)
              for (int kx = 0; kx < K; ++kx) {
                int iy = y * stride + ky - P;
                int ix = x * stride + kx - P;
                if (pad == Padding::Reflect) {
                  iy = reflect(iy, H);
                  ix = reflect(ix, W);
                } else if (iy < 0 || iy >= H || ix < 0 || ix >= W) {
                  continue;
                }
                acc += in[((static_cast<std::size_t>(n) * Cin + i) * H + iy) * W + ix] *
                       w[((static_cast<std::size_t>(o) * Cin + i) * K + ky) * K + kx];
              }
          out[((static_cast<std::size_t>(n) * Cout + o) * Ho + y) * Wo + x] = acc;
        }
}

template <typename S>
void avg_pool3_forward(const S* in, S* out, int N, int C, int H, int W) {
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c)
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
          S acc = S(0);
          for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx)
              acc += in[((static_cast<std::size_t>(n) * C + c) * H +
                         reflect(y + dy, H)) * W + reflect(x + dx, W)];
          out[((static_cast<std::size_t>(n) * C + c) * H + y) * W + x] = acc / S(9);
        }
}

}  // namespace ref

}  // namespace semdepth::kernels
