#include "glip/core/kernels.hpp"

#include <algorithm>
#include <vector>

namespace glip::kernels {

namespace {

// Below this many multiply-adds a parallel region costs more than it saves.
constexpr std::size_t kParallelWork = 1 << 15;

void transpose_into(const double* src, std::size_t rows, std::size_t cols, double* dst) {
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) dst[c * rows + r] = src[r * cols + c];
}

// C rows [row_begin, row_end) of A[M,K] * B[K,N]; A and B contiguous, no transposes.
inline void gemm_rows(std::size_t row_begin, std::size_t row_end, std::size_t N, std::size_t K,
                      const double* A, const double* B, double* C, bool accumulate) {
  for (std::size_t i = row_begin; i < row_end; ++i) {
    double* c = C + i * N;
    if (!accumulate) std::fill(c, c + N, 0.0);
    const double* a = A + i * K;
    for (std::size_t k = 0; k < K; ++k) {
      const double aik = a[k];
      const double* b = B + k * N;
#pragma omp simd
      for (std::size_t j = 0; j < N; ++j) c[j] += aik * b[j];
    }
  }
}

void gemm_serial(std::size_t M, std::size_t N, std::size_t K, const double* A, const double* B,
                 double* C, bool accumulate) {
  gemm_rows(0, M, N, K, A, B, C, accumulate);
}

// Output positions o in [0, n_out) whose input index o*stride + k - pad lands in [0, n_in).
inline void valid_range(std::size_t n_out, std::size_t n_in, std::size_t stride, std::size_t k, std::size_t pad,
                        std::size_t& lo, std::size_t& hi) {
  lo = k >= pad ? 0 : (pad - k + stride - 1) / stride;
  const long last = static_cast<long>(n_in) - 1 + static_cast<long>(pad) - static_cast<long>(k);
  hi = last < 0 ? 0 : std::min(n_out, static_cast<std::size_t>(last) / stride + 1);
  if (lo > hi) lo = hi;
}

void im2col(const Conv3dGeometry& g, const double* x, std::size_t t, double* col) {
  const std::size_t Ho = g.out_h(), Wo = g.out_w();
  const std::size_t plane = g.in_h * g.in_w;
  const std::size_t frame = g.in_ch * plane;
  std::size_t row = 0;
  for (std::size_t ci = 0; ci < g.in_ch; ++ci)
    for (std::size_t dt = 0; dt < g.kt; ++dt) {
      const long ti = static_cast<long>(t + dt) - static_cast<long>(g.pad_t);
      const bool frame_ok = ti >= 0 && ti < static_cast<long>(g.frames);
      const double* src = frame_ok ? x + static_cast<std::size_t>(ti) * frame + ci * plane : nullptr;
      for (std::size_t dh = 0; dh < g.kh; ++dh)
        for (std::size_t dw = 0; dw < g.kw; ++dw, ++row) {
          double* dst = col + row * Ho * Wo;
          std::fill(dst, dst + Ho * Wo, 0.0);
          if (!frame_ok) continue;
          std::size_t h0, h1, w0, w1;
          valid_range(Ho, g.in_h, g.stride, dh, g.pad_h, h0, h1);
          valid_range(Wo, g.in_w, g.stride, dw, g.pad_w, w0, w1);
          for (std::size_t oh = h0; oh < h1; ++oh) {
            const double* s = src + (oh * g.stride + dh - g.pad_h) * g.in_w + dw - g.pad_w;
            double* d = dst + oh * Wo;
            for (std::size_t ow = w0; ow < w1; ++ow) d[ow] = s[ow * g.stride];
          }
        }
    }
}

// Scatter-add the column gradient of output frame t into dx.
void col2im_add(const Conv3dGeometry& g, const double* dcol, std::size_t t, std::size_t ti,
                double* dx) {
  const std::size_t Ho = g.out_h(), Wo = g.out_w();
  const std::size_t plane = g.in_h * g.in_w;
  const std::size_t dt = ti + g.pad_t - t;
  for (std::size_t ci = 0; ci < g.in_ch; ++ci) {
    double* dst = dx + ti * g.in_ch * plane + ci * plane;
    for (std::size_t dh = 0; dh < g.kh; ++dh)
      for (std::size_t dw = 0; dw < g.kw; ++dw) {
        const std::size_t row = ((ci * g.kt + dt) * g.kh + dh) * g.kw + dw;
        const double* src = dcol + row * Ho * Wo;
        std::size_t h0, h1, w0, w1;
        valid_range(Ho, g.in_h, g.stride, dh, g.pad_h, h0, h1);
        valid_range(Wo, g.in_w, g.stride, dw, g.pad_w, w0, w1);
        for (std::size_t oh = h0; oh < h1; ++oh) {
          double* d = dst + (oh * g.stride + dh - g.pad_h) * g.in_w + dw - g.pad_w;
          const double* s = src + oh * Wo;
          for (std::size_t ow = w0; ow < w1; ++ow) d[ow * g.stride] += s[ow];
        }
      }
  }
}

}  // namespace

void gemm(bool trans_a, bool trans_b, std::size_t M, std::size_t N, std::size_t K, const double* A,
          const double* B, double* C, bool accumulate) {
  std::vector<double> a_buf, b_buf;
  if (trans_a) {
    a_buf.resize(M * K);
    transpose_into(A, K, M, a_buf.data());
    A = a_buf.data();
  }
  if (trans_b) {
    b_buf.resize(K * N);
    transpose_into(B, N, K, b_buf.data());
    B = b_buf.data();
  }
  const long rows = static_cast<long>(M);
#pragma omp parallel for schedule(static) if (M * N * K > kParallelWork)
  for (long i = 0; i < rows; ++i)
    gemm_rows(static_cast<std::size_t>(i), static_cast<std::size_t>(i) + 1, N, K, A, B, C, accumulate);
}

void conv3d_forward(const Conv3dGeometry& g, const double* x, const double* w, const double* bias,
                    double* y) {
  const std::size_t HW = g.out_h() * g.out_w();
  const std::size_t P = g.patch();
  const long frames = static_cast<long>(g.frames);
#pragma omp parallel if (g.frames * g.out_ch * HW * P > kParallelWork)
  {
    std::vector<double> col(P * HW);
#pragma omp for schedule(static)
    for (long t = 0; t < frames; ++t) {
      im2col(g, x, static_cast<std::size_t>(t), col.data());
      double* yt = y + static_cast<std::size_t>(t) * g.out_ch * HW;
      gemm_serial(g.out_ch, HW, P, w, col.data(), yt, false);
      if (bias)
        for (std::size_t co = 0; co < g.out_ch; ++co)
          for (std::size_t p = 0; p < HW; ++p) yt[co * HW + p] += bias[co];
    }
  }
}

void conv3d_backward(const Conv3dGeometry& g, const double* x, const double* w, const double* dy,
                     double* dx, double* dw, double* db) {
  const std::size_t HW = g.out_h() * g.out_w();
  const std::size_t P = g.patch();
  const long frames = static_cast<long>(g.frames);
  const bool big = g.frames * g.out_ch * HW * P > kParallelWork;

  if (dw) {
    // One frame's columns at a time keeps the buffer cache-resident.
    std::vector<double> col(P * HW);
    const long out_ch = static_cast<long>(g.out_ch);
    for (std::size_t t = 0; t < g.frames; ++t) {
      im2col(g, x, t, col.data());
#pragma omp parallel for schedule(static) if (big)
      for (long co = 0; co < out_ch; ++co) {
        const double* dyr = dy + (t * g.out_ch + static_cast<std::size_t>(co)) * HW;
        double* dwr = dw + static_cast<std::size_t>(co) * P;
        for (std::size_t r = 0; r < P; ++r) {
          const double* cr = col.data() + r * HW;
          double s = 0.0;
#pragma omp simd reduction(+ : s)
          for (std::size_t p = 0; p < HW; ++p) s += dyr[p] * cr[p];
          dwr[r] += s;
        }
      }
    }
  }
  if (db) {
    for (std::size_t co = 0; co < g.out_ch; ++co) {
      double s = 0.0;
      for (std::size_t t = 0; t < g.frames; ++t) {
        const double* dyr = dy + (t * g.out_ch + co) * HW;
#pragma omp simd reduction(+ : s)
        for (std::size_t p = 0; p < HW; ++p) s += dyr[p];
      }
      db[co] += s;
    }
  }
  if (dx) {
    // dcol_t = W^T dy_t, then each input frame gathers from the output frames it fed.
    std::vector<double> dcols(g.frames * P * HW);
#pragma omp parallel for schedule(static) if (big)
    for (long t = 0; t < frames; ++t) {
      gemm(true, false, P, HW, g.out_ch, w, dy + static_cast<std::size_t>(t) * g.out_ch * HW,
           dcols.data() + t * P * HW, false);
    }
#pragma omp parallel for schedule(static) if (big)
    for (long ti = 0; ti < frames; ++ti) {
      for (std::size_t dt = 0; dt < g.kt; ++dt) {
        const long t = ti + static_cast<long>(g.pad_t) - static_cast<long>(dt);
        if (t < 0 || t >= frames) continue;
        col2im_add(g, dcols.data() + t * P * HW, static_cast<std::size_t>(t),
                   static_cast<std::size_t>(ti), dx);
      }
    }
  }
}

namespace reference {

void gemm(bool trans_a, bool trans_b, std::size_t M, std::size_t N, std::size_t K, const double* A,
          const double* B, double* C, bool accumulate) {
  for (std::size_t i = 0; i < M; ++i)
    for (std::size_t j = 0; j < N; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < K; ++k) {
        const double a = trans_a ? A[k * M + i] : A[i * K + k];
        const double b = trans_b ? B[j * K + k] : B[k * N + j];
        s += a * b;
      }
      C[i * N + j] = accumulate ? C[i * N + j] + s : s;
    }
}

namespace {
inline bool input_at(const Conv3dGeometry& g, std::size_t t, std::size_t dt, std::size_t oh, std::size_t dh,
                     std::size_t ow, std::size_t dw, std::size_t& ti, std::size_t& ih, std::size_t& iw) {
  const long lt = static_cast<long>(t + dt) - static_cast<long>(g.pad_t);
  const long lh = static_cast<long>(oh * g.stride + dh) - static_cast<long>(g.pad_h);
  const long lw = static_cast<long>(ow * g.stride + dw) - static_cast<long>(g.pad_w);
  if (lt < 0 || lt >= static_cast<long>(g.frames) || lh < 0 || lh >= static_cast<long>(g.in_h) || lw < 0 ||
      lw >= static_cast<long>(g.in_w))
    return false;
  ti = static_cast<std::size_t>(lt);
  ih = static_cast<std::size_t>(lh);
  iw = static_cast<std::size_t>(lw);
  return true;
}
}  // namespace

void conv3d_forward(const Conv3dGeometry& g, const double* x, const double* w, const double* bias,
                    double* y) {
  const std::size_t Ho = g.out_h(), Wo = g.out_w();
  for (std::size_t t = 0; t < g.frames; ++t)
    for (std::size_t co = 0; co < g.out_ch; ++co)
      for (std::size_t oh = 0; oh < Ho; ++oh)
        for (std::size_t ow = 0; ow < Wo; ++ow) {
          double s = bias ? bias[co] : 0.0;
          for (std::size_t ci = 0; ci < g.in_ch; ++ci)
            for (std::size_t dt = 0; dt < g.kt; ++dt)
              for (std::size_t dh = 0; dh < g.kh; ++dh)
                for (std::size_t dw = 0; dw < g.kw; ++dw) {
                  std::size_t ti, ih, iw;
                  if (!input_at(g, t, dt, oh, dh, ow, dw, ti, ih, iw)) continue;
                  const double xv = x[((ti * g.in_ch + ci) * g.in_h + ih) * g.in_w + iw];
                  const double wv = w[(((co * g.in_ch + ci) * g.kt + dt) * g.kh + dh) * g.kw + dw];
                  s += xv * wv;
                }
          y[((t * g.out_ch + co) * Ho + oh) * Wo + ow] = s;
        }
}

void conv3d_backward(const Conv3dGeometry& g, const double* x, const double* w, const double* dy,
                     double* dx, double* dw, double* db) {
  const std::size_t Ho = g.out_h(), Wo = g.out_w();
  for (std::size_t t = 0; t < g.frames; ++t)
    for (std::size_t co = 0; co < g.out_ch; ++co)
      for (std::size_t oh = 0; oh < Ho; ++oh)
        for (std::size_t ow = 0; ow < Wo; ++ow) {
          const double gy = dy[((t * g.out_ch + co) * Ho + oh) * Wo + ow];
          if (db) db[co] += gy;
          for (std::size_t ci = 0; ci < g.in_ch; ++ci)
            for (std::size_t dt = 0; dt < g.kt; ++dt)
              for (std::size_t dh = 0; dh < g.kh; ++dh)
                for (std::size_t dwk = 0; dwk < g.kw; ++dwk) {
                  std::size_t ti, ih, iw;
                  if (!input_at(g, t, dt, oh, dh, ow, dwk, ti, ih, iw)) continue;
                  const std::size_t xi = ((ti * g.in_ch + ci) * g.in_h + ih) * g.in_w + iw;
                  const std::size_t wi = (((co * g.in_ch + ci) * g.kt + dt) * g.kh + dh) * g.kw + dwk;
                  if (dx) dx[xi] += gy * w[wi];
                  if (dw) dw[wi] += gy * x[xi];
                }
        }
}

}  // namespace reference

}  // namespace glip::kernels
