#pragma once

// Hot loops behind the tensor ops. The default entry points use OpenMP
// over an outer data-parallel axis (rows, frames or output channels) so that
// every output element is written by exactly one thread and the summation
// order never depends on the thread count. `reference::` holds straight-line
// serial versions used as oracles in tests and as the benchmark baseline.

#include <cstddef>

namespace glip::kernels {

/// C[M,N] (+)= op(A)[M,K] * op(B)[K,N], all row-major.
/// With trans_a, A is stored K x M; with trans_b, B is stored N x K.
void gemm(bool trans_a, bool trans_b, std::size_t M, std::size_t N, std::size_t K, const double* A,
          const double* B, double* C, bool accumulate);

/// Frame-major video convolution: input T x Cin x H x W, weight
/// Cout x Cin x kt x kh x kw, output T x Cout x Ho x Wo. Temporal stride is 1
/// with zero frames outside [0, T); spatial stride/padding are symmetric.
struct Conv3dGeometry {
  std::size_t frames = 1;
  std::size_t in_ch = 1, in_h = 1, in_w = 1;
  std::size_t out_ch = 1;
  std::size_t kt = 1, kh = 1, kw = 1;
  std::size_t stride = 1;
  std::size_t pad_t = 0, pad_h = 0, pad_w = 0;

  std::size_t out_h() const { return (in_h + 2 * pad_h - kh) / stride + 1; }
  std::size_t out_w() const { return (in_w + 2 * pad_w - kw) / stride + 1; }
  std::size_t patch() const { return in_ch * kt * kh * kw; }
};

void conv3d_forward(const Conv3dGeometry& g, const double* x, const double* w, const double* bias,
                    double* y);

/// Accumulates into whichever of dx / dw / db is non-null.
void conv3d_backward(const Conv3dGeometry& g, const double* x, const double* w, const double* dy,
                     double* dx, double* dw, double* db);

namespace reference {

void gemm(bool trans_a, bool trans_b, std::size_t M, std::size_t N, std::size_t K, const double* A,
          const double* B, double* C, bool accumulate);

void conv3d_forward(const Conv3dGeometry& g, const double* x, const double* w, const double* bias,
                    double* y);

void conv3d_backward(const Conv3dGeometry& g, const double* x, const double* w, const double* dy,
                     double* dx, double* dw, double* db);

}  // namespace reference

}  // namespace glip::kernels
