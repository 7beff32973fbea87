#include "glip/core/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "glip/core/kernels.hpp"

namespace glip {

std::size_t normalize_axis(int axis, std::size_t rank) {
  const long r = static_cast<long>(rank);
  const long a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r)
    throw ShapeError("axis " + std::to_string(axis) + " out of range for rank " + std::to_string(rank));
  return static_cast<std::size_t>(a);
}

namespace {

using Impl = std::shared_ptr<TensorImpl>;

// outer x n x inner decomposition around one axis.
struct AxisSplit {
  std::size_t outer = 1, n = 1, inner = 1;
};

AxisSplit split_at(const Shape& s, std::size_t axis) {
  AxisSplit r;
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  r.n = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

// Offsets of a and b for every element of the broadcast result.
struct Broadcast {
  Shape out;
  bool same = false;
  std::vector<std::size_t> ia, ib;
};

Broadcast broadcast(const Shape& sa, const Shape& sb) {
  Broadcast bc;
  if (sa == sb) {
    bc.out = sa;
    bc.same = true;
    return bc;
  }
  const std::size_t r = std::max(sa.size(), sb.size());
  Shape pa(r, 1), pb(r, 1);
  std::copy(sa.begin(), sa.end(), pa.begin() + static_cast<long>(r - sa.size()));
  std::copy(sb.begin(), sb.end(), pb.begin() + static_cast<long>(r - sb.size()));
  bc.out.resize(r);
  for (std::size_t d = 0; d < r; ++d) {
    if (pa[d] != pb[d] && pa[d] != 1 && pb[d] != 1)
      throw ShapeError("cannot broadcast " + shape_str(sa) + " with " + shape_str(sb));
    bc.out[d] = std::max(pa[d], pb[d]);
  }
  std::vector<std::size_t> stride_a(r, 0), stride_b(r, 0);
  std::size_t acc_a = 1, acc_b = 1;
  for (std::size_t d = r; d-- > 0;) {
    stride_a[d] = pa[d] == 1 ? 0 : acc_a;
    stride_b[d] = pb[d] == 1 ? 0 : acc_b;
    acc_a *= pa[d];
    acc_b *= pb[d];
  }
  const std::size_t n = shape_numel(bc.out);
  bc.ia.resize(n);
  bc.ib.resize(n);
  std::vector<std::size_t> idx(r, 0);
  std::size_t oa = 0, ob = 0;
  for (std::size_t i = 0; i < n; ++i) {
    bc.ia[i] = oa;
    bc.ib[i] = ob;
    for (std::size_t d = r; d-- > 0;) {
      if (++idx[d] < bc.out[d]) {
        oa += stride_a[d];
        ob += stride_b[d];
        break;
      }
      oa -= stride_a[d] * (idx[d] - 1);
      ob -= stride_b[d] * (idx[d] - 1);
      idx[d] = 0;
    }
  }
  return bc;
}

// f(x, y) forward; da(x, y, z) and db(x, y, z) are the partials.
template <class F, class DA, class DB>
Tensor binary(const Tensor& a, const Tensor& b, const char* name, F f, DA da, DB db) {
  auto bc = broadcast(a.shape(), b.shape());
  const std::size_t n = shape_numel(bc.out);
  const double* x = a.data().data();
  const double* y = b.data().data();
  std::vector<double> out(n);
  if (bc.same) {
    for (std::size_t i = 0; i < n; ++i) out[i] = f(x[i], y[i]);
  } else {
    for (std::size_t i = 0; i < n; ++i) out[i] = f(x[bc.ia[i]], y[bc.ib[i]]);
  }
  Impl A = a.impl_ptr(), B = b.impl_ptr();
  Shape out_shape = bc.out;
  return Tensor::make_result(
      std::move(out_shape), std::move(out), name, {a, b},
      [A, B, bc = std::move(bc), da, db](const TensorImpl& o) {
        const double* g = o.grad.data();
        const double* z = o.data.data();
        const double* x = A->data.data();
        const double* y = B->data.data();
        const std::size_t n = o.data.size();
        if (double* ga = grad_sink(A)) {
          for (std::size_t i = 0; i < n; ++i) {
            const std::size_t ia = bc.same ? i : bc.ia[i];
            const std::size_t ib = bc.same ? i : bc.ib[i];
            ga[ia] += g[i] * da(x[ia], y[ib], z[i]);
          }
        }
        if (double* gb = grad_sink(B)) {
          for (std::size_t i = 0; i < n; ++i) {
            const std::size_t ia = bc.same ? i : bc.ia[i];
            const std::size_t ib = bc.same ? i : bc.ib[i];
            gb[ib] += g[i] * db(x[ia], y[ib], z[i]);
          }
        }
      });
}

// f(x) forward; df(x, y) derivative given input and output.
template <class F, class DF>
Tensor unary(const Tensor& a, const char* name, F f, DF df) {
  const auto& in = a.data();
  std::vector<double> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = f(in[i]);
  Impl A = a.impl_ptr();
  return Tensor::make_result(a.shape(), std::move(out), name, {a}, [A, df](const TensorImpl& o) {
    double* ga = grad_sink(A);
    if (!ga) return;
    const double* g = o.grad.data();
    for (std::size_t i = 0; i < o.data.size(); ++i) ga[i] += g[i] * df(A->data[i], o.data[i]);
  });
}

void require(bool ok, const std::string& msg) {
  if (!ok) throw ShapeError(msg);
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "add", [](double x, double y) { return x + y; }, [](double, double, double) { return 1.0; },
      [](double, double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "sub", [](double x, double y) { return x - y; }, [](double, double, double) { return 1.0; },
      [](double, double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "mul", [](double x, double y) { return x * y; }, [](double, double y, double) { return y; },
      [](double x, double, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  for (double v : b.data())
    if (v == 0.0) throw DomainError("div: divisor contains zero");
  return binary(
      a, b, "div", [](double x, double y) { return x / y; }, [](double, double y, double) { return 1.0 / y; },
      [](double, double y, double z) { return -z / y; });
}

Tensor add_scalar(const Tensor& a, double s) {
  return unary(
      a, "add_scalar", [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Tensor scale(const Tensor& a, double s) {
  return unary(
      a, "scale", [s](double x) { return x * s; }, [s](double, double) { return s; });
}

Tensor exp(const Tensor& a) {
  return unary(
      a, "exp", [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
  for (double v : a.data())
    if (!(v > 0.0)) throw DomainError("log: operand must be positive, got " + std::to_string(v));
  return unary(
      a, "log", [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor relu(const Tensor& a) {
  return unary(
      a, "relu", [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor gelu(const Tensor& a) {
  constexpr double inv_sqrt2 = 0.70710678118654752440;
  constexpr double inv_sqrt2pi = 0.39894228040143267794;
  return unary(
      a, "gelu", [](double x) { return 0.5 * x * (1.0 + std::erf(x * inv_sqrt2)); },
      [](double x, double) {
        return 0.5 * (1.0 + std::erf(x * inv_sqrt2)) + x * inv_sqrt2pi * std::exp(-0.5 * x * x);
      });
}

Tensor sigmoid(const Tensor& a) {
  return unary(
      a, "sigmoid", [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor silu(const Tensor& a) {
  return unary(
      a, "silu", [](double x) { return x / (1.0 + std::exp(-x)); },
      [](double x, double) {
        const double s = 1.0 / (1.0 + std::exp(-x));
        return s * (1.0 + x * (1.0 - s));
      });
}

Tensor matmul(const Tensor& a, const Tensor& b, bool trans_b) {
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  require(sa.size() >= 2, "matmul: left operand needs rank >= 2, got " + shape_str(sa));
  if (sb.size() == 2) {
    const std::size_t K = sa.back();
    const std::size_t M = a.numel() / K;
    const std::size_t N = trans_b ? sb[0] : sb[1];
    const std::size_t Kb = trans_b ? sb[1] : sb[0];
    require(K == Kb, "matmul: inner dims differ, " + shape_str(sa) + " x " + shape_str(sb) +
                         (trans_b ? " (b transposed)" : ""));
    Shape out_shape(sa.begin(), sa.end() - 1);
    out_shape.push_back(N);
    std::vector<double> out(M * N);
    kernels::gemm(false, trans_b, M, N, K, a.data().data(), b.data().data(), out.data(), false);
    Impl A = a.impl_ptr(), B = b.impl_ptr();
    return Tensor::make_result(out_shape, std::move(out), "matmul", {a, b},
                               [A, B, M, N, K, trans_b](const TensorImpl& o) {
                                 const double* g = o.grad.data();
                                 if (double* ga = grad_sink(A))
                                   kernels::gemm(false, !trans_b, M, K, N, g, B->data.data(), ga, true);
                                 if (double* gb = grad_sink(B)) {
                                   if (trans_b)
                                     kernels::gemm(true, false, N, K, M, g, A->data.data(), gb, true);
                                   else
                                     kernels::gemm(true, false, K, N, M, A->data.data(), g, gb, true);
                                 }
                               });
  }
  require(sa.size() == 3 && sb.size() == 3 && sa[0] == sb[0],
          "matmul: batched form needs [B,M,K] x [B,K,N], got " + shape_str(sa) + " x " + shape_str(sb));
  const std::size_t Bn = sa[0], M = sa[1], K = sa[2];
  const std::size_t N = trans_b ? sb[1] : sb[2];
  require(K == (trans_b ? sb[2] : sb[1]),
          "matmul: inner dims differ, " + shape_str(sa) + " x " + shape_str(sb));
  std::vector<double> out(Bn * M * N);
  for (std::size_t i = 0; i < Bn; ++i)
    kernels::gemm(false, trans_b, M, N, K, a.data().data() + i * M * K, b.data().data() + i * K * N,
                  out.data() + i * M * N, false);
  Impl A = a.impl_ptr(), B = b.impl_ptr();
  return Tensor::make_result({Bn, M, N}, std::move(out), "bmm", {a, b},
                             [A, B, Bn, M, N, K, trans_b](const TensorImpl& o) {
                               double* ga = grad_sink(A);
                               double* gb = grad_sink(B);
                               for (std::size_t i = 0; i < Bn; ++i) {
                                 const double* g = o.grad.data() + i * M * N;
                                 const double* ad = A->data.data() + i * M * K;
                                 const double* bd = B->data.data() + i * K * N;
                                 if (ga) kernels::gemm(false, !trans_b, M, K, N, g, bd, ga + i * M * K, true);
                                 if (gb) {
                                   if (trans_b)
                                     kernels::gemm(true, false, N, K, M, g, ad, gb + i * K * N, true);
                                   else
                                     kernels::gemm(true, false, K, N, M, ad, g, gb + i * K * N, true);
                                 }
                               }
                             });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  const auto& sx = x.shape();
  const auto& sw = weight.shape();
  require(sw.size() == 2 && sx.back() == sw[0],
          "linear: input " + shape_str(sx) + " incompatible with weight " + shape_str(sw));
  const std::size_t K = sw[0], N = sw[1], M = x.numel() / K;
  if (bias.defined())
    require(bias.numel() == N, "linear: bias " + shape_str(bias.shape()) + " vs out features " + std::to_string(N));
  Shape out_shape(sx.begin(), sx.end() - 1);
  out_shape.push_back(N);
  std::vector<double> out(M * N);
  kernels::gemm(false, false, M, N, K, x.data().data(), weight.data().data(), out.data(), false);
  if (bias.defined()) {
    const double* bd = bias.data().data();
    for (std::size_t i = 0; i < M; ++i)
      for (std::size_t j = 0; j < N; ++j) out[i * N + j] += bd[j];
  }
  Impl X = x.impl_ptr(), W = weight.impl_ptr(), Bi = bias.defined() ? bias.impl_ptr() : nullptr;
  std::vector<Tensor> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  return Tensor::make_result(out_shape, std::move(out), "linear", inputs,
                             [X, W, Bi, M, N, K](const TensorImpl& o) {
                               const double* g = o.grad.data();
                               if (double* gx = grad_sink(X))
                                 kernels::gemm(false, true, M, K, N, g, W->data.data(), gx, true);
                               if (double* gw = grad_sink(W))
                                 kernels::gemm(true, false, K, N, M, X->data.data(), g, gw, true);
                               if (double* gb = grad_sink(Bi))
                                 for (std::size_t i = 0; i < M; ++i)
                                   for (std::size_t j = 0; j < N; ++j) gb[j] += g[i * N + j];
                             });
}

Tensor conv3d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride,
              std::size_t pad_t, std::size_t pad_hw) {
  const auto& sx = x.shape();
  const auto& sw = weight.shape();
  require(sx.size() == 4, "conv3d: input must be [T,C,H,W], got " + shape_str(sx));
  require(sw.size() == 5 && sw[1] == sx[1],
          "conv3d: weight " + shape_str(sw) + " incompatible with input " + shape_str(sx));
  require(stride >= 1, "conv3d: stride must be >= 1");
  kernels::Conv3dGeometry g;
  g.frames = sx[0];
  g.in_ch = sx[1];
  g.in_h = sx[2];
  g.in_w = sx[3];
  g.out_ch = sw[0];
  g.kt = sw[2];
  g.kh = sw[3];
  g.kw = sw[4];
  g.stride = stride;
  g.pad_t = pad_t;
  g.pad_h = pad_hw;
  g.pad_w = pad_hw;
  require(g.in_h + 2 * pad_hw >= g.kh && g.in_w + 2 * pad_hw >= g.kw,
          "conv3d: kernel " + shape_str(sw) + " larger than padded input " + shape_str(sx));
  require(2 * pad_t + 1 == g.kt, "conv3d: temporal padding must preserve frame count");
  if (bias.defined()) require(bias.numel() == g.out_ch, "conv3d: bias size mismatch");
  Shape out_shape{g.frames, g.out_ch, g.out_h(), g.out_w()};
  std::vector<double> out(shape_numel(out_shape));
  kernels::conv3d_forward(g, x.data().data(), weight.data().data(),
                          bias.defined() ? bias.data().data() : nullptr, out.data());
  Impl X = x.impl_ptr(), W = weight.impl_ptr(), Bi = bias.defined() ? bias.impl_ptr() : nullptr;
  std::vector<Tensor> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  return Tensor::make_result(out_shape, std::move(out), "conv3d", inputs, [X, W, Bi, g](const TensorImpl& o) {
    kernels::conv3d_backward(g, X->data.data(), W->data.data(), o.grad.data(), grad_sink(X), grad_sink(W),
                             grad_sink(Bi));
  });
}

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride, std::size_t pad) {
  const auto& sw = weight.shape();
  require(sw.size() == 4, "conv2d: weight must be [Cout,Cin,kh,kw], got " + shape_str(sw));
  return conv3d(x, reshape(weight, {sw[0], sw[1], 1, sw[2], sw[3]}), bias, stride, 0, pad);
}

Tensor depthwise_conv1d(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  const auto& sx = x.shape();
  const auto& sw = weight.shape();
  require(sx.size() == 3 && sw.size() == 2 && sw[0] == sx[2] && sw[1] % 2 == 1,
          "depthwise_conv1d: input " + shape_str(sx) + " with weight " + shape_str(sw));
  const std::size_t B = sx[0], T = sx[1], D = sx[2], k = sw[1];
  const long half = static_cast<long>(k / 2);
  std::vector<double> out(B * T * D, 0.0);
  const double* xd = x.data().data();
  const double* wd = weight.data().data();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t d = 0; d < D; ++d) {
        double s = bias.defined() ? bias.data()[d] : 0.0;
        for (std::size_t j = 0; j < k; ++j) {
          const long ti = static_cast<long>(t) + static_cast<long>(j) - half;
          if (ti < 0 || ti >= static_cast<long>(T)) continue;
          s += wd[d * k + j] * xd[(b * T + static_cast<std::size_t>(ti)) * D + d];
        }
        out[(b * T + t) * D + d] = s;
      }
  Impl X = x.impl_ptr(), W = weight.impl_ptr(), Bi = bias.defined() ? bias.impl_ptr() : nullptr;
  std::vector<Tensor> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  return Tensor::make_result(sx, std::move(out), "depthwise_conv1d", inputs,
                             [X, W, Bi, B, T, D, k, half](const TensorImpl& o) {
                               const double* g = o.grad.data();
                               double* gx = grad_sink(X);
                               double* gw = grad_sink(W);
                               double* gb = grad_sink(Bi);
                               for (std::size_t b = 0; b < B; ++b)
                                 for (std::size_t t = 0; t < T; ++t)
                                   for (std::size_t d = 0; d < D; ++d) {
                                     const double gv = g[(b * T + t) * D + d];
                                     if (gb) gb[d] += gv;
                                     for (std::size_t j = 0; j < k; ++j) {
                                       const long ti = static_cast<long>(t) + static_cast<long>(j) - half;
                                       if (ti < 0 || ti >= static_cast<long>(T)) continue;
                                       const std::size_t xi = (b * T + static_cast<std::size_t>(ti)) * D + d;
                                       if (gx) gx[xi] += gv * W->data[d * k + j];
                                       if (gw) gw[d * k + j] += gv * X->data[xi];
                                     }
                                   }
                             });
}

Tensor softmax(const Tensor& a, int axis) {
  const auto ax = normalize_axis(axis, a.rank());
  const auto sp = split_at(a.shape(), ax);
  const double* x = a.data().data();
  std::vector<double> out(a.numel());
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t i = 0; i < sp.inner; ++i) {
      const std::size_t base = o * sp.n * sp.inner + i;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < sp.n; ++k) mx = std::max(mx, x[base + k * sp.inner]);
      double z = 0.0;
      for (std::size_t k = 0; k < sp.n; ++k) {
        const double e = std::exp(x[base + k * sp.inner] - mx);
        out[base + k * sp.inner] = e;
        z += e;
      }
      for (std::size_t k = 0; k < sp.n; ++k) out[base + k * sp.inner] /= z;
    }
  Impl A = a.impl_ptr();
  return Tensor::make_result(a.shape(), std::move(out), "softmax", {a}, [A, sp](const TensorImpl& o) {
    double* ga = grad_sink(A);
    if (!ga) return;
    const double* g = o.grad.data();
    const double* y = o.data.data();
    for (std::size_t oo = 0; oo < sp.outer; ++oo)
      for (std::size_t i = 0; i < sp.inner; ++i) {
        const std::size_t base = oo * sp.n * sp.inner + i;
        double dot = 0.0;
        for (std::size_t k = 0; k < sp.n; ++k) dot += g[base + k * sp.inner] * y[base + k * sp.inner];
        for (std::size_t k = 0; k < sp.n; ++k) {
          const std::size_t j = base + k * sp.inner;
          ga[j] += y[j] * (g[j] - dot);
        }
      }
  });
}

Tensor log_softmax(const Tensor& a, int axis) {
  const auto ax = normalize_axis(axis, a.rank());
  const auto sp = split_at(a.shape(), ax);
  const double* x = a.data().data();
  std::vector<double> out(a.numel());
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t i = 0; i < sp.inner; ++i) {
      const std::size_t base = o * sp.n * sp.inner + i;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < sp.n; ++k) mx = std::max(mx, x[base + k * sp.inner]);
      double z = 0.0;
      for (std::size_t k = 0; k < sp.n; ++k) z += std::exp(x[base + k * sp.inner] - mx);
      const double lse = mx + std::log(z);
      for (std::size_t k = 0; k < sp.n; ++k) out[base + k * sp.inner] = x[base + k * sp.inner] - lse;
    }
  Impl A = a.impl_ptr();
  return Tensor::make_result(a.shape(), std::move(out), "log_softmax", {a}, [A, sp](const TensorImpl& o) {
    double* ga = grad_sink(A);
    if (!ga) return;
    const double* g = o.grad.data();
    const double* y = o.data.data();
    for (std::size_t oo = 0; oo < sp.outer; ++oo)
      for (std::size_t i = 0; i < sp.inner; ++i) {
        const std::size_t base = oo * sp.n * sp.inner + i;
        double gs = 0.0;
        for (std::size_t k = 0; k < sp.n; ++k) gs += g[base + k * sp.inner];
        for (std::size_t k = 0; k < sp.n; ++k) {
          const std::size_t j = base + k * sp.inner;
          ga[j] += g[j] - std::exp(y[j]) * gs;
        }
      }
  });
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  Impl A = a.impl_ptr();
  return Tensor::make_result({1}, {s}, "sum", {a}, [A](const TensorImpl& o) {
    if (double* ga = grad_sink(A))
      for (std::size_t i = 0; i < A->data.size(); ++i) ga[i] += o.grad[0];
  });
}

Tensor sum(const Tensor& a, int axis, bool keepdim) {
  const auto ax = normalize_axis(axis, a.rank());
  const auto sp = split_at(a.shape(), ax);
  Shape out_shape = a.shape();
  if (keepdim)
    out_shape[ax] = 1;
  else
    out_shape.erase(out_shape.begin() + static_cast<long>(ax));
  if (out_shape.empty()) out_shape.push_back(1);
  const double* x = a.data().data();
  std::vector<double> out(sp.outer * sp.inner, 0.0);
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t k = 0; k < sp.n; ++k)
      for (std::size_t i = 0; i < sp.inner; ++i) out[o * sp.inner + i] += x[(o * sp.n + k) * sp.inner + i];
  Impl A = a.impl_ptr();
  return Tensor::make_result(out_shape, std::move(out), "sum_axis", {a}, [A, sp](const TensorImpl& o) {
    double* ga = grad_sink(A);
    if (!ga) return;
    for (std::size_t oo = 0; oo < sp.outer; ++oo)
      for (std::size_t k = 0; k < sp.n; ++k)
        for (std::size_t i = 0; i < sp.inner; ++i) ga[(oo * sp.n + k) * sp.inner + i] += o.grad[oo * sp.inner + i];
  });
}

Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.numel())); }

Tensor mean(const Tensor& a, int axis, bool keepdim) {
  const auto ax = normalize_axis(axis, a.rank());
  return scale(sum(a, axis, keepdim), 1.0 / static_cast<double>(a.shape()[ax]));
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  const std::size_t D = x.shape().back();
  const std::size_t rows = x.numel() / D;
  if (gamma.defined()) require(gamma.numel() == D, "layer_norm: gamma size != " + std::to_string(D));
  if (beta.defined()) require(beta.numel() == D, "layer_norm: beta size != " + std::to_string(D));
  const double* xd = x.data().data();
  std::vector<double> xhat(x.numel()), rstd(rows), out(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = xd + r * D;
    double mu = 0.0;
    for (std::size_t j = 0; j < D; ++j) mu += xr[j];
    mu /= static_cast<double>(D);
    double var = 0.0;
    for (std::size_t j = 0; j < D; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<double>(D);
    rstd[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < D; ++j) {
      const double h = (xr[j] - mu) * rstd[r];
      xhat[r * D + j] = h;
      out[r * D + j] = h * (gamma.defined() ? gamma.data()[j] : 1.0) + (beta.defined() ? beta.data()[j] : 0.0);
    }
  }
  Impl X = x.impl_ptr(), G = gamma.defined() ? gamma.impl_ptr() : nullptr, Be = beta.defined() ? beta.impl_ptr() : nullptr;
  std::vector<Tensor> inputs{x};
  if (gamma.defined()) inputs.push_back(gamma);
  if (beta.defined()) inputs.push_back(beta);
  return Tensor::make_result(
      x.shape(), std::move(out), "layer_norm", inputs,
      [X, G, Be, D, rows, xhat = std::move(xhat), rstd = std::move(rstd)](const TensorImpl& o) {
        const double* g = o.grad.data();
        double* gx = grad_sink(X);
        double* gg = grad_sink(G);
        double* gbeta = grad_sink(Be);
        std::vector<double> dh(D);
        for (std::size_t r = 0; r < rows; ++r) {
          const double* gr = g + r * D;
          const double* hr = xhat.data() + r * D;
          if (gg)
            for (std::size_t j = 0; j < D; ++j) gg[j] += gr[j] * hr[j];
          if (gbeta)
            for (std::size_t j = 0; j < D; ++j) gbeta[j] += gr[j];
          if (!gx) continue;
          double m1 = 0.0, m2 = 0.0;
          for (std::size_t j = 0; j < D; ++j) {
            dh[j] = gr[j] * (G ? G->data[j] : 1.0);
            m1 += dh[j];
            m2 += dh[j] * hr[j];
          }
          m1 /= static_cast<double>(D);
          m2 /= static_cast<double>(D);
          for (std::size_t j = 0; j < D; ++j) gx[r * D + j] += rstd[r] * (dh[j] - m1 - hr[j] * m2);
        }
      });
}

Tensor cosine_similarity(const Tensor& a, const Tensor& b, int axis, double eps) {
  auto bc = broadcast(a.shape(), b.shape());
  const auto ax = normalize_axis(axis, bc.out.size());
  const auto sp = split_at(bc.out, ax);
  Shape out_shape = bc.out;
  out_shape.erase(out_shape.begin() + static_cast<long>(ax));
  if (out_shape.empty()) out_shape.push_back(1);
  const double* x = a.data().data();
  const double* y = b.data().data();
  auto off_a = [&bc](std::size_t i) { return bc.same ? i : bc.ia[i]; };
  auto off_b = [&bc](std::size_t i) { return bc.same ? i : bc.ib[i]; };
  const std::size_t rows = sp.outer * sp.inner;
  std::vector<double> out(rows), na(rows), nb(rows);
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t i = 0; i < sp.inner; ++i) {
      double dot = 0.0, sa = 0.0, sb = 0.0;
      for (std::size_t k = 0; k < sp.n; ++k) {
        const std::size_t f = (o * sp.n + k) * sp.inner + i;
        const double xv = x[off_a(f)], yv = y[off_b(f)];
        dot += xv * yv;
        sa += xv * xv;
        sb += yv * yv;
      }
      const std::size_t r = o * sp.inner + i;
      na[r] = std::sqrt(sa);
      nb[r] = std::sqrt(sb);
      out[r] = (na[r] < eps || nb[r] < eps) ? 0.0 : dot / (na[r] * nb[r]);
    }
  Impl A = a.impl_ptr(), B = b.impl_ptr();
  return Tensor::make_result(
      out_shape, std::move(out), "cosine_similarity", {a, b},
      [A, B, bc = std::move(bc), sp, eps, na = std::move(na), nb = std::move(nb)](const TensorImpl& o) {
        double* ga = grad_sink(A);
        double* gb = grad_sink(B);
        const double* x = A->data.data();
        const double* y = B->data.data();
        for (std::size_t oo = 0; oo < sp.outer; ++oo)
          for (std::size_t i = 0; i < sp.inner; ++i) {
            const std::size_t r = oo * sp.inner + i;
            if (na[r] < eps || nb[r] < eps) continue;
            const double g = o.grad[r], s = o.data[r];
            const double inv = 1.0 / (na[r] * nb[r]);
            for (std::size_t k = 0; k < sp.n; ++k) {
              const std::size_t f = (oo * sp.n + k) * sp.inner + i;
              const std::size_t ia = bc.same ? f : bc.ia[f];
              const std::size_t ib = bc.same ? f : bc.ib[f];
              if (ga) ga[ia] += g * (y[ib] * inv - s * x[ia] / (na[r] * na[r]));
              if (gb) gb[ib] += g * (x[ia] * inv - s * y[ib] / (nb[r] * nb[r]));
            }
          }
      });
}

Tensor embedding(const Tensor& table, const std::vector<std::size_t>& ids) {
  require(table.rank() == 2, "embedding: table must be [V,D], got " + shape_str(table.shape()));
  require(!ids.empty(), "embedding: empty id list");
  const std::size_t V = table.dim(0), D = table.dim(1);
  std::vector<double> out(ids.size() * D);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= V) throw ShapeError("embedding: id " + std::to_string(ids[i]) + " >= vocab " + std::to_string(V));
    std::copy_n(table.data().data() + ids[i] * D, D, out.data() + i * D);
  }
  Impl Tb = table.impl_ptr();
  return Tensor::make_result({ids.size(), D}, std::move(out), "embedding", {table}, [Tb, ids, D](const TensorImpl& o) {
    double* gt = grad_sink(Tb);
    if (!gt) return;
    for (std::size_t i = 0; i < ids.size(); ++i)
      for (std::size_t j = 0; j < D; ++j) gt[ids[i] * D + j] += o.grad[i * D + j];
  });
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  require(!parts.empty(), "concat: no inputs");
  const auto ax = normalize_axis(axis, parts[0].rank());
  Shape out_shape = parts[0].shape();
  out_shape[ax] = 0;
  for (const auto& p : parts) {
    require(p.rank() == out_shape.size(), "concat: rank mismatch " + shape_str(p.shape()));
    for (std::size_t d = 0; d < out_shape.size(); ++d)
      if (d != ax)
        require(p.shape()[d] == parts[0].shape()[d],
                "concat: " + shape_str(p.shape()) + " vs " + shape_str(parts[0].shape()) + " off axis " +
                    std::to_string(ax));
    out_shape[ax] += p.shape()[ax];
  }
  const auto sp = split_at(out_shape, ax);
  std::vector<double> out(shape_numel(out_shape));
  std::vector<std::size_t> lens, starts;
  std::size_t start = 0;
  for (const auto& p : parts) {
    const std::size_t len = p.shape()[ax];
    for (std::size_t o = 0; o < sp.outer; ++o)
      std::copy_n(p.data().data() + o * len * sp.inner, len * sp.inner,
                  out.data() + (o * sp.n + start) * sp.inner);
    lens.push_back(len);
    starts.push_back(start);
    start += len;
  }
  std::vector<Impl> impls;
  for (const auto& p : parts) impls.push_back(p.impl_ptr());
  return Tensor::make_result(out_shape, std::move(out), "concat", parts,
                             [impls, lens, starts, sp](const TensorImpl& o) {
                               for (std::size_t p = 0; p < impls.size(); ++p) {
                                 double* gp = grad_sink(impls[p]);
                                 if (!gp) continue;
                                 const std::size_t chunk = lens[p] * sp.inner;
                                 for (std::size_t oo = 0; oo < sp.outer; ++oo) {
                                   const double* src = o.grad.data() + (oo * sp.n + starts[p]) * sp.inner;
                                   double* dst = gp + oo * chunk;
                                   for (std::size_t j = 0; j < chunk; ++j) dst[j] += src[j];
                                 }
                               }
                             });
}

Tensor stack(const std::vector<Tensor>& parts, int axis) {
  require(!parts.empty(), "stack: no inputs");
  const auto ax = normalize_axis(axis, parts[0].rank() + 1);
  std::vector<Tensor> expanded;
  expanded.reserve(parts.size());
  for (const auto& p : parts) {
    Shape s = p.shape();
    s.insert(s.begin() + static_cast<long>(ax), 1);
    expanded.push_back(reshape(p, s));
  }
  return concat(expanded, static_cast<int>(ax));
}

Tensor reshape(const Tensor& a, Shape shape) {
  require(shape_numel(shape) == a.numel(),
          "reshape: " + shape_str(a.shape()) + " to " + shape_str(shape) + " changes element count");
  std::vector<double> out(a.data().begin(), a.data().end());
  Impl A = a.impl_ptr();
  return Tensor::make_result(std::move(shape), std::move(out), "reshape", {a}, [A](const TensorImpl& o) {
    if (double* ga = grad_sink(A))
      for (std::size_t i = 0; i < o.grad.size(); ++i) ga[i] += o.grad[i];
  });
}

Tensor permute(const Tensor& a, const std::vector<std::size_t>& axes) {
  const auto& s = a.shape();
  require(axes.size() == s.size(), "permute: axes count != rank for " + shape_str(s));
  std::vector<std::size_t> in_stride(s.size());
  std::size_t acc = 1;
  for (std::size_t d = s.size(); d-- > 0;) {
    in_stride[d] = acc;
    acc *= s[d];
  }
  Shape out_shape(s.size());
  std::vector<std::size_t> stride(s.size());
  std::vector<bool> used(s.size(), false);
  for (std::size_t d = 0; d < axes.size(); ++d) {
    require(axes[d] < s.size() && !used[axes[d]], "permute: invalid axis list");
    used[axes[d]] = true;
    out_shape[d] = s[axes[d]];
    stride[d] = in_stride[axes[d]];
  }
  const std::size_t n = a.numel();
  std::vector<std::size_t> src(n);
  std::vector<std::size_t> idx(s.size(), 0);
  std::size_t off = 0;
  for (std::size_t i = 0; i < n; ++i) {
    src[i] = off;
    for (std::size_t d = s.size(); d-- > 0;) {
      if (++idx[d] < out_shape[d]) {
        off += stride[d];
        break;
      }
      off -= stride[d] * (idx[d] - 1);
      idx[d] = 0;
    }
  }
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = a.data()[src[i]];
  Impl A = a.impl_ptr();
  return Tensor::make_result(out_shape, std::move(out), "permute", {a}, [A, src = std::move(src)](const TensorImpl& o) {
    if (double* ga = grad_sink(A))
      for (std::size_t i = 0; i < src.size(); ++i) ga[src[i]] += o.grad[i];
  });
}

Tensor slice(const Tensor& a, int axis, std::size_t start, std::size_t length) {
  const auto ax = normalize_axis(axis, a.rank());
  require(length >= 1 && start + length <= a.shape()[ax],
          "slice: [" + std::to_string(start) + "," + std::to_string(start + length) + ") outside axis of size " +
              std::to_string(a.shape()[ax]));
  const auto sp = split_at(a.shape(), ax);
  Shape out_shape = a.shape();
  out_shape[ax] = length;
  std::vector<double> out(sp.outer * length * sp.inner);
  for (std::size_t o = 0; o < sp.outer; ++o)
    std::copy_n(a.data().data() + (o * sp.n + start) * sp.inner, length * sp.inner,
                out.data() + o * length * sp.inner);
  Impl A = a.impl_ptr();
  return Tensor::make_result(out_shape, std::move(out), "slice", {a}, [A, sp, start, length](const TensorImpl& o) {
    double* ga = grad_sink(A);
    if (!ga) return;
    for (std::size_t oo = 0; oo < sp.outer; ++oo) {
      const double* src = o.grad.data() + oo * length * sp.inner;
      double* dst = ga + (oo * sp.n + start) * sp.inner;
      for (std::size_t j = 0; j < length * sp.inner; ++j) dst[j] += src[j];
    }
  });
}

Tensor pick(const Tensor& a, const std::vector<std::size_t>& index) {
  require(a.rank() == 2 && a.dim(0) == index.size(),
          "pick: input " + shape_str(a.shape()) + " with " + std::to_string(index.size()) + " indices");
  const std::size_t C = a.dim(1);
  std::vector<double> out(index.size());
  for (std::size_t m = 0; m < index.size(); ++m) {
    if (index[m] >= C) throw ShapeError("pick: index " + std::to_string(index[m]) + " >= " + std::to_string(C));
    out[m] = a.data()[m * C + index[m]];
  }
  Impl A = a.impl_ptr();
  return Tensor::make_result({index.size()}, std::move(out), "pick", {a}, [A, index, C](const TensorImpl& o) {
    if (double* ga = grad_sink(A))
      for (std::size_t m = 0; m < index.size(); ++m) ga[m * C + index[m]] += o.grad[m];
  });
}

}  // namespace glip
