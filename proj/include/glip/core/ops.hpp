#pragma once

#include <cstddef>
#include <vector>

#include "glip/core/tensor.hpp"

namespace glip {

// Elementwise binaries broadcast with numpy rules (trailing alignment, size-1 stretch).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
/// Throws DomainError when any divisor element is exactly zero.
Tensor div(const Tensor& a, const Tensor& b);

Tensor add_scalar(const Tensor& a, double s);
Tensor scale(const Tensor& a, double s);

Tensor exp(const Tensor& a);
/// Throws DomainError on any nonpositive element.
Tensor log(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor gelu(const Tensor& a);  // erf form
Tensor sigmoid(const Tensor& a);
Tensor silu(const Tensor& a);  // x * sigmoid(x), a.k.a. swish

/// a: [..., M, K] with b: [K, N] (leading dims of a flattened), or batched
/// a: [B, M, K] with b: [B, K, N]. With trans_b, b's last two axes are swapped.
Tensor matmul(const Tensor& a, const Tensor& b, bool trans_b = false);

/// x: [..., in], weight: [in, out], bias: [out] or undefined.
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

/// x: [T, Cin, H, W], weight: [Cout, Cin, kt, kh, kw], bias: [Cout] or undefined.
/// Temporal stride 1; spatial stride and padding symmetric.
Tensor conv3d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride,
              std::size_t pad_t, std::size_t pad_hw);

/// Per-frame 2D convolution, x: [T, Cin, H, W], weight: [Cout, Cin, kh, kw].
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride,
              std::size_t pad);

/// Depthwise convolution along time with "same" zero padding.
/// x: [B, T, D], weight: [D, k] (k odd), bias: [D] or undefined.
Tensor depthwise_conv1d(const Tensor& x, const Tensor& weight, const Tensor& bias);

/// Max-subtracted softmax along `axis` (negative counts from the end).
Tensor softmax(const Tensor& a, int axis);
Tensor log_softmax(const Tensor& a, int axis);

Tensor sum(const Tensor& a);
Tensor sum(const Tensor& a, int axis, bool keepdim = false);
Tensor mean(const Tensor& a);
Tensor mean(const Tensor& a, int axis, bool keepdim = false);

/// Normalizes the last axis; gamma/beta may be undefined for the bare form.
/// A zero-variance row maps to zeros before the affine terms.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

/// Cosine similarity of broadcast a and b along `axis`, which is removed.
/// Rows where either norm is below eps have similarity 0 and no gradient.
Tensor cosine_similarity(const Tensor& a, const Tensor& b, int axis, double eps = 1e-8);

/// table: [V, D]; returns [ids.size(), D].
Tensor embedding(const Tensor& table, const std::vector<std::size_t>& ids);

Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor stack(const std::vector<Tensor>& parts, int axis);
Tensor reshape(const Tensor& a, Shape shape);
Tensor permute(const Tensor& a, const std::vector<std::size_t>& axes);
Tensor slice(const Tensor& a, int axis, std::size_t start, std::size_t length);

/// a: [M, C]; returns [M] with a[m, index[m]].
Tensor pick(const Tensor& a, const std::vector<std::size_t>& index);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(const Tensor& a, double s) { return scale(a, s); }
inline Tensor operator*(double s, const Tensor& a) { return scale(a, s); }

std::size_t normalize_axis(int axis, std::size_t rank);

}  // namespace glip
