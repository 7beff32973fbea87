#pragma once

// Straight-line reference computations on plain vectors, used to check the
// tensor graph implementations. Nothing here shares code with src/.

#include <cmath>
#include <vector>

#include "glip/nn/layers.hpp"

namespace glip::oracle {

using Vec = std::vector<double>;
using Mat = std::vector<Vec>;  // rows

inline Vec values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

inline Mat rows(const Tensor& t, std::size_t cols) {
  Mat m;
  const auto d = t.data();
  for (std::size_t i = 0; i < d.size(); i += cols) m.emplace_back(d.begin() + i, d.begin() + i + cols);
  return m;
}

inline Vec softmax(const Vec& x) {
  double mx = -INFINITY;
  for (double v : x) mx = std::max(mx, v);
  Vec e(x.size());
  double z = 0;
  for (std::size_t i = 0; i < x.size(); ++i) z += e[i] = std::exp(x[i] - mx);
  for (double& v : e) v /= z;
  return e;
}

inline Vec layer_norm(const Vec& x, const Tensor& gamma, const Tensor& beta) {
  double mu = 0, var = 0;
  for (double v : x) mu += v;
  mu /= x.size();
  for (double v : x) var += (v - mu) * (v - mu);
  var /= x.size();
  Vec y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = (x[i] - mu) / std::sqrt(var + 1e-5) * gamma[i] + beta[i];
  return y;
}

inline Vec linear(const Vec& x, const nn::Linear& l) {
  const std::size_t in = l.w.dim(0), out = l.w.dim(1);
  Vec y(out, 0.0);
  for (std::size_t j = 0; j < out; ++j) {
    double s = l.b.defined() ? l.b[j] : 0.0;
    for (std::size_t i = 0; i < in; ++i) s += x[i] * l.w[i * out + j];
    y[j] = s;
  }
  return y;
}

inline Vec add(const Vec& a, const Vec& b, double sb = 1.0) {
  Vec y(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) y[i] = a[i] + sb * b[i];
  return y;
}

inline Mat map_rows(const Mat& m, const auto& f) {
  Mat out;
  for (const auto& r : m) out.push_back(f(r));
  return out;
}

/// Multi-head attention; `causal` masks keys after the query position.
inline Mat attention(const Mat& query, const Mat& memory, const nn::MultiHeadAttention& a, bool causal = false) {
  const std::size_t D = query[0].size(), H = a.heads, dh = D / H;
  Mat q = map_rows(query, [&](const Vec& r) { return linear(r, a.q); });
  Mat k = map_rows(memory, [&](const Vec& r) { return linear(r, a.k); });
  Mat v = map_rows(memory, [&](const Vec& r) { return linear(r, a.v); });
  Mat ctx(query.size(), Vec(D, 0.0));
  for (std::size_t i = 0; i < query.size(); ++i)
    for (std::size_t h = 0; h < H; ++h) {
      const std::size_t nk = causal ? i + 1 : memory.size();
      Vec s(nk);
      for (std::size_t j = 0; j < nk; ++j) {
        double dot = 0;
        for (std::size_t d = 0; d < dh; ++d) dot += q[i][h * dh + d] * k[j][h * dh + d];
        s[j] = dot / std::sqrt(static_cast<double>(dh));
      }
      Vec p = softmax(s);
      for (std::size_t j = 0; j < nk; ++j)
        for (std::size_t d = 0; d < dh; ++d) ctx[i][h * dh + d] += p[j] * v[j][h * dh + d];
    }
  return map_rows(ctx, [&](const Vec& r) { return linear(r, a.o); });
}

inline double silu(double x) { return x / (1.0 + std::exp(-x)); }
inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

inline Vec feed_forward(const Vec& x, const nn::FeedForward& f) {
  Vec h = linear(x, f.in);
  for (double& v : h) {
    switch (f.act) {
      case nn::Activation::Relu: v = std::max(0.0, v); break;
      case nn::Activation::Gelu: v = gelu(v); break;
      case nn::Activation::Silu: v = silu(v); break;
    }
  }
  return linear(h, f.out);
}

inline Mat decoder_layer(const Mat& x, const Mat& memory, const nn::DecoderLayer& l, bool causal) {
  Mat s = map_rows(x, [&](const Vec& r) { return layer_norm(r, l.self_norm.gamma, l.self_norm.beta); });
  Mat a = attention(s, s, l.self_attn, causal);
  Mat h;
  for (std::size_t i = 0; i < x.size(); ++i) h.push_back(add(x[i], a[i]));
  Mat c = attention(map_rows(h, [&](const Vec& r) { return layer_norm(r, l.cross_norm.gamma, l.cross_norm.beta); }),
                    memory, l.cross_attn);
  for (std::size_t i = 0; i < h.size(); ++i) h[i] = add(h[i], c[i]);
  for (auto& r : h) r = add(r, feed_forward(layer_norm(r, l.ff_norm.gamma, l.ff_norm.beta), l.ff));
  return h;
}

inline Mat conformer_block(const Mat& x, const nn::ConformerBlock& b) {
  const std::size_t T = x.size(), D = x[0].size();
  auto ln = [](const Vec& r, const nn::LayerNorm& n) { return layer_norm(r, n.gamma, n.beta); };
  Mat h;
  for (const auto& r : x) h.push_back(add(r, feed_forward(ln(r, b.ff1_norm), b.ff1), 0.5));
  Mat a_in = map_rows(h, [&](const Vec& r) { return ln(r, b.attn_norm); });
  Mat a = attention(a_in, a_in, b.attn);
  for (std::size_t t = 0; t < T; ++t) h[t] = add(h[t], a[t]);
  // convolution module
  Mat g(T, Vec(D));
  for (std::size_t t = 0; t < T; ++t) {
    Vec p = linear(ln(h[t], b.conv_norm), b.conv_pointwise_in);
    for (std::size_t d = 0; d < D; ++d) g[t][d] = p[d] / (1.0 + std::exp(-p[D + d]));
  }
  const std::size_t K = b.conv_depthwise_w.dim(1), pad = K / 2;
  Mat dw(T, Vec(D));
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t d = 0; d < D; ++d) {
      double s = b.conv_depthwise_b[d];
      for (std::size_t k = 0; k < K; ++k) {
        const long src = static_cast<long>(t + k) - static_cast<long>(pad);
        if (src >= 0 && src < static_cast<long>(T)) s += b.conv_depthwise_w[d * K + k] * g[src][d];
      }
      dw[t][d] = s;
    }
  for (std::size_t t = 0; t < T; ++t) {
    Vec m = ln(dw[t], b.conv_mid_norm);
    for (double& v : m) v = silu(v);
    h[t] = add(h[t], linear(m, b.conv_pointwise_out));
  }
  for (auto& r : h) r = add(r, feed_forward(ln(r, b.ff2_norm), b.ff2), 0.5);
  return map_rows(h, [&](const Vec& r) { return ln(r, b.final_norm); });
}

}  // namespace glip::oracle
