#include "glip/nn/layers.hpp"

#include <cmath>
#include <limits>

namespace glip::nn {

Linear Linear::create(ParamStore& ps, const std::string& name, std::size_t in, std::size_t out, Rng& rng,
                      bool bias) {
  Linear l;
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  l.w = ps.uniform(name + ".w", {in, out}, bound, rng);
  if (bias) l.b = ps.zeros(name + ".b", {out});
  return l;
}

LayerNorm LayerNorm::create(ParamStore& ps, const std::string& name, std::size_t dim) {
  return {ps.constant(name + ".gamma", {dim}, 1.0), ps.zeros(name + ".beta", {dim})};
}

MultiHeadAttention MultiHeadAttention::create(ParamStore& ps, const std::string& name, std::size_t dim,
                                              std::size_t heads, Rng& rng) {
  if (heads == 0 || dim % heads != 0)
    throw ShapeError("attention dim " + std::to_string(dim) + " not divisible by " + std::to_string(heads) + " heads");
  MultiHeadAttention m;
  m.q = Linear::create(ps, name + ".q", dim, dim, rng);
  m.k = Linear::create(ps, name + ".k", dim, dim, rng);
  m.v = Linear::create(ps, name + ".v", dim, dim, rng);
  m.o = Linear::create(ps, name + ".o", dim, dim, rng);
  m.heads = heads;
  return m;
}

namespace {

// [B,T,D] -> [B*H, T, D/H]
Tensor split_heads(const Tensor& x, std::size_t heads) {
  const std::size_t B = x.dim(0), T = x.dim(1), D = x.dim(2), dh = D / heads;
  if (heads == 1) return x;
  return reshape(permute(reshape(x, {B, T, heads, dh}), {0, 2, 1, 3}), {B * heads, T, dh});
}

Tensor merge_heads(const Tensor& x, std::size_t batch, std::size_t heads) {
  const std::size_t T = x.dim(1), dh = x.dim(2);
  if (heads == 1) return x;
  return reshape(permute(reshape(x, {batch, heads, T, dh}), {0, 2, 1, 3}), {batch, T, heads * dh});
}

}  // namespace

Tensor MultiHeadAttention::operator()(const Tensor& query, const Tensor& memory, const Tensor& mask,
                                      Tensor* weights) const {
  if (query.rank() != 3 || memory.rank() != 3 || query.dim(0) != memory.dim(0) || query.dim(2) != memory.dim(2))
    throw ShapeError("attention: query " + shape_str(query.shape()) + " vs memory " + shape_str(memory.shape()));
  const std::size_t B = query.dim(0), D = query.dim(2);
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(D / heads));
  Tensor qh = split_heads(q(query), heads);
  Tensor kh = split_heads(k(memory), heads);
  Tensor vh = split_heads(v(memory), heads);
  Tensor scores = scale(matmul(qh, kh, true), inv_scale);
  if (mask.defined()) scores = add(scores, mask);
  Tensor p = softmax(scores, -1);
  if (weights) *weights = p;
  return o(merge_heads(matmul(p, vh), B, heads));
}

Tensor activate(const Tensor& x, Activation act) {
  switch (act) {
    case Activation::Relu:
      return relu(x);
    case Activation::Gelu:
      return gelu(x);
    case Activation::Silu:
      return silu(x);
  }
  return x;
}

FeedForward FeedForward::create(ParamStore& ps, const std::string& name, std::size_t dim, std::size_t hidden,
                                Activation act, Rng& rng) {
  return {Linear::create(ps, name + ".in", dim, hidden, rng), Linear::create(ps, name + ".out", hidden, dim, rng), act};
}

ConformerBlock ConformerBlock::create(ParamStore& ps, const std::string& name, const ConformerConfig& cfg, Rng& rng) {
  const std::size_t D = cfg.dim;
  ConformerBlock b;
  b.ff1_norm = LayerNorm::create(ps, name + ".ff1_norm", D);
  b.ff1 = FeedForward::create(ps, name + ".ff1", D, cfg.ff_mult * D, Activation::Silu, rng);
  b.attn_norm = LayerNorm::create(ps, name + ".attn_norm", D);
  b.attn = MultiHeadAttention::create(ps, name + ".attn", D, cfg.heads, rng);
  b.conv_norm = LayerNorm::create(ps, name + ".conv_norm", D);
  b.conv_pointwise_in = Linear::create(ps, name + ".conv_pw_in", D, 2 * D, rng);
  b.conv_depthwise_w =
      ps.uniform(name + ".conv_dw.w", {D, cfg.conv_kernel}, 1.0 / std::sqrt(static_cast<double>(cfg.conv_kernel)), rng);
  b.conv_depthwise_b = ps.zeros(name + ".conv_dw.b", {D});
  b.conv_mid_norm = LayerNorm::create(ps, name + ".conv_mid_norm", D);
  b.conv_pointwise_out = Linear::create(ps, name + ".conv_pw_out", D, D, rng);
  b.ff2_norm = LayerNorm::create(ps, name + ".ff2_norm", D);
  b.ff2 = FeedForward::create(ps, name + ".ff2", D, cfg.ff_mult * D, Activation::Silu, rng);
  b.final_norm = LayerNorm::create(ps, name + ".final_norm", D);
  return b;
}

Tensor glu_last(const Tensor& x) {
  const std::size_t two_d = x.shape().back();
  if (two_d % 2) throw ShapeError("glu: odd last dimension in " + shape_str(x.shape()));
  const int last = static_cast<int>(x.rank()) - 1;
  return mul(slice(x, last, 0, two_d / 2), sigmoid(slice(x, last, two_d / 2, two_d / 2)));
}

Tensor ConformerBlock::conv_module(const Tensor& x) const {
  Tensor h = glu_last(conv_pointwise_in(conv_norm(x)));
  h = depthwise_conv1d(h, conv_depthwise_w, conv_depthwise_b);
  h = silu(conv_mid_norm(h));
  return conv_pointwise_out(h);
}

Tensor ConformerBlock::operator()(const Tensor& x) const {
  Tensor h = add(x, scale(ff1(ff1_norm(x)), 0.5));
  Tensor a = attn_norm(h);
  h = add(h, attn(a, a));
  h = add(h, conv_module(h));
  h = add(h, scale(ff2(ff2_norm(h)), 0.5));
  return final_norm(h);
}

ConformerEncoder ConformerEncoder::create(ParamStore& ps, const std::string& name, const ConformerConfig& cfg,
                                          Rng& rng) {
  ConformerEncoder e;
  for (std::size_t i = 0; i < cfg.layers; ++i)
    e.blocks.push_back(ConformerBlock::create(ps, name + ".block" + std::to_string(i), cfg, rng));
  return e;
}

Tensor ConformerEncoder::operator()(const Tensor& x) const {
  if (x.rank() != 3) throw ShapeError("conformer: input must be [B,T,D], got " + shape_str(x.shape()));
  Tensor h = x;
  for (const auto& b : blocks) h = b(h);
  return h;
}

DecoderLayer DecoderLayer::create(ParamStore& ps, const std::string& name, std::size_t dim, std::size_t heads,
                                  std::size_t ff_hidden, Rng& rng) {
  DecoderLayer l;
  l.self_norm = LayerNorm::create(ps, name + ".self_norm", dim);
  l.self_attn = MultiHeadAttention::create(ps, name + ".self_attn", dim, heads, rng);
  l.cross_norm = LayerNorm::create(ps, name + ".cross_norm", dim);
  l.cross_attn = MultiHeadAttention::create(ps, name + ".cross_attn", dim, heads, rng);
  l.ff_norm = LayerNorm::create(ps, name + ".ff_norm", dim);
  l.ff = FeedForward::create(ps, name + ".ff", dim, ff_hidden, Activation::Relu, rng);
  return l;
}

Tensor DecoderLayer::operator()(const Tensor& x, const Tensor& memory, const Tensor& self_mask) const {
  Tensor s = self_norm(x);
  Tensor h = add(x, self_attn(s, s, self_mask));
  h = add(h, cross_attn(cross_norm(h), memory));
  return add(h, ff(ff_norm(h)));
}

Tensor causal_mask(std::size_t n) {
  std::vector<double> m(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) m[i * n + j] = -std::numeric_limits<double>::infinity();
  return Tensor::from({n, n}, std::move(m));
}

Tensor sinusoidal_positions(std::size_t n, std::size_t dim) {
  std::vector<double> pe(n * dim);
  for (std::size_t p = 0; p < n; ++p)
    for (std::size_t i = 0; i < dim; ++i) {
      const double freq = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(dim));
      pe[p * dim + i] = (i % 2 == 0) ? std::sin(static_cast<double>(p) * freq) : std::cos(static_cast<double>(p) * freq);
    }
  return Tensor::from({n, dim}, std::move(pe));
}

}  // namespace glip::nn
